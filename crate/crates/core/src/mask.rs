//! Rectangular agnostic masks.
//!
//! Per frame: bounding box of the garment mask, grown by a margin, unioned
//! with the boxes of the frames in a temporal window, then filled and
//! stripped of the keep regions (face, hands). Output `true` marks pixels to
//! inpaint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ColorImage, Grid, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    /// Dilation of the garment box, in pixels.
    pub margin: usize,
    /// Frames in the temporal union; frame `i` covers
    /// `[i − (window − 1) / 2, i + window / 2]`.
    pub window: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { margin: 8, window: 5 }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn union(&self, o: &Rect) -> Rect {
        Rect {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    /// Grown by `m` on every side, clipped to a `w × h` image.
    pub fn dilate(&self, m: usize, w: usize, h: usize) -> Rect {
        Rect {
            x0: self.x0.saturating_sub(m),
            y0: self.y0.saturating_sub(m),
            x1: (self.x1 + m).min(w - 1),
            y1: (self.y1 + m).min(h - 1),
        }
    }

    pub fn fill(&self, w: usize, h: usize) -> Mask {
        Grid::from_fn(w, h, |x, y| self.contains(x, y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectMasks {
    /// Per-frame rectangle before keep regions are removed.
    pub rects: Vec<Rect>,
    pub masks: Vec<Mask>,
    /// Frames whose garment mask was empty and borrowed a neighbor's box.
    pub borrowed: Vec<usize>,
}

/// Builds one agnostic mask per frame. `keep` may be empty (nothing kept) or
/// hold one mask per frame.
pub fn rect_mask(garment: &[Mask], keep: &[Mask], cfg: &MaskConfig) -> Result<RectMasks> {
    let Some(first) = garment.first() else {
        return Err(Error::InvalidArgument("no garment masks".into()));
    };
    if cfg.window == 0 {
        return Err(Error::InvalidArgument("temporal window must be at least 1".into()));
    }
    for g in garment {
        g.ensure_same_dims(first, "garment masks")?;
    }
    if !keep.is_empty() {
        if keep.len() != garment.len() {
            return Err(Error::ShapeMismatch(format!("{} keep masks for {} frames", keep.len(), garment.len())));
        }
        for k in keep {
            k.ensure_same_dims(first, "keep mask vs garment mask")?;
        }
    }
    let (h, w) = first.dims();
    let n = garment.len();
    let own: Vec<Option<Rect>> = garment
        .iter()
        .map(|g| g.bbox().map(|(x0, y0, x1, y1)| Rect { x0, y0, x1, y1 }.dilate(cfg.margin, w, h)))
        .collect();
    if own.iter().all(Option::is_none) {
        return Err(Error::EmptyGarmentMask);
    }
    let mut borrowed = Vec::new();
    let boxes: Vec<Rect> = (0..n)
        .map(|i| {
            own[i].unwrap_or_else(|| {
                borrowed.push(i);
                (1..n)
                    .find_map(|d| {
                        let before = i.checked_sub(d).and_then(|j| own[j]);
                        before.or_else(|| own.get(i + d).copied().flatten())
                    })
                    .expect("some frame is non-empty")
            })
        })
        .collect();
    let rects: Vec<Rect> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub((cfg.window - 1) / 2);
            let hi = (i + cfg.window / 2).min(n - 1);
            boxes[lo..=hi].iter().skip(1).fold(boxes[lo], |acc, b| acc.union(b))
        })
        .collect();
    let masks = rects
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut m = r.fill(w, h);
            if let Some(k) = keep.get(i) {
                for (o, &kv) in m.data_mut().iter_mut().zip(k.data()) {
                    *o &= !kv;
                }
            }
            m
        })
        .collect();
    Ok(RectMasks { rects, masks, borrowed })
}

/// Clothing-agnostic frame: the source outside the mask, zero inside.
pub fn agnostic_frame(frame: &ColorImage, mask: &Mask) -> Result<ColorImage> {
    frame.ensure_same_dims(mask, "frame vs mask")?;
    let mut out = frame.clone();
    for (p, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        if m {
            *p = [0.0; 3];
        }
    }
    Ok(out)
}
