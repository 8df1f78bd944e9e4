//! Row-major 2D grids used for every image-like map.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Mask = Grid<bool>;
/// Per-pixel depth; `+inf` marks background.
pub type DepthMap = Grid<f64>;
pub type NormalMap = Grid<[f64; 3]>;
/// RGB in `[0, 1]`.
pub type ColorImage = Grid<[f64; 3]>;

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    /// Horizontally mirrored copy (column `x` becomes `width - 1 - x`).
    pub fn mirror_x(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width.max(1)) {
            data.extend(row.iter().rev().cloned());
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`, matching image-shape conventions.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Intersection-over-union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }
}

/// Bilinear lookup at continuous pixel coordinates, where pixel `(i, j)`
/// has its center at `(i + 0.5, j + 0.5)`. Coordinates are clamped to the
/// image.
pub fn sample_bilinear(img: &ColorImage, u: f64, v: f64) -> [f64; 3] {
    let w = img.width();
    let h = img.height();
    let fx = (u - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = fx - x0 as f64;
    let ay = fy - y0 as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(x0, y0)[c] * (1.0 - ax) + img.get(x1, y0)[c] * ax;
        let bot = img.get(x0, y1)[c] * (1.0 - ax) + img.get(x1, y1)[c] * ax;
        *o = top * (1.0 - ay) + bot * ay;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_is_involution() {
        let g = Grid::from_fn(5, 3, |x, y| x * 10 + y);
        assert_eq!(*g.mirror_x().get(0, 1), 41);
        assert_eq!(g.mirror_x().mirror_x(), g);
    }

    #[test]
    fn bilinear_at_center_is_exact() {
        let img = Grid::from_fn(4, 4, |x, y| [x as f64, y as f64, 0.25]);
        assert_eq!(sample_bilinear(&img, 2.5, 1.5), [2.0, 1.0, 0.25]);
        let mid = sample_bilinear(&img, 2.0, 1.5);
        assert!((mid[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn iou_and_bbox() {
        let a = Grid::from_fn(4, 4, |x, _| x < 2);
        let b = Grid::from_fn(4, 4, |x, _| x < 1);
        assert!((a.iou(&b) - 0.5).abs() < 1e-12);
        assert_eq!(a.bbox(), Some((0, 0, 1, 3)));
        assert_eq!(Grid::new(3, 3, false).bbox(), None);
    }
}
