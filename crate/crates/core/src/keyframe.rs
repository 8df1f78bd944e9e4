//! Keyframe selection from 2D keypoints.
//!
//! Each frame is scored as
//! `confident fraction × frontality × bounding-box area / image area`,
//! where frontality is `1 − |d_l − d_r| / (d_l + d_r)` for the horizontal
//! distances of the two shoulders from the body center (nose if confident,
//! else the hip midpoint). The best frame wins; ties go to the lowest index.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// COCO-17 keypoint names in their usual order.
pub const COCO_KEYPOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Per-frame named keypoints `[x, y, confidence]` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<BTreeMap<String, [f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeConfig {
    /// Keypoints at or above this confidence count as confident.
    pub confidence_threshold: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub confident_fraction: f64,
    pub frontality: f64,
    pub area_fraction: f64,
    pub score: f64,
}

impl Keypoints2D {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidArgument("keypoint sequence is empty".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            for (name, &[x, y, c]) in f {
                if !(0.0..=1.0).contains(&c) || !x.is_finite() || !y.is_finite() {
                    return Err(Error::InvalidArgument(format!("frame {i}, {name}: bad keypoint")));
                }
                let inside = x >= 0.0 && y >= 0.0 && x <= self.width as f64 && y <= self.height as f64;
                if c > 0.0 && !inside {
                    return Err(Error::InvalidArgument(format!(
                        "frame {i}, {name}: ({x}, {y}) is outside the image but has confidence {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let k: Self = crate::io::read_json(path, "keypoints JSON")?;
        k.validate()?;
        Ok(k)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Every keypoint name used anywhere in the sequence.
    pub fn names(&self) -> BTreeSet<&str> {
        self.frames.iter().flat_map(|f| f.keys().map(String::as_str)).collect()
    }
}

/// Scores one frame; `names` is the full keypoint vocabulary of the sequence.
pub fn score_frame(
    frame: &BTreeMap<String, [f64; 3]>,
    names: usize,
    width: usize,
    height: usize,
    cfg: &KeyframeConfig,
) -> FrameScore {
    let confident = |name: &str| frame.get(name).filter(|k| k[2] >= cfg.confidence_threshold).map(|k| [k[0], k[1]]);
    let pts: Vec<[f64; 2]> = frame.values().filter(|k| k[2] >= cfg.confidence_threshold).map(|k| [k[0], k[1]]).collect();
    let confident_fraction = if names == 0 { 0.0 } else { pts.len() as f64 / names as f64 };

    let center = confident("nose").map(|p| p[0]).or_else(|| {
        let (l, r) = (confident("left_hip")?, confident("right_hip")?);
        Some(0.5 * (l[0] + r[0]))
    });
    let frontality = match (center, confident("left_shoulder"), confident("right_shoulder")) {
        (Some(c), Some(l), Some(r)) => {
            let (dl, dr) = ((l[0] - c).abs(), (r[0] - c).abs());
            if dl + dr > 0.0 {
                1.0 - (dl - dr).abs() / (dl + dr)
            } else {
                0.0
            }
        }
        _ => 0.0,
    };

    let area_fraction = if pts.len() < 2 {
        0.0
    } else {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        ((x1 - x0) * (y1 - y0) / (width * height) as f64).min(1.0)
    };
    FrameScore {
        confident_fraction,
        frontality,
        area_fraction,
        score: confident_fraction * frontality * area_fraction,
    }
}

/// Index of the best-scoring frame, with every frame's score.
pub fn select_keyframe(kps: &Keypoints2D, cfg: &KeyframeConfig) -> Result<(usize, Vec<FrameScore>)> {
    kps.validate()?;
    if kps.frames.iter().all(|f| f.values().all(|k| k[2] == 0.0)) {
        return Err(Error::NoUsableFrame);
    }
    let names = kps.names().len();
    let scores: Vec<FrameScore> = kps.frames.iter().map(|f| score_frame(f, names, kps.width, kps.height, cfg)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.score > scores[best].score {
            best = i;
        }
    }
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(points: &[(&str, f64, f64, f64)]) -> BTreeMap<String, [f64; 3]> {
        points.iter().map(|&(n, x, y, c)| (n.to_string(), [x, y, c])).collect()
    }

    fn upright(shift: f64, conf: f64) -> BTreeMap<String, [f64; 3]> {
        frame(&[
            ("nose", 50.0, 20.0, conf),
            ("left_shoulder", 70.0, 40.0, conf),
            ("right_shoulder", 30.0 + shift, 40.0, conf),
            ("left_hip", 60.0, 80.0, conf),
            ("right_hip", 40.0, 80.0, conf),
        ])
    }

    fn seq(frames: Vec<BTreeMap<String, [f64; 3]>>) -> Keypoints2D {
        Keypoints2D {
            width: 100,
            height: 100,
            frames,
        }
    }

    #[test]
    fn single_frame_is_chosen() {
        assert_eq!(select_keyframe(&seq(vec![upright(0.0, 1.0)]), &KeyframeConfig::default()).unwrap().0, 0);
    }

    #[test]
    fn ties_go_to_the_first_frame() {
        let s = seq(vec![upright(0.0, 1.0), upright(0.0, 1.0)]);
        assert_eq!(select_keyframe(&s, &KeyframeConfig::default()).unwrap().0, 0);
    }

    #[test]
    fn confident_symmetric_frame_wins() {
        let mut frames: Vec<_> = (0..8).map(|i| upright(2.0 + i as f64, 1.0)).collect();
        frames[3] = upright(0.0, 0.4);
        frames[5] = upright(0.0, 1.0);
        frames[6].get_mut("nose").unwrap()[2] = 0.0;
        let (best, scores) = select_keyframe(&seq(frames), &KeyframeConfig::default()).unwrap();
        assert_eq!(best, 5);
        // hand-evaluated: all five confident, equal shoulder offsets, box 40×60 of 100×100
        assert_eq!(scores[5].frontality, 1.0);
        assert!((scores[5].score - 0.24).abs() < 1e-12);
        // frame 0: shoulders at 70 and 32 around 50 → 1 − 2/38
        assert!((scores[0].frontality - (1.0 - 2.0 / 38.0)).abs() < 1e-12);
    }

    #[test]
    fn hip_midpoint_stands_in_for_the_nose() {
        let mut f = upright(0.0, 1.0);
        f.get_mut("nose").unwrap()[2] = 0.0;
        let s = score_frame(&f, 5, 100, 100, &KeyframeConfig::default());
        assert_eq!(s.frontality, 1.0);
        assert_eq!(s.confident_fraction, 0.8);
    }

    #[test]
    fn all_zero_confidence_is_an_error() {
        let s = seq(vec![upright(0.0, 0.0), upright(3.0, 0.0)]);
        assert!(matches!(select_keyframe(&s, &KeyframeConfig::default()), Err(Error::NoUsableFrame)));
    }

    #[test]
    fn out_of_image_confident_point_is_rejected() {
        let s = seq(vec![frame(&[("nose", 150.0, 20.0, 0.9)])]);
        assert!(select_keyframe(&s, &KeyframeConfig::default()).is_err());
        let ok = seq(vec![frame(&[("nose", 150.0, 20.0, 0.0), ("left_hip", 1.0, 1.0, 1.0)])]);
        assert!(select_keyframe(&ok, &KeyframeConfig::default()).is_ok());
    }
}
