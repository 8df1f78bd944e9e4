//! Small geometric helpers on top of nalgebra.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rigid or affine transform `x -> linear * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub linear: Mat3,
    pub offset: Vec3,
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            linear: Mat3::identity(),
            offset: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.linear * p + self.offset
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &Affine) -> Affine {
        Affine {
            linear: self.linear * other.linear,
            offset: self.linear * other.offset + self.offset,
        }
    }

    pub fn scaled(&self, w: f64) -> Affine {
        Affine {
            linear: self.linear * w,
            offset: self.offset * w,
        }
    }

    pub fn add(&self, other: &Affine) -> Affine {
        Affine {
            linear: self.linear + other.linear,
            offset: self.offset + other.offset,
        }
    }

    pub fn zero() -> Affine {
        Affine {
            linear: Mat3::zeros(),
            offset: Vec3::zeros(),
        }
    }

    pub fn try_inverse(&self) -> Option<Affine> {
        let inv = self.linear.try_inverse()?;
        Some(Affine {
            linear: inv,
            offset: -(inv * self.offset),
        })
    }
}

/// Axis-angle to rotation matrix (Rodrigues). The angle is the vector norm.
pub fn rodrigues(aa: &Vec3) -> Mat3 {
    let angle = aa.norm();
    if angle < 1e-12 {
        // first-order expansion keeps tiny rotations smooth
        return Mat3::identity() + skew(aa);
    }
    let k = aa / angle;
    let kx = skew(&k);
    Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn to_vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn from_vec3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Maps a unit normal to an RGB color, `(n + 1) / 2`.
pub fn normal_to_color(n: &Vec3) -> [f64; 3] {
    [(n.x + 1.0) * 0.5, (n.y + 1.0) * 0.5, (n.z + 1.0) * 0.5]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let p = r * Vec3::new(1.0, 0.0, 0.0);
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_inverse_roundtrip() {
        let a = Affine {
            linear: rodrigues(&Vec3::new(0.3, -0.2, 0.9)) * 1.5,
            offset: Vec3::new(1.0, 2.0, -3.0),
        };
        let p = Vec3::new(0.4, -0.1, 2.0);
        let q = a.try_inverse().unwrap().apply(&a.apply(&p));
        assert!((p - q).norm() < 1e-12);
    }

    #[test]
    fn normal_color_of_plus_z() {
        assert_eq!(normal_to_color(&Vec3::new(0.0, 0.0, 1.0)), [0.5, 0.5, 1.0]);
    }
}
