//! Parametric skinned humanoid.
//!
//! A body is a template mesh deformed by linear shape and pose blendshapes
//! and posed by linear blend skinning over a kinematic tree:
//!
//! ```text
//! T_p(β, θ) = T̄ + B_s(β) + B_p(θ)
//! M(β, θ)   = LBS(T_p, J(β), θ, W)
//! ```
//!
//! Real SMPL-style assets can be converted offline into the JSON container
//! read by [`ParametricBody::read_json`]; [`make_toy_body`] generates a
//! deterministic capsule-limb humanoid for tests and fixtures.
//!
//! Coordinates: x to the subject's left (image right), y down, z away from
//! the front camera. Units are meters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{rodrigues, to_vec3, Affine, Mat3, Vec3};
use crate::mesh::Mesh;
use crate::par;

const WEIGHT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricBody {
    template: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    shape_count: usize,
    /// `V × 3 × S`, row-major.
    shape_dirs: Vec<f64>,
    pose_count: usize,
    /// `V × 3 × P`, row-major; `P` is 0 or `9 (J - 1)`.
    pose_dirs: Vec<f64>,
    /// `J × V`, row-major.
    joint_regressor: Vec<f64>,
    parent: Vec<Option<usize>>,
    /// `V × J`, row-major.
    blend_weights: Vec<f64>,
    joint_names: Vec<String>,
}

/// Shape, pose, translation and weak-perspective camera scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub beta: Vec<f64>,
    /// Per-joint axis-angle rotations in radians.
    pub theta: Vec<[f64; 3]>,
    pub trans: [f64; 3],
    /// Pixels per meter.
    pub cam_scale: f64,
}

impl BodyParams {
    pub fn zeros(shape_count: usize, joint_count: usize, cam_scale: f64) -> Self {
        Self {
            beta: vec![0.0; shape_count],
            theta: vec![[0.0; 3]; joint_count],
            trans: [0.0; 3],
            cam_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.beta.iter().all(|v| v.is_finite())
            && self.theta.iter().flatten().all(|v| v.is_finite())
            && self.trans.iter().all(|v| v.is_finite())
            && self.cam_scale.is_finite();
        if !finite {
            return Err(Error::NonFinite("body params"));
        }
        if self.cam_scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cam_scale must be positive, got {}",
                self.cam_scale
            )));
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text).map_err(|e| Error::format("params JSON", path, e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// On-disk layout of a body file. Arrays are flat and row-major.
#[derive(Debug, Serialize, Deserialize)]
struct BodyFile {
    vertex_count: usize,
    joint_count: usize,
    shape_count: usize,
    pose_count: usize,
    template_vertices: Vec<f64>,
    faces: Vec<u32>,
    shape_dirs: Vec<f64>,
    pose_dirs: Vec<f64>,
    joint_regressor: Vec<f64>,
    /// `-1` marks the root.
    parent: Vec<i64>,
    blend_weights: Vec<f64>,
    #[serde(default)]
    joint_names: Vec<String>,
}

/// Raw arrays for [`ParametricBody::new`].
#[derive(Debug, Clone, Default)]
pub struct BodyArrays {
    pub template: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub shape_count: usize,
    pub shape_dirs: Vec<f64>,
    pub pose_count: usize,
    pub pose_dirs: Vec<f64>,
    pub joint_regressor: Vec<f64>,
    pub parent: Vec<Option<usize>>,
    pub blend_weights: Vec<f64>,
    pub joint_names: Vec<String>,
}

impl ParametricBody {
    pub fn new(a: BodyArrays) -> Result<Self> {
        let v = a.template.len();
        let j = a.parent.len();
        let bad = |m: String| Err(Error::InvalidBody(m));
        if j == 0 {
            return bad("no joints".into());
        }
        if a.shape_dirs.len() != v * 3 * a.shape_count {
            return bad(format!("shape_dirs has {} values, expected {}", a.shape_dirs.len(), v * 3 * a.shape_count));
        }
        if a.pose_count != 0 && a.pose_count != 9 * (j - 1) {
            return bad(format!("pose_count must be 0 or {}, got {}", 9 * (j - 1), a.pose_count));
        }
        if a.pose_dirs.len() != v * 3 * a.pose_count {
            return bad(format!("pose_dirs has {} values, expected {}", a.pose_dirs.len(), v * 3 * a.pose_count));
        }
        if a.joint_regressor.len() != j * v {
            return bad("joint_regressor must be J×V".into());
        }
        if a.blend_weights.len() != v * j {
            return bad("blend_weights must be V×J".into());
        }
        if a.faces.iter().flatten().any(|&i| i as usize >= v) {
            return bad("face index out of range".into());
        }
        let all_finite = a.template.iter().all(|p| p.iter().all(|x| x.is_finite()))
            && a.shape_dirs.iter().chain(&a.pose_dirs).all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("body arrays"));
        }
        // single rooted tree with parents preceding children
        if a.parent[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (i, p) in a.parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return bad(format!("joint {i} needs a parent with a smaller index")),
            }
        }
        for row in a.blend_weights.chunks(j) {
            if row.iter().any(|&w| !(w >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL {
                return bad("blend weight rows must be nonnegative and sum to 1".into());
            }
        }
        if v > 0 {
            for row in a.joint_regressor.chunks(v) {
                if row.iter().any(|&w| !(w >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL {
                    return bad("joint regressor rows must be nonnegative and sum to 1".into());
                }
            }
        }
        let joint_names = if a.joint_names.len() == j {
            a.joint_names
        } else {
            (0..j).map(|i| format!("joint_{i}")).collect()
        };
        Ok(Self {
            template: a.template,
            faces: a.faces,
            shape_count: a.shape_count,
            shape_dirs: a.shape_dirs,
            pose_count: a.pose_count,
            pose_dirs: a.pose_dirs,
            joint_regressor: a.joint_regressor,
            parent: a.parent,
            blend_weights: a.blend_weights,
            joint_names,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    pub fn shape_count(&self) -> usize {
        self.shape_count
    }

    pub fn pose_count(&self) -> usize {
        self.pose_count
    }

    pub fn template(&self) -> &[Vec3] {
        &self.template
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn blend_weights_row(&self, v: usize) -> &[f64] {
        let j = self.joint_count();
        &self.blend_weights[v * j..(v + 1) * j]
    }

    pub fn joint_regressor_row(&self, j: usize) -> &[f64] {
        let v = self.vertex_count();
        &self.joint_regressor[j * v..(j + 1) * v]
    }

    pub fn zero_params(&self, cam_scale: f64) -> BodyParams {
        BodyParams::zeros(self.shape_count, self.joint_count(), cam_scale)
    }

    /// Checks that `params` fits this body.
    pub fn check_params(&self, params: &BodyParams) -> Result<()> {
        params.validate()?;
        if params.beta.len() != self.shape_count {
            return Err(Error::ShapeMismatch(format!(
                "beta has {} coefficients, body has {}",
                params.beta.len(),
                self.shape_count
            )));
        }
        if params.theta.len() != self.joint_count() {
            return Err(Error::ShapeMismatch(format!(
                "theta has {} joints, body has {}",
                params.theta.len(),
                self.joint_count()
            )));
        }
        Ok(())
    }

    /// Shape displacement `B_s(β)` of one vertex.
    #[inline]
    pub fn shape_offset(&self, v: usize, beta: &[f64]) -> Vec3 {
        let s = self.shape_count;
        let base = v * 3 * s;
        let mut out = Vec3::zeros();
        for axis in 0..3 {
            let dirs = &self.shape_dirs[base + axis * s..base + (axis + 1) * s];
            out[axis] = dirs.iter().zip(beta).map(|(d, b)| d * b).sum();
        }
        out
    }

    /// Pose displacement `B_p(θ)` of one vertex given the pose feature.
    #[inline]
    fn pose_offset(&self, v: usize, feature: &[f64]) -> Vec3 {
        let p = self.pose_count;
        if p == 0 {
            return Vec3::zeros();
        }
        let base = v * 3 * p;
        let mut out = Vec3::zeros();
        for axis in 0..3 {
            let dirs = &self.pose_dirs[base + axis * p..base + (axis + 1) * p];
            out[axis] = dirs.iter().zip(feature).map(|(d, f)| d * f).sum();
        }
        out
    }

    /// Pose feature: `(R_j - I)` flattened for every non-root joint.
    pub fn pose_feature(&self, theta: &[[f64; 3]]) -> Vec<f64> {
        if self.pose_count == 0 {
            return Vec::new();
        }
        let mut f = Vec::with_capacity(self.pose_count);
        for aa in theta.iter().skip(1) {
            let r = rodrigues(&to_vec3(*aa)) - Mat3::identity();
            for row in 0..3 {
                for col in 0..3 {
                    f.push(r[(row, col)]);
                }
            }
        }
        f
    }

    /// `T̄ + B_s(β)`.
    pub fn shaped_vertices(&self, beta: &[f64]) -> Result<Vec<Vec3>> {
        if beta.len() != self.shape_count {
            return Err(Error::ShapeMismatch(format!(
                "beta has {} coefficients, body has {}",
                beta.len(),
                self.shape_count
            )));
        }
        Ok(self
            .template
            .iter()
            .enumerate()
            .map(|(v, t)| t + self.shape_offset(v, beta))
            .collect())
    }

    /// Per-vertex blendshape displacement `B_s(β) + B_p(θ)`.
    pub fn blend_offsets(&self, beta: &[f64], theta: &[[f64; 3]]) -> Vec<Vec3> {
        let feature = self.pose_feature(theta);
        (0..self.vertex_count())
            .map(|v| self.shape_offset(v, beta) + self.pose_offset(v, &feature))
            .collect()
    }

    /// Joint locations `J(β)` = regressor × shaped template.
    pub fn regress_joints(&self, beta: &[f64]) -> Result<Vec<Vec3>> {
        let shaped = self.shaped_vertices(beta)?;
        Ok(self.regress_from(&shaped))
    }

    fn regress_from(&self, verts: &[Vec3]) -> Vec<Vec3> {
        (0..self.joint_count())
            .map(|j| {
                self.joint_regressor_row(j)
                    .iter()
                    .zip(verts)
                    .filter(|(w, _)| **w != 0.0)
                    .fold(Vec3::zeros(), |acc, (w, p)| acc + p * *w)
            })
            .collect()
    }

    /// Skinning transforms `A_j = G_j · [I | -J_j]` mapping rest-pose
    /// (shaped) positions to posed positions, before translation.
    ///
    /// Posed joint positions are tracked as displacements from the rest
    /// joints, so the zero pose yields exact identities.
    pub fn joint_transforms(&self, joints: &[Vec3], theta: &[[f64; 3]]) -> Vec<Affine> {
        let n = self.joint_count();
        let mut rot: Vec<Mat3> = Vec::with_capacity(n);
        let mut disp: Vec<Vec3> = Vec::with_capacity(n);
        for j in 0..n {
            let local_rot = rodrigues(&to_vec3(theta[j]));
            match self.parent[j] {
                None => {
                    rot.push(local_rot);
                    disp.push(Vec3::zeros());
                }
                Some(p) => {
                    let bone = joints[j] - joints[p];
                    disp.push(disp[p] + (rot[p] - Mat3::identity()) * bone);
                    rot.push(rot[p] * local_rot);
                }
            }
        }
        rot.iter()
            .zip(&disp)
            .zip(joints)
            .map(|((r, d), jp)| Affine {
                linear: *r,
                offset: (jp - r * jp) + d,
            })
            .collect()
    }

    /// Same model with a different rest template.
    pub fn with_template(&self, template: Vec<Vec3>) -> Result<Self> {
        Self::new(BodyArrays {
            template,
            faces: self.faces.clone(),
            shape_count: self.shape_count,
            shape_dirs: self.shape_dirs.clone(),
            pose_count: self.pose_count,
            pose_dirs: self.pose_dirs.clone(),
            joint_regressor: self.joint_regressor.clone(),
            parent: self.parent.clone(),
            blend_weights: self.blend_weights.clone(),
            joint_names: self.joint_names.clone(),
        })
    }

    /// Posed joint locations, including translation.
    pub fn posed_joints(&self, params: &BodyParams) -> Result<Vec<Vec3>> {
        self.check_params(params)?;
        let joints = self.regress_joints(&params.beta)?;
        let trans = to_vec3(params.trans);
        Ok(self
            .joint_transforms(&joints, &params.theta)
            .iter()
            .zip(&joints)
            .map(|(a, j)| a.apply(j) + trans)
            .collect())
    }

    /// Joint transforms for a full parameter set (joints regressed from `β`).
    pub fn posed_transforms(&self, params: &BodyParams) -> Result<Vec<Affine>> {
        self.check_params(params)?;
        Ok(self.joint_transforms(&self.regress_joints(&params.beta)?, &params.theta))
    }

    /// Blend of joint transforms with the given weight row, accumulated as
    /// `I + Σ w_j (A_j - I)` so identity transforms blend to exactly `I`.
    #[inline]
    pub fn blend_transform(transforms: &[Affine], weights: &[f64]) -> Affine {
        let mut m = Affine::identity();
        for (a, &w) in transforms.iter().zip(weights) {
            if w != 0.0 {
                m.linear += (a.linear - Mat3::identity()) * w;
                m.offset += a.offset * w;
            }
        }
        m
    }

    /// Posed vertices: LBS of `T̄ + B_s(β) + B_p(θ)` plus translation.
    pub fn skin_vertices(&self, params: &BodyParams) -> Result<Vec<Vec3>> {
        self.check_params(params)?;
        let feature = self.pose_feature(&params.theta);
        let shaped = self.shaped_vertices(&params.beta)?;
        let joints = self.regress_from(&shaped);
        let transforms = self.joint_transforms(&joints, &params.theta);
        let trans = to_vec3(params.trans);
        Ok(shaped
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let rest = p + self.pose_offset(v, &feature);
                Self::blend_transform(&transforms, self.blend_weights_row(v)).apply(&rest) + trans
            })
            .collect())
    }

    /// Posed mesh with per-vertex rest correspondence.
    pub fn skin(&self, params: &BodyParams) -> Result<Mesh> {
        Ok(Mesh::new(self.skin_vertices(params)?, self.faces.clone()))
    }

    /// Skins many frames, in parallel when enabled.
    pub fn skin_batch(&self, frames: &[BodyParams]) -> Result<Vec<Mesh>> {
        par::map_slice(frames, |p| self.skin(p)).into_iter().collect()
    }

    /// Hex SHA-256 over the body's numeric content.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let put_usize = |h: &mut Sha256, x: usize| h.update((x as u64).to_le_bytes());
        put_usize(&mut h, self.vertex_count());
        put_usize(&mut h, self.joint_count());
        put_usize(&mut h, self.shape_count);
        put_usize(&mut h, self.pose_count);
        for p in &self.template {
            for x in p.iter() {
                h.update(x.to_le_bytes());
            }
        }
        for f in &self.faces {
            for i in f {
                h.update(i.to_le_bytes());
            }
        }
        for arr in [&self.shape_dirs, &self.pose_dirs, &self.joint_regressor, &self.blend_weights] {
            for x in arr.iter() {
                h.update(x.to_le_bytes());
            }
        }
        for p in &self.parent {
            h.update(p.map_or(-1i64, |p| p as i64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = BodyFile {
            vertex_count: self.vertex_count(),
            joint_count: self.joint_count(),
            shape_count: self.shape_count,
            pose_count: self.pose_count,
            template_vertices: self.template.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
            faces: self.faces.iter().flatten().copied().collect(),
            shape_dirs: self.shape_dirs.clone(),
            pose_dirs: self.pose_dirs.clone(),
            joint_regressor: self.joint_regressor.clone(),
            parent: self.parent.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            blend_weights: self.blend_weights.clone(),
            joint_names: self.joint_names.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let f: BodyFile = serde_json::from_str(text)?;
        if f.template_vertices.len() != f.vertex_count * 3
            || !f.faces.len().is_multiple_of(3)
            || f.parent.len() != f.joint_count
        {
            return Err(Error::InvalidBody("array lengths disagree with counts".into()));
        }
        let parent = f
            .parent
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        Self::new(BodyArrays {
            template: f.template_vertices.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            faces: f.faces.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            shape_count: f.shape_count,
            shape_dirs: f.shape_dirs,
            pose_count: f.pose_count,
            pose_dirs: f.pose_dirs,
            joint_regressor: f.joint_regressor,
            parent,
            blend_weights: f.blend_weights,
            joint_names: f.joint_names,
        })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Json(j) => Error::format("body JSON", path, j.to_string()),
            other => other,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Toy humanoid

/// Girth direction: meters of radial growth per unit coefficient.
pub const TOY_GIRTH_PER_UNIT: f64 = 0.02;
/// Height direction: relative vertical stretch about the pelvis per unit.
pub const TOY_HEIGHT_PER_UNIT: f64 = 0.06;
/// Width direction: relative horizontal stretch about the pelvis per unit.
pub const TOY_WIDTH_PER_UNIT: f64 = 0.06;
pub const TOY_SHAPE_COUNT: usize = 3;
pub const SHAPE_GIRTH: usize = 0;
pub const SHAPE_HEIGHT: usize = 1;
pub const SHAPE_WIDTH: usize = 2;

const RINGS_PER_SEGMENT: usize = 5;

struct JointSpec {
    name: &'static str,
    parent: i32,
    pos: [f64; 3],
    /// Radius of the limb ending at this joint.
    radius: f64,
}

// SMPL joint ordering (first 24), A-pose, y down, z away from the camera.
const SKELETON: [JointSpec; 24] = [
    JointSpec { name: "pelvis", parent: -1, pos: [0.0, 0.0, 0.0], radius: 0.0 },
    JointSpec { name: "left_hip", parent: 0, pos: [0.09, 0.08, 0.0], radius: 0.085 },
    JointSpec { name: "right_hip", parent: 0, pos: [-0.09, 0.08, 0.0], radius: 0.085 },
    JointSpec { name: "spine1", parent: 0, pos: [0.0, -0.12, 0.0], radius: 0.12 },
    JointSpec { name: "left_knee", parent: 1, pos: [0.10, 0.47, 0.0], radius: 0.072 },
    JointSpec { name: "right_knee", parent: 2, pos: [-0.10, 0.47, 0.0], radius: 0.072 },
    JointSpec { name: "spine2", parent: 3, pos: [0.0, -0.25, 0.0], radius: 0.125 },
    JointSpec { name: "left_ankle", parent: 4, pos: [0.10, 0.87, 0.0], radius: 0.055 },
    JointSpec { name: "right_ankle", parent: 5, pos: [-0.10, 0.87, 0.0], radius: 0.055 },
    JointSpec { name: "spine3", parent: 6, pos: [0.0, -0.38, 0.0], radius: 0.13 },
    JointSpec { name: "left_foot", parent: 7, pos: [0.10, 0.93, -0.10], radius: 0.045 },
    JointSpec { name: "right_foot", parent: 8, pos: [-0.10, 0.93, -0.10], radius: 0.045 },
    JointSpec { name: "neck", parent: 9, pos: [0.0, -0.52, 0.0], radius: 0.07 },
    JointSpec { name: "left_collar", parent: 9, pos: [0.07, -0.47, 0.0], radius: 0.07 },
    JointSpec { name: "right_collar", parent: 9, pos: [-0.07, -0.47, 0.0], radius: 0.07 },
    JointSpec { name: "head", parent: 12, pos: [0.0, -0.62, 0.0], radius: 0.055 },
    JointSpec { name: "left_shoulder", parent: 13, pos: [0.18, -0.47, 0.0], radius: 0.065 },
    JointSpec { name: "right_shoulder", parent: 14, pos: [-0.18, -0.47, 0.0], radius: 0.065 },
    JointSpec { name: "left_elbow", parent: 16, pos: [0.38, -0.27, 0.0], radius: 0.05 },
    JointSpec { name: "right_elbow", parent: 17, pos: [-0.38, -0.27, 0.0], radius: 0.05 },
    JointSpec { name: "left_wrist", parent: 18, pos: [0.557, -0.093, 0.0], radius: 0.042 },
    JointSpec { name: "right_wrist", parent: 19, pos: [-0.557, -0.093, 0.0], radius: 0.042 },
    JointSpec { name: "left_hand", parent: 20, pos: [0.61, -0.04, 0.0], radius: 0.036 },
    JointSpec { name: "right_hand", parent: 21, pos: [-0.61, -0.04, 0.0], radius: 0.036 },
];

/// One capsule segment of the toy body.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Joint whose rotation mainly drives the segment.
    pub owner: usize,
    /// Joint at the far end, if the segment is a bone (not a leaf cap).
    pub child: Option<usize>,
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
}

/// Generator-side description of the toy body, for tests and fixtures.
#[derive(Debug, Clone)]
pub struct ToyLayout {
    pub segments: Vec<Segment>,
    /// Segment index of every vertex.
    pub vertex_segment: Vec<usize>,
    /// Rest joint positions.
    pub joints: Vec<Vec3>,
}

impl ToyLayout {
    /// Closest point on the vertex's segment axis (infinite line).
    pub fn axis_point(&self, v: usize, p: &Vec3) -> Vec3 {
        let s = &self.segments[self.vertex_segment[v]];
        let a = (s.end - s.start).normalize();
        s.start + a * (p - s.start).dot(&a)
    }

    /// Distance from `p` to the axis of vertex `v`'s segment.
    pub fn axis_distance(&self, v: usize, p: &Vec3) -> f64 {
        (p - self.axis_point(v, p)).norm()
    }
}

fn toy_skeleton(joint_count: usize) -> (Vec<String>, Vec<Option<usize>>, Vec<Vec3>, Vec<f64>) {
    let mut names = Vec::with_capacity(joint_count);
    let mut parent = Vec::with_capacity(joint_count);
    let mut pos = Vec::with_capacity(joint_count);
    let mut radius = Vec::with_capacity(joint_count);
    for spec in SKELETON.iter().take(joint_count) {
        names.push(spec.name.to_string());
        parent.push(if spec.parent < 0 { None } else { Some(spec.parent as usize) });
        pos.push(to_vec3(spec.pos));
        radius.push(spec.radius);
    }
    // extra joints extend the two most recent chains alternately
    for j in SKELETON.len()..joint_count {
        let p = j - 2;
        let g = parent[p].unwrap_or(0);
        let dir = (pos[p] - pos[g]).try_normalize(1e-12).unwrap_or(Vec3::new(0.0, 1.0, 0.0));
        names.push(format!("extra_{j}"));
        parent.push(Some(p));
        pos.push(pos[p] + dir * 0.04);
        radius.push(radius[p] * 0.9);
    }
    (names, parent, pos, radius)
}

/// Deterministic capsule-limb humanoid with three shape directions
/// (girth, height, width) and no pose blendshapes.
///
/// `seed` jitters limb radii by up to ±5% so different seeds give
/// different (still valid) bodies.
pub fn make_toy_body(joint_count: usize, ring_resolution: usize, seed: u64) -> Result<ParametricBody> {
    make_toy_body_with_layout(joint_count, ring_resolution, seed).map(|(b, _)| b)
}

pub fn make_toy_body_with_layout(
    joint_count: usize,
    ring_resolution: usize,
    seed: u64,
) -> Result<(ParametricBody, ToyLayout)> {
    if joint_count < 2 {
        return Err(Error::InvalidArgument(format!("joint_count must be ≥ 2, got {joint_count}")));
    }
    if ring_resolution < 4 {
        return Err(Error::InvalidArgument(format!(
            "ring_resolution must be ≥ 4, got {ring_resolution}"
        )));
    }
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let (names, parent, joints, radius) = toy_skeleton(joint_count);
    let radius: Vec<f64> = radius.iter().map(|r| r * (1.0 + rng.random_range(-0.05..0.05))).collect();
    let mut children = vec![Vec::new(); joint_count];
    for (j, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(j);
        }
    }

    let mut segments = Vec::new();
    for j in 1..joint_count {
        let p = parent[j].unwrap();
        segments.push(Segment {
            owner: p,
            child: Some(j),
            start: joints[p],
            end: joints[j],
            radius: radius[j],
        });
    }
    for j in 1..joint_count {
        if !children[j].is_empty() {
            continue;
        }
        let p = parent[j].unwrap();
        let dir = (joints[j] - joints[p]).normalize();
        let bone_len = (joints[j] - joints[p]).norm();
        let (len, r) = match names[j].as_str() {
            "head" => (0.20, 0.095),
            "left_foot" | "right_foot" => (0.07, 0.04),
            "left_hand" | "right_hand" => (0.08, 0.035),
            _ => ((0.5 * bone_len).max(0.03), radius[j]),
        };
        segments.push(Segment {
            owner: j,
            child: None,
            start: joints[j],
            end: joints[j] + dir * len,
            radius: r,
        });
    }

    let mut template = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut weights: Vec<Vec<f64>> = Vec::new();
    let mut vertex_segment = Vec::new();
    let mut girth: Vec<Vec3> = Vec::new();
    // first ring at the far end of each joint's incoming bone; root uses the
    // near-end ring of its first bone
    let mut regressor_ring: Vec<Option<Vec<usize>>> = vec![None; joint_count];

    for (si, seg) in segments.iter().enumerate() {
        let axis = (seg.end - seg.start).normalize();
        let reference = if axis.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let e1 = reference.cross(&axis).normalize();
        let e2 = axis.cross(&e1);
        let prev = parent[seg.owner];
        let ring_weights = |u: f64| -> Vec<f64> {
            let mut w = vec![0.0; joint_count];
            let to_child = match seg.child {
                Some(_) => (u - 0.5).max(0.0),
                None => 0.0,
            };
            let to_prev = match prev {
                Some(_) => (0.5 - u).max(0.0),
                None => 0.0,
            };
            w[seg.owner] = 1.0 - to_child - to_prev;
            if let Some(c) = seg.child {
                w[c] += to_child;
            }
            if let Some(p) = prev {
                w[p] += to_prev;
            }
            w
        };

        let base = template.len();
        for ring in 0..RINGS_PER_SEGMENT {
            let u = ring as f64 / (RINGS_PER_SEGMENT - 1) as f64;
            let center = seg.start + (seg.end - seg.start) * u;
            let w = ring_weights(u);
            let first = template.len();
            for k in 0..ring_resolution {
                let phi = std::f64::consts::TAU * k as f64 / ring_resolution as f64;
                let dir = e1 * phi.cos() + e2 * phi.sin();
                template.push(center + dir * seg.radius);
                girth.push(dir);
                weights.push(w.clone());
                vertex_segment.push(si);
            }
            let ring_ids: Vec<usize> = (first..first + ring_resolution).collect();
            if ring == RINGS_PER_SEGMENT - 1 {
                if let Some(c) = seg.child {
                    if regressor_ring[c].is_none() {
                        regressor_ring[c] = Some(ring_ids.clone());
                    }
                }
            }
            if ring == 0 && seg.child.is_some() && seg.owner == 0 && regressor_ring[0].is_none() {
                regressor_ring[0] = Some(ring_ids);
            }
        }
        let cap_start = template.len();
        template.push(seg.start - axis * (0.5 * seg.radius));
        girth.push(Vec3::zeros());
        weights.push(ring_weights(0.0));
        vertex_segment.push(si);
        let cap_end = template.len();
        template.push(seg.end + axis * (0.5 * seg.radius));
        girth.push(Vec3::zeros());
        weights.push(ring_weights(1.0));
        vertex_segment.push(si);

        let r = ring_resolution;
        let id = |ring: usize, k: usize| (base + ring * r + (k % r)) as u32;
        for ring in 0..RINGS_PER_SEGMENT - 1 {
            for k in 0..r {
                faces.push([id(ring, k), id(ring, k + 1), id(ring + 1, k)]);
                faces.push([id(ring, k + 1), id(ring + 1, k + 1), id(ring + 1, k)]);
            }
        }
        let last = RINGS_PER_SEGMENT - 1;
        for k in 0..r {
            faces.push([cap_start as u32, id(0, k + 1), id(0, k)]);
            faces.push([cap_end as u32, id(last, k), id(last, k + 1)]);
        }
    }

    let v = template.len();
    let mut shape_dirs = vec![0.0; v * 3 * TOY_SHAPE_COUNT];
    for (i, p) in template.iter().enumerate() {
        let base = i * 3 * TOY_SHAPE_COUNT;
        for axis in 0..3 {
            shape_dirs[base + axis * TOY_SHAPE_COUNT + SHAPE_GIRTH] = girth[i][axis] * TOY_GIRTH_PER_UNIT;
        }
        shape_dirs[base + TOY_SHAPE_COUNT + SHAPE_HEIGHT] = (p.y - joints[0].y) * TOY_HEIGHT_PER_UNIT;
        shape_dirs[base + SHAPE_WIDTH] = (p.x - joints[0].x) * TOY_WIDTH_PER_UNIT;
    }

    let mut joint_regressor = vec![0.0; joint_count * v];
    for (j, ring) in regressor_ring.iter().enumerate() {
        let ring = ring.as_ref().expect("every joint has a regressor ring");
        let w = 1.0 / ring.len() as f64;
        for &i in ring {
            joint_regressor[j * v + i] = w;
        }
    }

    let body = ParametricBody::new(BodyArrays {
        template,
        faces,
        shape_count: TOY_SHAPE_COUNT,
        shape_dirs,
        pose_count: 0,
        pose_dirs: Vec::new(),
        joint_regressor,
        parent: parent.clone(),
        blend_weights: weights.into_iter().flatten().collect(),
        joint_names: names,
    })?;
    Ok((
        body,
        ToyLayout {
            segments,
            vertex_segment,
            joints,
        },
    ))
}
