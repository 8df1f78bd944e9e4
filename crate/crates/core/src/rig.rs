//! Skinning-weight transfer from the body to the clothed mesh, and animation.
//!
//! Every clothed vertex is bound to its `K` nearest canonical body vertices
//! with weights `ŵ = exp(-d²)` normalized over the neighbors. Those weights
//! blend the control points' joint weights into a per-vertex joint-weight
//! row, and the vertex is then posed by ordinary linear blend skinning
//! through the same joint transforms the body uses.
//!
//! Binary binding layout (little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic `G3DBIND\0` | 8 bytes |
//! | version (1) | u32 |
//! | vertices `V`, `K`, joints `J`, shape coefficients `S` | 4 × u32 |
//! | control indices | `V·K` × u32 |
//! | control weights | `V·K` × f64 |
//! | joint weights | `V·J` × f64 |
//! | canonical `β`, `θ`, translation, camera scale | `S + 3J + 3 + 1` × f64 |
//! | body content hash (SHA-256) | 32 bytes |

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::body::{BodyParams, ParametricBody};
use crate::error::{Error, Result};
use crate::math::{to_vec3, Vec3};
use crate::mesh::Mesh;
use crate::par;
use crate::raster::{rasterize, RenderTargets, WeakPerspectiveCam, Want};
use crate::recon::ClothedMesh;
use crate::spatial::{knn_linear, PointGrid};

pub const DEFAULT_K: usize = 4;

/// Above this many body vertices the neighbor search uses a grid hash.
pub const LINEAR_SCAN_LIMIT: usize = 50_000;

const MAGIC: &[u8; 8] = b"G3DBIND\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SkinningBinding {
    pub k: usize,
    pub joint_count: usize,
    /// `V × K` body vertex indices, nearest first.
    pub control_indices: Vec<u32>,
    /// `V × K`, each row on the simplex.
    pub control_weights: Vec<f64>,
    /// `V × J`, each row on the simplex.
    pub joint_weights: Vec<f64>,
    /// Hash of the body the binding was built against.
    pub body_hash: String,
    /// Pose the clothed mesh was reconstructed in.
    pub canonical: BodyParams,
}

/// Normalized `exp(-d²)` weights for squared distances `d2`.
///
/// The smallest distance is factored out before exponentiating, which
/// leaves the normalized weights unchanged and avoids underflow.
pub fn knn_weights(d2: &[f64]) -> Vec<f64> {
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = d2.iter().map(|d| (-(d - min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

impl SkinningBinding {
    pub fn vertex_count(&self) -> usize {
        self.control_indices.len() / self.k.max(1)
    }

    pub fn controls(&self, v: usize) -> (&[u32], &[f64]) {
        let r = v * self.k..(v + 1) * self.k;
        (&self.control_indices[r.clone()], &self.control_weights[r])
    }

    pub fn joint_weights_row(&self, v: usize) -> &[f64] {
        &self.joint_weights[v * self.joint_count..(v + 1) * self.joint_count]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let put = |b: &mut Vec<u8>, x: f64| b.write_f64::<LittleEndian>(x).expect("write to Vec");
        b.extend_from_slice(MAGIC);
        for x in [VERSION, self.vertex_count() as u32, self.k as u32, self.joint_count as u32, self.canonical.beta.len() as u32] {
            b.write_u32::<LittleEndian>(x).expect("write to Vec");
        }
        for &i in &self.control_indices {
            b.write_u32::<LittleEndian>(i).expect("write to Vec");
        }
        for &w in self.control_weights.iter().chain(&self.joint_weights).chain(&self.canonical.beta) {
            put(&mut b, w);
        }
        for &x in self.canonical.theta.iter().flatten().chain(&self.canonical.trans) {
            put(&mut b, x);
        }
        put(&mut b, self.canonical.cam_scale);
        let mut hash = [0u8; 32];
        hex::decode_to_slice(&self.body_hash, &mut hash).expect("body hash is 32-byte hex");
        b.extend_from_slice(&hash);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| "truncated header")?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let mut u32s = [0u32; 5];
        for x in &mut u32s {
            *x = r.read_u32::<LittleEndian>().map_err(|_| "truncated header")?;
        }
        let [version, v, k, j, s] = u32s.map(|x| x as usize);
        if version != VERSION as usize {
            return Err(format!("unsupported version {version}"));
        }
        if k == 0 || j == 0 {
            return Err("K and joint count must be positive".into());
        }
        let expected = 8 + 20 + v * k * 4 + (v * k + v * j + s + 3 * j + 4) * 8 + 32;
        if bytes.len() != expected {
            return Err(format!("expected {expected} bytes, found {}", bytes.len()));
        }
        let mut r = Cursor::new(&bytes[28..]);
        let control_indices: Vec<u32> = (0..v * k).map(|_| r.read_u32::<LittleEndian>().expect("length checked")).collect();
        let mut take = |n: usize| -> Vec<f64> { (0..n).map(|_| r.read_f64::<LittleEndian>().expect("length checked")).collect() };
        let control_weights = take(v * k);
        let joint_weights = take(v * j);
        let beta = take(s);
        let theta: Vec<[f64; 3]> = take(3 * j).chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let t = take(4);
        let body_hash = hex::encode(&bytes[bytes.len() - 32..]);
        let binding = Self {
            k,
            joint_count: j,
            control_indices,
            control_weights,
            joint_weights,
            body_hash,
            canonical: BodyParams {
                beta,
                theta,
                trans: [t[0], t[1], t[2]],
                cam_scale: t[3],
            },
        };
        binding.validate().map_err(|e| e.to_string())?;
        Ok(binding)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format("binding", path, m))
    }

    /// Checks the simplex invariants and finiteness.
    pub fn validate(&self) -> Result<()> {
        let v = self.vertex_count();
        if self.control_weights.len() != v * self.k || self.joint_weights.len() != v * self.joint_count {
            return Err(Error::ShapeMismatch("binding arrays disagree in length".into()));
        }
        for (rows, width, what) in [
            (&self.control_weights, self.k, "control"),
            (&self.joint_weights, self.joint_count, "joint"),
        ] {
            for row in rows.chunks(width) {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!("{what} weight row is off the simplex")));
                }
            }
        }
        self.canonical.validate()
    }
}

/// Binds clothed vertices to the body posed with `canonical`.
pub fn bind_knn(clothed_vertices: &[Vec3], body: &ParametricBody, canonical: &BodyParams, k: usize) -> Result<SkinningBinding> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if body.vertex_count() < k {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the body's {} vertices",
            body.vertex_count()
        )));
    }
    if clothed_vertices.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("clothed vertices"));
    }
    let posed = body.skin_vertices(canonical)?;
    let grid = (posed.len() > LINEAR_SCAN_LIMIT).then(|| PointGrid::new(&posed, None));
    let j = body.joint_count();
    let rows = par::map_slice(clothed_vertices, |q| {
        let nn = match &grid {
            Some(g) => g.knn(q, k),
            None => knn_linear(&posed, q, k),
        };
        let d2: Vec<f64> = nn.iter().map(|&(_, d2)| d2).collect();
        let w = knn_weights(&d2);
        let mut jw = vec![0.0; j];
        for (&(idx, _), &wk) in nn.iter().zip(&w) {
            for (acc, bw) in jw.iter_mut().zip(body.blend_weights_row(idx)) {
                *acc += wk * bw;
            }
        }
        let sum: f64 = jw.iter().sum();
        jw.iter_mut().for_each(|x| *x /= sum);
        (nn.iter().map(|&(i, _)| i as u32).collect::<Vec<_>>(), w, jw)
    });
    let mut binding = SkinningBinding {
        k,
        joint_count: j,
        control_indices: Vec::with_capacity(rows.len() * k),
        control_weights: Vec::with_capacity(rows.len() * k),
        joint_weights: Vec::with_capacity(rows.len() * j),
        body_hash: body.content_hash(),
        canonical: canonical.clone(),
    };
    for (idx, w, jw) in rows {
        binding.control_indices.extend(idx);
        binding.control_weights.extend(w);
        binding.joint_weights.extend(jw);
    }
    Ok(binding)
}

fn check_binding(clothed_len: usize, binding: &SkinningBinding, body: &ParametricBody) -> Result<()> {
    let hash = body.content_hash();
    if hash != binding.body_hash {
        return Err(Error::BindingMismatch {
            expected: binding.body_hash.clone(),
            found: hash,
        });
    }
    if binding.joint_count != body.joint_count() {
        return Err(Error::ShapeMismatch(format!(
            "binding has {} joints, body has {}",
            binding.joint_count,
            body.joint_count()
        )));
    }
    if binding.vertex_count() != clothed_len {
        return Err(Error::ShapeMismatch(format!(
            "binding covers {} vertices, mesh has {clothed_len}",
            binding.vertex_count()
        )));
    }
    Ok(())
}

/// Poses the clothed mesh for one frame; colors are carried over unchanged.
///
/// Each vertex is first unposed with its blended canonical transform, moved
/// by the control points' blendshape change between canonical and frame
/// parameters, then posed with the frame transform.
pub fn animate(clothed: &ClothedMesh, binding: &SkinningBinding, body: &ParametricBody, frame: &BodyParams) -> Result<Mesh> {
    check_binding(clothed.vertices.len(), binding, body)?;
    let canon = &binding.canonical;
    if canon.beta == frame.beta && canon.theta == frame.theta {
        let d = to_vec3(frame.trans) - to_vec3(canon.trans);
        let vertices = if d == Vec3::zeros() { clothed.vertices.clone() } else { clothed.vertices.iter().map(|p| p + d).collect() };
        return Ok(Mesh::new(vertices, clothed.faces.clone()).with_colors(clothed.colors.clone()));
    }
    let (a_canon, a_frame) = (body.posed_transforms(canon)?, body.posed_transforms(frame)?);
    let (b_canon, b_frame) = (body.blend_offsets(&canon.beta, &canon.theta), body.blend_offsets(&frame.beta, &frame.theta));
    let delta: Vec<Vec3> = b_frame.iter().zip(&b_canon).map(|(f, c)| f - c).collect();
    let (t_canon, t_frame) = (to_vec3(canon.trans), to_vec3(frame.trans));
    let mut vertices = Vec::with_capacity(clothed.vertices.len());
    for (v, p) in clothed.vertices.iter().enumerate() {
        let jw = binding.joint_weights_row(v);
        let g_canon = ParametricBody::blend_transform(&a_canon, jw);
        let g_frame = ParametricBody::blend_transform(&a_frame, jw);
        let inv = g_canon
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument(format!("canonical transform of vertex {v} is singular")))?;
        let (idx, w) = binding.controls(v);
        let shift = idx.iter().zip(w).fold(Vec3::zeros(), |acc, (&i, &wk)| acc + delta[i as usize] * wk);
        vertices.push(g_frame.apply(&(inv.apply(&(p - t_canon)) + shift)) + t_frame);
    }
    Ok(Mesh::new(vertices, clothed.faces.clone()).with_colors(clothed.colors.clone()))
}

/// Per-frame pose track sharing one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub beta: Vec<f64>,
    pub frames: Vec<PoseFrame>,
    pub frame_rate: f64,
    /// Pixels per meter for every frame.
    pub cam_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub theta: Vec<[f64; 3]>,
    pub trans: [f64; 3],
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn params(&self, i: usize) -> BodyParams {
        BodyParams {
            beta: self.beta.clone(),
            theta: self.frames[i].theta.clone(),
            trans: self.frames[i].trans,
            cam_scale: self.cam_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::InvalidArgument("pose sequence is empty".into()));
        };
        if self.frames.iter().any(|f| f.theta.len() != first.theta.len()) {
            return Err(Error::ShapeMismatch("frames disagree in joint count".into()));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::InvalidArgument("frame rate must be positive".into()));
        }
        (0..self.len()).try_for_each(|i| self.params(i).validate())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s: Self = crate::io::read_json(path, "pose sequence JSON")?;
        s.validate()?;
        Ok(s)
    }
}

/// Animates and renders every frame, in parallel when enabled.
pub fn animate_and_render(
    clothed: &ClothedMesh,
    binding: &SkinningBinding,
    body: &ParametricBody,
    seq: &PoseSequence,
    cam_base: &WeakPerspectiveCam,
) -> Result<Vec<RenderTargets>> {
    seq.validate()?;
    check_binding(clothed.vertices.len(), binding, body)?;
    par::map_range(seq.len(), |i| {
        let params = seq.params(i);
        let mesh = animate(clothed, binding, body, &params)?;
        Ok(rasterize(&mesh, &cam_base.with_scale(params.cam_scale), Want::ALL))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::make_toy_body;

    #[test]
    fn single_neighbor_gets_full_weight() {
        assert_eq!(knn_weights(&[42.0]), vec![1.0]);
    }

    #[test]
    fn equidistant_neighbors_split_evenly() {
        assert_eq!(knn_weights(&[0.3, 0.3]), vec![0.5, 0.5]);
    }

    #[test]
    fn distances_zero_and_one() {
        let w = knn_weights(&[0.0, 1.0]);
        let e = (-1.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((w[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn far_points_do_not_underflow() {
        let w = knn_weights(&[1e4, 1e4 + 1.0]);
        assert!(w.iter().all(|x| x.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binding_bytes_round_trip_and_reject_garbage() {
        let body = make_toy_body(24, 8, 0).unwrap();
        let canon = body.zero_params(100.0);
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, -0.3, 0.05)];
        let b = bind_knn(&pts, &body, &canon, 3).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(SkinningBinding::from_bytes(&bytes).unwrap(), b);
        assert!(SkinningBinding::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SkinningBinding::from_bytes(&bad).is_err());
    }

    #[test]
    fn animate_refuses_other_body() {
        let body = make_toy_body(24, 8, 0).unwrap();
        let other = make_toy_body(24, 8, 1).unwrap();
        let canon = body.zero_params(100.0);
        let mesh = body.skin(&canon).unwrap();
        let n = mesh.vertices.len();
        let clothed = ClothedMesh::from_mesh(&mesh, vec![crate::recon::Origin::FrontSurface; n]).unwrap();
        let b = bind_knn(&mesh.vertices, &body, &canon, 1).unwrap();
        assert!(matches!(animate(&clothed, &b, &other, &canon), Err(Error::BindingMismatch { .. })));
    }
}
