//! Triangle meshes and Wavefront OBJ export/import.
//!
//! Per-vertex colors are written as `v x y z r g b`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
    /// Index of the rest-pose vertex each posed vertex came from.
    pub rest_index: Vec<usize>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        let rest_index = (0..vertices.len()).collect();
        Self {
            vertices,
            faces,
            colors: None,
            rest_index,
        }
    }

    pub fn with_colors(mut self, colors: Vec<[f64; 3]>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidArgument(format!(
                "face {f:?} indexes past {n} vertices"
            )));
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} colors for {} vertices",
                    c.len(),
                    n
                )));
            }
        }
        Ok(())
    }

    /// Unit face normal by right-hand winding; zero for degenerate faces.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let pa = self.vertices[a as usize];
        let n = (self.vertices[b as usize] - pa).cross(&(self.vertices[c as usize] - pa));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    /// Area-weighted vertex normals. Isolated vertices get a zero normal.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for &[a, b, c] in &self.faces {
            let pa = self.vertices[a as usize];
            let n = (self.vertices[b as usize] - pa).cross(&(self.vertices[c as usize] - pa));
            acc[a as usize] += n;
            acc[b as usize] += n;
            acc[c as usize] += n;
        }
        for n in &mut acc {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        acc
    }

    /// Appends another mesh, re-indexing its faces.
    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len() as u32;
        match (&mut self.colors, &other.colors) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (Some(a), None) => a.extend(std::iter::repeat_n([0.0; 3], other.vertices.len())),
            (None, Some(b)) if self.vertices.is_empty() => self.colors = Some(b.clone()),
            (None, Some(b)) => {
                let mut c = vec![[0.0; 3]; self.vertices.len()];
                c.extend_from_slice(b);
                self.colors = Some(c);
            }
            (None, None) => {}
        }
        self.vertices.extend_from_slice(&other.vertices);
        self.rest_index.extend(other.rest_index.iter().map(|&r| r + base as usize));
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    /// Unique undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(u32, u32)> = self
            .faces
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_count() as i64 + self.faces.len() as i64
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 48 + self.faces.len() * 24);
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let c = c[i];
                    let _ = writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
                }
                None => {
                    let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
                }
            }
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_obj(path: &Path) -> Result<Mesh> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text).map_err(|reason| Error::format("OBJ", path, reason))
    }

    pub fn parse_obj(text: &str) -> std::result::Result<Mesh, String> {
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let vals: Vec<f64> = it
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                    match vals.len() {
                        3 => vertices.push(Vec3::new(vals[0], vals[1], vals[2])),
                        6 => {
                            vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                            colors.push([vals[3], vals[4], vals[5]]);
                        }
                        n => return Err(format!("line {}: vertex with {n} values", lineno + 1)),
                    }
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            t.split('/')
                                .next()
                                .unwrap_or("")
                                .parse::<u32>()
                                .map_err(|e| format!("line {}: {e}", lineno + 1))
                        })
                        .collect::<std::result::Result<_, _>>()?;
                    if idx.len() < 3 || idx.contains(&0) {
                        return Err(format!("line {}: bad face", lineno + 1));
                    }
                    // fan-triangulate polygons
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1]);
                    }
                }
                _ => {}
            }
        }
        if !colors.is_empty() && colors.len() != vertices.len() {
            return Err("vertex colors present on only some vertices".into());
        }
        let mut mesh = Mesh::new(vertices, faces);
        if !colors.is_empty() {
            mesh.colors = Some(colors);
        }
        mesh.validate().map_err(|e| e.to_string())?;
        Ok(mesh)
    }
}
