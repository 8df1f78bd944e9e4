//! Clothed-surface reconstruction from front/back normal maps.
//!
//! 1. [`integrate_normals`] turns a normal map into a depth map by least
//!    squares on the gradient field `∂z/∂u = -n_x/n_z`, `∂z/∂v = -n_y/n_z`,
//!    optionally coupled to a depth prior (the rendered body depth) with
//!    weight `μ`. The normal equations are solved by Jacobi-preconditioned
//!    conjugate gradient.
//! 2. [`mesh_from_depth`] triangulates the front and back depth maps as two
//!    pixel-grid sheets, joins them along the silhouette boundary and bakes
//!    the source image into per-vertex colors.
//! 3. [`infill_from_body`] appends body triangles that neither camera sees,
//!    colored by their normals.
//!
//! Depth maps handled here are in pixel units (meters × camera scale).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sample_bilinear, ColorImage, DepthMap, Grid, Mask, NormalMap};
use crate::math::{normal_to_color, Vec3};
use crate::mesh::Mesh;
use crate::raster::WeakPerspectiveCam;
use crate::spatial::PointGrid;

/// Smallest `n_z` used when converting normals to slopes.
pub const MIN_NORMAL_Z: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Each connected component floats freely (plus the prior, if any).
    FreeOffset,
    /// Silhouette-boundary pixels are fixed to the prior.
    PinToPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationConfig {
    /// Weight `μ` of `(z - prior)²`.
    pub prior_weight: f64,
    pub boundary: Boundary,
    pub max_solver_iters: usize,
    /// Stop once the normal-equation residual norm is below
    /// `tolerance × unknowns`.
    pub tolerance: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            prior_weight: 0.0,
            boundary: Boundary::FreeOffset,
            max_solver_iters: 20_000,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    /// Pixel-unit depth, `+inf` outside the silhouette.
    pub depth: DepthMap,
    /// 4-connected silhouette components, each solved with its own gauge.
    pub components: usize,
    pub iterations: usize,
    /// Final `‖A z − b‖₂` of the normal equations.
    pub residual: f64,
    pub unknowns: usize,
}

#[inline]
fn slopes(n: &[f64; 3]) -> (f64, f64) {
    let nz = n[2].max(MIN_NORMAL_Z);
    (-n[0] / nz, -n[1] / nz)
}

/// Silhouette pixels with a 4-neighbor outside the silhouette or the image.
pub fn boundary_pixels(sil: &Mask) -> Mask {
    let (h, w) = sil.dims();
    Grid::from_fn(w, h, |x, y| {
        if !*sil.get(x, y) {
            return false;
        }
        x == 0 || y == 0 || x + 1 == w || y + 1 == h || !*sil.get(x - 1, y) || !*sil.get(x + 1, y) || !*sil.get(x, y - 1) || !*sil.get(x, y + 1)
    })
}

/// Labels 4-connected components; returns labels (`usize::MAX` outside) and count.
pub fn label_components(sil: &Mask) -> (Grid<usize>, usize) {
    let (h, w) = sil.dims();
    let mut labels = Grid::new(w, h, usize::MAX);
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !sil.data()[start] || labels.data()[start] != usize::MAX {
            continue;
        }
        labels.data_mut()[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if sil.data()[j] && labels.data()[j] == usize::MAX {
                    labels.data_mut()[j] = count;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        count += 1;
    }
    (labels, count)
}

/// Integrates a normal map into depth over the silhouette.
pub fn integrate_normals(
    normal: &NormalMap,
    silhouette: &Mask,
    prior: Option<&DepthMap>,
    cfg: &IntegrationConfig,
) -> Result<Integration> {
    normal.ensure_same_dims(silhouette, "normal map vs silhouette")?;
    if let Some(p) = prior {
        p.ensure_same_dims(silhouette, "prior vs silhouette")?;
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidArgument("integration tolerance must be positive".into()));
    }
    if !(cfg.prior_weight >= 0.0) {
        return Err(Error::InvalidArgument("prior weight must be ≥ 0".into()));
    }
    let pinned = match cfg.boundary {
        Boundary::FreeOffset => Grid::new(silhouette.width(), silhouette.height(), false),
        Boundary::PinToPrior => {
            if prior.is_none() {
                return Err(Error::InvalidArgument("PinToPrior needs a depth prior".into()));
            }
            boundary_pixels(silhouette)
        }
    };
    let prior_ok = |i: usize| prior.is_some_and(|p| p.data()[i].is_finite());
    if let Some(i) = (0..pinned.len()).find(|&i| pinned.data()[i] && !prior_ok(i)) {
        return Err(Error::InvalidArgument(format!(
            "pinned boundary pixel {i} has no finite prior"
        )));
    }

    let (h, w) = silhouette.dims();
    let (labels, components) = label_components(silhouette);
    let mut unknown = vec![usize::MAX; h * w];
    let mut pixel_of = Vec::new();
    for (i, u) in unknown.iter_mut().enumerate() {
        if silhouette.data()[i] && !pinned.data()[i] {
            *u = pixel_of.len();
            pixel_of.push(i);
        }
    }
    let n = pixel_of.len();
    let mut depth = Grid::new(w, h, f64::INFINITY);
    for i in 0..h * w {
        if pinned.data()[i] {
            depth.data_mut()[i] = prior.expect("checked above").data()[i];
        }
    }
    if n == 0 {
        return Ok(Integration {
            depth,
            components,
            iterations: 0,
            residual: 0.0,
            unknowns: 0,
        });
    }

    let slope: Vec<(f64, f64)> = normal.data().iter().map(slopes).collect();
    let mu = cfg.prior_weight;
    let mu_at = |i: usize| if mu > 0.0 && prior_ok(i) { mu } else { 0.0 };

    // neighbor lists: (neighbor pixel, target of z_nbr − z_self)
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut nbrs: Vec<[(usize, f64); 4]> = vec![[(usize::MAX, 0.0); 4]; n];
    for (k, &i) in pixel_of.iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let (p_i, q_i) = slope[i];
        let cand = [
            (x > 0).then(|| (i - 1, -(p_i + slope[i - 1].0) * 0.5)),
            (x + 1 < w).then(|| (i + 1, (p_i + slope[i + 1].0) * 0.5)),
            (y > 0).then(|| (i - w, -(q_i + slope[i - w].1) * 0.5)),
            (y + 1 < h).then(|| (i + w, (q_i + slope[i + w].1) * 0.5)),
        ];
        let mut slot = 0;
        for (j, g) in cand.into_iter().flatten() {
            if !silhouette.data()[j] {
                continue;
            }
            diag[k] += 1.0;
            rhs[k] -= g;
            if pinned.data()[j] {
                rhs[k] += depth.data()[j];
            } else {
                nbrs[k][slot] = (unknown[j], g);
                slot += 1;
            }
        }
        let m = mu_at(i);
        if m > 0.0 {
            diag[k] += m;
            rhs[k] += m * prior.expect("mu_at checks prior").data()[i];
        }
    }

    let apply = |z: &[f64], out: &mut [f64]| {
        for k in 0..n {
            let mut acc = diag[k] * z[k];
            for &(j, _) in &nbrs[k] {
                if j != usize::MAX {
                    acc -= z[j];
                }
            }
            out[k] = acc;
        }
    };

    let threshold = cfg.tolerance * n as f64;
    let mut z = vec![0.0; n];
    let mut r = rhs.clone();
    let inv_diag: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    let mut s: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = s.clone();
    let mut ap = vec![0.0; n];
    let mut rs: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
    let mut iterations = 0;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    while iterations < cfg.max_solver_iters && norm(&r) > threshold {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rs / pap;
        for k in 0..n {
            z[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
            s[k] = r[k] * inv_diag[k];
        }
        let rs_new: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for k in 0..n {
            p[k] = s[k] + beta * p[k];
        }
        iterations += 1;
    }

    // components with neither prior nor pins have a free constant: center them
    let mut anchored = vec![false; components];
    for i in 0..h * w {
        if silhouette.data()[i] && (pinned.data()[i] || mu_at(i) > 0.0) {
            anchored[labels.data()[i]] = true;
        }
    }
    let mut sums = vec![(0.0, 0usize); components];
    for (k, &i) in pixel_of.iter().enumerate() {
        let c = labels.data()[i];
        sums[c].0 += z[k];
        sums[c].1 += 1;
    }
    for (k, &i) in pixel_of.iter().enumerate() {
        let c = labels.data()[i];
        if !anchored[c] {
            z[k] -= sums[c].0 / sums[c].1 as f64;
        }
    }

    apply(&z, &mut ap);
    let residual = ap.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    for (k, &i) in pixel_of.iter().enumerate() {
        depth.data_mut()[i] = z[k];
    }
    Ok(Integration {
        depth,
        components,
        iterations,
        residual,
        unknowns: n,
    })
}

/// Converts a depth map rendered or integrated in the back view's lattice to
/// the front view's: columns mirrored, depth negated.
pub fn back_depth_to_front_frame(back: &DepthMap) -> DepthMap {
    back.mirror_x().map(|&d| if d.is_finite() { -d } else { f64::INFINITY })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    FrontSurface,
    BackSurface,
    BodyInfill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClothedMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub origin: Vec<Origin>,
    /// Source-image pixel coordinates of sheet vertices.
    pub pixel: Vec<Option<[f64; 2]>>,
}

impl ClothedMesh {
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            colors: Vec::new(),
            origin: Vec::new(),
            pixel: Vec::new(),
        }
    }

    pub fn to_mesh(&self) -> Mesh {
        Mesh::new(self.vertices.clone(), self.faces.clone()).with_colors(self.colors.clone())
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.origin.iter().filter(|&&o| o == origin).count()
    }

    /// Rebuilds from a plain mesh with sidecar tags (e.g. after OBJ import).
    pub fn from_mesh(mesh: &Mesh, origin: Vec<Origin>) -> Result<Self> {
        if origin.len() != mesh.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tags for {} vertices",
                origin.len(),
                mesh.vertices.len()
            )));
        }
        Ok(Self {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            colors: mesh.colors.clone().unwrap_or_else(|| vec![[0.0; 3]; mesh.vertices.len()]),
            origin,
            pixel: vec![None; mesh.vertices.len()],
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeshDiagnostics {
    /// Pixels where the aligned back depth was in front of the front depth.
    pub clamped_pixels: usize,
    /// Depth shift applied to the back sheet (pixel units).
    pub back_shift: f64,
    pub silhouette_pixels: usize,
    pub warnings: Vec<String>,
}

/// Triangulates front and back depth sheets and bakes colors.
///
/// `back_depth` must already be in the front frame (see
/// [`back_depth_to_front_frame`]). Depths are in pixel units; `cam` is the
/// front camera that maps pixels back to world space.
pub fn mesh_from_depth(
    front_depth: &DepthMap,
    back_depth: &DepthMap,
    silhouette: &Mask,
    source_image: &ColorImage,
    cam: &WeakPerspectiveCam,
) -> Result<(ClothedMesh, MeshDiagnostics)> {
    front_depth.ensure_same_dims(silhouette, "front depth vs silhouette")?;
    back_depth.ensure_same_dims(silhouette, "back depth vs silhouette")?;
    source_image.ensure_same_dims(silhouette, "source image vs silhouette")?;
    let (h, w) = silhouette.dims();
    let mut diag = MeshDiagnostics::default();

    let valid = Grid::from_fn(w, h, |x, y| {
        *silhouette.get(x, y) && front_depth.get(x, y).is_finite() && back_depth.get(x, y).is_finite()
    });
    diag.silhouette_pixels = valid.count();

    // register the back sheet on the mean boundary depth
    let boundary = boundary_pixels(&valid);
    let (mut fsum, mut bsum, mut cnt) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        if boundary.data()[i] {
            fsum += front_depth.data()[i];
            bsum += back_depth.data()[i];
            cnt += 1;
        }
    }
    let shift = if cnt > 0 { (fsum - bsum) / cnt as f64 } else { 0.0 };
    diag.back_shift = shift;
    let mut front = front_depth.clone();
    let mut back = back_depth.map(|&d| d + shift);
    for i in 0..h * w {
        if valid.data()[i] && back.data()[i] < front.data()[i] {
            let mid = 0.5 * (front.data()[i] + back.data()[i]);
            front.data_mut()[i] = mid;
            back.data_mut()[i] = mid;
            diag.clamped_pixels += 1;
        }
    }
    if diag.clamped_pixels > 0 {
        diag.warnings.push(format!("{} pixels had back depth in front of front depth", diag.clamped_pixels));
    }

    let quad_ok = |x: usize, y: usize| {
        x + 1 < w && y + 1 < h && *valid.get(x, y) && *valid.get(x + 1, y) && *valid.get(x, y + 1) && *valid.get(x + 1, y + 1)
    };
    let mut used = Grid::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if quad_ok(x, y) {
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    used.set(x + dx, y + dy, true);
                }
            }
        }
    }
    let used_count = used.count();
    if used_count == 0 {
        diag.warnings.push("silhouette has no 2x2 pixel block; mesh is empty".into());
        return Ok((ClothedMesh::empty(), diag));
    }

    let mut out = ClothedMesh::empty();
    let mut front_id = Grid::new(w, h, u32::MAX);
    let mut back_id = Grid::new(w, h, u32::MAX);
    let scale = cam.scale;
    let front_cam = cam.with_view(crate::raster::View::Front);
    for (sheet, ids, depth, origin) in [
        (0, &mut front_id, &front, Origin::FrontSurface),
        (1, &mut back_id, &back, Origin::BackSurface),
    ] {
        let _ = sheet;
        for y in 0..h {
            for x in 0..w {
                if !*used.get(x, y) {
                    continue;
                }
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                ids.set(x, y, out.vertices.len() as u32);
                out.vertices.push(front_cam.unproject(u, v, *depth.get(x, y) / scale));
                out.colors.push(sample_bilinear(source_image, u, v));
                out.origin.push(origin);
                out.pixel.push(Some([u, v]));
            }
        }
    }

    // front sheet faces the camera (outward -z), back sheet faces away
    let mut front_faces = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !quad_ok(x, y) {
                continue;
            }
            let a = *front_id.get(x, y);
            let b = *front_id.get(x + 1, y);
            let c = *front_id.get(x + 1, y + 1);
            let d = *front_id.get(x, y + 1);
            front_faces.push([a, c, b]);
            front_faces.push([a, d, c]);
            let a = *back_id.get(x, y);
            let b = *back_id.get(x + 1, y);
            let c = *back_id.get(x + 1, y + 1);
            let d = *back_id.get(x, y + 1);
            out.faces.push([a, b, c]);
            out.faces.push([a, c, d]);
        }
    }

    // directed edges of the front sheet used once are boundary edges
    let mut directed: std::collections::HashMap<(u32, u32), i32> = std::collections::HashMap::new();
    for f in &front_faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *directed.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let front_count = out.vertices.len() as u32 / 2;
    let to_back = |i: u32| -> u32 { i + front_count };
    let mut stitches = Vec::new();
    for f in &front_faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if directed[&(a.min(b), a.max(b))] == 1 {
                stitches.push([b, a, to_back(a)]);
                stitches.push([b, to_back(a), to_back(b)]);
            }
        }
    }
    out.faces.extend(front_faces);
    out.faces.extend(stitches);
    // vertex ids were assigned front sheet first, then back sheet, in the
    // same pixel order, so back id = front id + front_count
    debug_assert!(out.vertices.len() as u32 == 2 * front_count);
    debug_assert_eq!(*back_id.data().iter().find(|&&i| i != u32::MAX).unwrap(), front_count);
    Ok((out, diag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfillConfig {
    /// Infill vertices within this distance (meters) of a sheet vertex snap
    /// onto it.
    pub snap_radius: f64,
    /// How far (meters) the clothed surface may sit in front of a body
    /// triangle before the triangle counts as hidden.
    pub cover_tolerance: f64,
}

impl Default for InfillConfig {
    fn default() -> Self {
        Self {
            snap_radius: 0.01,
            cover_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfillReport {
    pub appended_triangles: usize,
    pub appended_vertices: usize,
    pub snapped_vertices: usize,
}

/// Screen-space triangle bins for orthographic ray casts.
pub struct RayCaster {
    screen: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    cell: f64,
    cols: usize,
    rows: usize,
    bins: Vec<Vec<u32>>,
}

impl RayCaster {
    pub fn new(mesh: &Mesh, cam: &WeakPerspectiveCam) -> Self {
        let screen: Vec<[f64; 3]> = mesh.vertices.iter().map(|p| cam.project_point(p)).collect();
        let cell = 8.0;
        let (h, w) = cam.image_size;
        let cols = (w as f64 / cell).ceil() as usize;
        let rows = (h as f64 / cell).ceil() as usize;
        let mut bins = vec![Vec::new(); cols * rows];
        let bin = |v: f64, n: usize| (v / cell).floor().clamp(0.0, (n - 1) as f64) as usize;
        for (fi, f) in mesh.faces.iter().enumerate() {
            let p = f.map(|i| screen[i as usize]);
            let (x0, x1) = (p[0][0].min(p[1][0]).min(p[2][0]), p[0][0].max(p[1][0]).max(p[2][0]));
            let (y0, y1) = (p[0][1].min(p[1][1]).min(p[2][1]), p[0][1].max(p[1][1]).max(p[2][1]));
            if !(x1 >= 0.0 && y1 >= 0.0 && x0 < w as f64 && y0 < h as f64) {
                continue;
            }
            for r in bin(y0, rows)..=bin(y1, rows) {
                for c in bin(x0, cols)..=bin(x1, cols) {
                    bins[r * cols + c].push(fi as u32);
                }
            }
        }
        Self {
            screen,
            faces: mesh.faces.clone(),
            cell,
            cols,
            rows,
            bins,
        }
    }

    /// Nearest depth (meters) of the mesh along the ray through `(u, v)`.
    pub fn nearest_depth(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) || self.cols == 0 || self.rows == 0 {
            return None;
        }
        let c = (u / self.cell).floor() as usize;
        let r = (v / self.cell).floor() as usize;
        if c >= self.cols || r >= self.rows {
            return None;
        }
        self.bins[r * self.cols + c]
            .iter()
            .filter_map(|&fi| depth_at(&self.faces[fi as usize].map(|i| self.screen[i as usize]), u, v))
            .min_by(f64::total_cmp)
    }
}

/// Depth of the triangle at `(u, v)` if the point is inside (edges inclusive).
pub fn depth_at(p: &[[f64; 3]; 3], u: f64, v: f64) -> Option<f64> {
    let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    if area.abs() < 1e-14 {
        return None;
    }
    let w0 = ((p[1][0] - u) * (p[2][1] - v) - (p[1][1] - v) * (p[2][0] - u)) / area;
    let w1 = ((p[2][0] - u) * (p[0][1] - v) - (p[2][1] - v) * (p[0][0] - u)) / area;
    let w2 = 1.0 - w0 - w1;
    (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then(|| w0 * p[0][2] + w1 * p[1][2] + w2 * p[2][2])
}

/// Screen position `(u, v, depth)` of a triangle's centroid.
pub fn centroid_on_screen(mesh: &Mesh, face: usize, cam: &WeakPerspectiveCam) -> [f64; 3] {
    let f = mesh.faces[face];
    let c = (mesh.vertices[f[0] as usize] + mesh.vertices[f[1] as usize] + mesh.vertices[f[2] as usize]) / 3.0;
    cam.project_point(&c)
}

/// Per-triangle visibility of `body` in one view: the ray through the
/// centroid hits the clothed mesh, and the clothed surface there is no more
/// than `tolerance` in front of the body.
pub fn body_visibility(body: &Mesh, clothed: &Mesh, cam: &WeakPerspectiveCam, tolerance: f64) -> Vec<bool> {
    let caster = RayCaster::new(clothed, cam);
    crate::par::map_range(body.faces.len(), |fi| {
        let [u, v, d] = centroid_on_screen(body, fi, cam);
        caster.nearest_depth(u, v).is_some_and(|dc| d - dc <= tolerance)
    })
}

/// Appends body triangles that neither camera sees, tagged
/// [`Origin::BodyInfill`] and colored `(n + 1) / 2` from body normals.
pub fn infill_from_body(
    mesh: &ClothedMesh,
    body_mesh: &Mesh,
    front_cam: &WeakPerspectiveCam,
    back_cam: &WeakPerspectiveCam,
    cfg: &InfillConfig,
) -> Result<(ClothedMesh, InfillReport)> {
    body_mesh.validate()?;
    let plain = mesh.to_mesh();
    let (vis_front, vis_back) = crate::par::join(
        || body_visibility(body_mesh, &plain, front_cam, cfg.cover_tolerance),
        || body_visibility(body_mesh, &plain, back_cam, cfg.cover_tolerance),
    );
    let normals = body_mesh.vertex_normals();
    let sheet_grid = PointGrid::new(&mesh.vertices, Some(cfg.snap_radius.max(1e-3)));

    let mut out = mesh.clone();
    let mut report = InfillReport::default();
    let mut remap: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    for (fi, f) in body_mesh.faces.iter().enumerate() {
        if vis_front[fi] || vis_back[fi] {
            continue;
        }
        let mut tri = [0u32; 3];
        for (k, &bv) in f.iter().enumerate() {
            tri[k] = *remap.entry(bv).or_insert_with(|| {
                let mut p = body_mesh.vertices[bv as usize];
                if cfg.snap_radius > 0.0 {
                    if let Some((near, _)) = sheet_grid.nearest_within(&p, cfg.snap_radius) {
                        p = mesh.vertices[near];
                        report.snapped_vertices += 1;
                    }
                }
                out.vertices.push(p);
                out.colors.push(normal_to_color(&normals[bv as usize]));
                out.origin.push(Origin::BodyInfill);
                out.pixel.push(None);
                report.appended_vertices += 1;
                (out.vertices.len() - 1) as u32
            });
        }
        out.faces.push(tri);
        report.appended_triangles += 1;
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::View;

    fn flat_normals(w: usize, h: usize, n: [f64; 3]) -> NormalMap {
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        Grid::new(w, h, n.map(|c| c / len))
    }

    #[test]
    fn constant_normal_gives_constant_depth() {
        let sil = Grid::from_fn(20, 16, |x, y| (3..17).contains(&x) && (2..14).contains(&y));
        let r = integrate_normals(&flat_normals(20, 16, [0.0, 0.0, 1.0]), &sil, None, &IntegrationConfig::default()).unwrap();
        for (d, s) in r.depth.data().iter().zip(sil.data()) {
            if *s {
                assert!(d.abs() < 1e-9);
            } else {
                assert!(d.is_infinite());
            }
        }
        assert_eq!(r.components, 1);
    }

    #[test]
    fn disconnected_components_are_counted() {
        let sil = Grid::from_fn(20, 10, |x, y| (1..5).contains(&y) && !(6..=12).contains(&x));
        let r = integrate_normals(&flat_normals(20, 10, [0.2, 0.0, 1.0]), &sil, None, &IntegrationConfig::default()).unwrap();
        assert_eq!(r.components, 2);
    }

    #[test]
    fn pin_needs_prior() {
        let sil = Grid::new(4, 4, true);
        let cfg = IntegrationConfig {
            boundary: Boundary::PinToPrior,
            ..IntegrationConfig::default()
        };
        assert!(integrate_normals(&flat_normals(4, 4, [0.0, 0.0, 1.0]), &sil, None, &cfg).is_err());
    }

    #[test]
    fn pinned_plane_is_exact() {
        let (w, h) = (24, 20);
        let sil = Grid::from_fn(w, h, |x, y| (2..22).contains(&x) && (2..18).contains(&y));
        let slope = 0.3;
        let n = flat_normals(w, h, [-slope, 0.0, 1.0]);
        let prior = Grid::from_fn(w, h, |x, _| 5.0 + slope * x as f64);
        let cfg = IntegrationConfig {
            boundary: Boundary::PinToPrior,
            ..IntegrationConfig::default()
        };
        let r = integrate_normals(&n, &sil, Some(&prior), &cfg).unwrap();
        for y in 0..h {
            for x in 0..w {
                if *sil.get(x, y) {
                    assert!((r.depth.get(x, y) - prior.get(x, y)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn back_depth_conversion_mirrors_and_negates() {
        let back = Grid::from_fn(3, 1, |x, _| if x == 0 { 2.0 } else { f64::INFINITY });
        let f = back_depth_to_front_frame(&back);
        assert_eq!(*f.get(2, 0), -2.0);
        assert!(f.get(0, 0).is_infinite() && *f.get(0, 0) > 0.0);
    }

    fn cam(h: usize, w: usize) -> WeakPerspectiveCam {
        WeakPerspectiveCam::centered(10.0, h, w, View::Front)
    }

    #[test]
    fn one_pixel_silhouette_gives_empty_mesh() {
        let sil = Grid::from_fn(5, 5, |x, y| x == 2 && y == 2);
        let d = Grid::new(5, 5, 0.0);
        let img = Grid::new(5, 5, [1.0, 0.0, 0.0]);
        let (m, diag) = mesh_from_depth(&d, &d.map(|v| v + 1.0), &sil, &img, &cam(5, 5)).unwrap();
        assert!(m.faces.is_empty());
        assert!(!diag.warnings.is_empty());
    }

    #[test]
    fn box_depths_make_a_closed_slab() {
        let sil = Grid::from_fn(12, 10, |x, y| (2..9).contains(&x) && (3..8).contains(&y));
        let front = Grid::new(12, 10, 0.0);
        let back = Grid::new(12, 10, 4.0);
        let img = Grid::new(12, 10, [1.0, 0.0, 0.0]);
        let (m, diag) = mesh_from_depth(&front, &back, &sil, &img, &cam(10, 12)).unwrap();
        assert_eq!(diag.clamped_pixels, 0);
        assert_eq!(m.to_mesh().euler_characteristic(), 2);
        assert!(m.colors.iter().all(|c| *c == [1.0, 0.0, 0.0]));
        // every edge shared by exactly two faces
        let mut edges = std::collections::HashMap::new();
        for f in &m.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn inverted_depths_are_clamped() {
        let sil = Grid::new(4, 4, true);
        let front = Grid::from_fn(4, 4, |x, y| if x == 1 && y == 1 { 10.0 } else { 0.0 });
        let back = Grid::new(4, 4, 2.0);
        let img = Grid::new(4, 4, [0.0; 3]);
        let (_, diag) = mesh_from_depth(&front, &back, &sil, &img, &cam(4, 4)).unwrap();
        assert_eq!(diag.clamped_pixels, 1);
    }

    #[test]
    fn front_visible_quad_needs_no_infill() {
        let body = Mesh::new(
            vec![
                Vec3::new(-0.5, -0.5, 0.0),
                Vec3::new(0.5, -0.5, 0.0),
                Vec3::new(0.5, 0.5, 0.0),
                Vec3::new(-0.5, 0.5, 0.0),
            ],
            vec![[0, 2, 1], [0, 3, 2]],
        );
        let mut clothed = ClothedMesh::empty();
        let big = Mesh::new(
            vec![
                Vec3::new(-2.0, -2.0, -0.01),
                Vec3::new(2.0, -2.0, -0.01),
                Vec3::new(2.0, 2.0, -0.01),
                Vec3::new(-2.0, 2.0, -0.01),
            ],
            vec![[0, 2, 1], [0, 3, 2]],
        );
        clothed.vertices = big.vertices.clone();
        clothed.faces = big.faces.clone();
        clothed.colors = vec![[0.0; 3]; 4];
        clothed.origin = vec![Origin::FrontSurface; 4];
        clothed.pixel = vec![None; 4];
        let c = cam(20, 20);
        let (out, rep) = infill_from_body(&clothed, &body, &c, &c.with_view(View::Back), &InfillConfig::default()).unwrap();
        assert_eq!(rep.appended_triangles, 0);
        assert_eq!(out, clothed);
    }
}
