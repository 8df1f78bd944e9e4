//! Weak-perspective camera and z-buffered triangle rasterization.
//!
//! Pixel `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`; a pixel
//! belongs to a triangle when its center lies inside, with ties on an edge
//! resolved by the top-left rule. Depth grows away from the camera and the
//! nearest surface wins; on exact depth ties the earlier triangle is kept.
//!
//! Normal maps are expressed in view coordinates (u right, v down, depth
//! away) and hold the normal pointing *into* the surface, so a surface
//! squarely facing the camera reads `(0, 0, 1)`. With this orientation the
//! depth gradient satisfies `∂z/∂u = -n_x / n_z`, `∂z/∂v = -n_y / n_z`.

use serde::{Deserialize, Serialize};

use crate::grid::{ColorImage, DepthMap, Grid, Mask, NormalMap};
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::par;

/// Which side of the subject the camera looks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    Front,
    /// Mirror in x, then negate z.
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspectiveCam {
    /// Pixels per meter.
    pub scale: f64,
    pub principal_offset: [f64; 2],
    /// `(height, width)`
    pub image_size: (usize, usize),
    pub view: View,
}

impl WeakPerspectiveCam {
    /// Camera with the principal point at the image center.
    pub fn centered(scale: f64, height: usize, width: usize, view: View) -> Self {
        Self {
            scale,
            principal_offset: [width as f64 / 2.0, height as f64 / 2.0],
            image_size: (height, width),
            view,
        }
    }

    pub fn with_view(&self, view: View) -> Self {
        Self { view, ..*self }
    }

    pub fn with_scale(&self, scale: f64) -> Self {
        Self { scale, ..*self }
    }

    pub fn width(&self) -> usize {
        self.image_size.1
    }

    pub fn height(&self) -> usize {
        self.image_size.0
    }

    /// World point to view-space point (mirroring for the back view).
    #[inline]
    pub fn to_view(&self, p: &Vec3) -> Vec3 {
        match self.view {
            View::Front => *p,
            View::Back => Vec3::new(-p.x, p.y, -p.z),
        }
    }

    /// `(u, v, depth)` for one world point.
    #[inline]
    pub fn project_point(&self, p: &Vec3) -> [f64; 3] {
        let q = self.to_view(p);
        [
            self.scale * q.x + self.principal_offset[0],
            self.scale * q.y + self.principal_offset[1],
            q.z,
        ]
    }

    /// Inverse of [`project_point`](Self::project_point) for a given depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let x = (u - self.principal_offset[0]) / self.scale;
        let y = (v - self.principal_offset[1]) / self.scale;
        match self.view {
            View::Front => Vec3::new(x, y, depth),
            View::Back => Vec3::new(-x, y, -depth),
        }
    }

    /// World-space outward normal to the normal-map convention of this view.
    #[inline]
    pub fn map_normal(&self, outward: &Vec3) -> Vec3 {
        match self.view {
            View::Front => -outward,
            View::Back => Vec3::new(outward.x, -outward.y, outward.z),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.scale > 0.0 && self.scale.is_finite() && self.image_size.0 >= 1 && self.image_size.1 >= 1
    }
}

/// Projects points to pixel coordinates and depths.
pub fn project(cam: &WeakPerspectiveCam, points: &[Vec3]) -> (Vec<[f64; 2]>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let [u, v, d] = cam.project_point(p);
            ([u, v], d)
        })
        .unzip()
}

/// Which optional maps to produce. Silhouette and depth are always rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Want {
    pub normal: bool,
    pub color: bool,
}

impl Want {
    pub const ALL: Want = Want { normal: true, color: true };
    pub const GEOMETRY: Want = Want { normal: true, color: false };
    pub const SILHOUETTE: Want = Want { normal: false, color: false };
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderTargets {
    pub silhouette: Mask,
    /// Zero outside the silhouette.
    pub normal: NormalMap,
    /// `+inf` outside the silhouette.
    pub depth: DepthMap,
    pub color: ColorImage,
    /// Index of the front-most triangle per pixel.
    pub face_id: Grid<Option<u32>>,
    pub degenerate_triangles: usize,
}

impl RenderTargets {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            silhouette: Grid::new(width, height, false),
            normal: Grid::new(width, height, [0.0; 3]),
            depth: Grid::new(width, height, f64::INFINITY),
            color: Grid::new(width, height, [0.0; 3]),
            face_id: Grid::new(width, height, None),
            degenerate_triangles: 0,
        }
    }
}

struct ScreenTri {
    face: u32,
    p: [[f64; 3]; 3],
    /// Twice the signed area after orientation fix.
    area2: f64,
    /// Vertex order after orientation fix.
    order: [usize; 3],
    y_min: usize,
    y_max: usize,
    x_min: usize,
    x_max: usize,
}

#[inline]
fn edge(a: &[f64; 3], b: &[f64; 3], px: f64, py: f64) -> f64 {
    (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
}

#[inline]
fn is_top_left(a: &[f64; 3], b: &[f64; 3]) -> bool {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

const ROWS_PER_BAND: usize = 16;

/// Depth plus the winning face and its barycentrics.
type Fragment = (f64, Option<(u32, [f64; 3])>);

/// Renders `mesh` through `cam`.
///
/// Zero-area triangles are skipped and counted in
/// [`RenderTargets::degenerate_triangles`]. Colors default to black when the
/// mesh has none.
pub fn rasterize(mesh: &Mesh, cam: &WeakPerspectiveCam, want: Want) -> RenderTargets {
    let (h, w) = cam.image_size;
    let mut out = RenderTargets::empty(h, w);
    if mesh.faces.is_empty() || h == 0 || w == 0 {
        return out;
    }
    let screen: Vec<[f64; 3]> = mesh.vertices.iter().map(|p| cam.project_point(p)).collect();
    let normals = if want.normal {
        mesh.vertex_normals().iter().map(|n| cam.map_normal(n)).collect()
    } else {
        Vec::new()
    };

    let mut tris = Vec::with_capacity(mesh.faces.len());
    let mut degenerate = 0usize;
    for (fi, f) in mesh.faces.iter().enumerate() {
        let p = [screen[f[0] as usize], screen[f[1] as usize], screen[f[2] as usize]];
        let area2 = edge(&p[0], &p[1], p[2][0], p[2][1]);
        if !area2.is_finite() || area2.abs() < 1e-12 {
            degenerate += 1;
            continue;
        }
        let order = if area2 > 0.0 { [0, 1, 2] } else { [0, 2, 1] };
        let xs = [p[0][0], p[1][0], p[2][0]];
        let ys = [p[0][1], p[1][1], p[2][1]];
        let min_x = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_x = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_y = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // pixel centers in [min, max]: i + 0.5 >= min  <=>  i >= ceil(min - 0.5)
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        tris.push(ScreenTri {
            face: fi as u32,
            p,
            area2: area2.abs(),
            order,
            y_min: y0 as usize,
            y_max: y1 as usize,
            x_min: x0 as usize,
            x_max: x1 as usize,
        });
    }
    out.degenerate_triangles = degenerate;

    let bands = h.div_ceil(ROWS_PER_BAND);
    let mut band_tris: Vec<Vec<usize>> = vec![Vec::new(); bands];
    for (ti, t) in tris.iter().enumerate() {
        for band in &mut band_tris[t.y_min / ROWS_PER_BAND..=t.y_max / ROWS_PER_BAND] {
            band.push(ti);
        }
    }

    // each band owns its rows of the z-buffer and visits triangles in mesh order
    let mut fragments: Vec<Fragment> = vec![(f64::INFINITY, None); h * w];
    par::for_each_chunk_mut(&mut fragments, ROWS_PER_BAND * w, |band, chunk| {
        let row0 = band * ROWS_PER_BAND;
        let rows = chunk.len() / w;
        for &ti in &band_tris[band] {
            let t = &tris[ti];
            let [i0, i1, i2] = t.order;
            let (a, b, c) = (&t.p[i0], &t.p[i1], &t.p[i2]);
            let tl = [is_top_left(b, c), is_top_left(c, a), is_top_left(a, b)];
            let ys = t.y_min.max(row0);
            let ye = t.y_max.min(row0 + rows - 1);
            for y in ys..=ye {
                let py = y as f64 + 0.5;
                for x in t.x_min..=t.x_max {
                    let px = x as f64 + 0.5;
                    let e = [edge(b, c, px, py), edge(c, a, px, py), edge(a, b, px, py)];
                    let inside = (0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && tl[k]));
                    if !inside {
                        continue;
                    }
                    let bary_ordered = [e[0] / t.area2, e[1] / t.area2, e[2] / t.area2];
                    let mut bary = [0.0; 3];
                    bary[i0] = bary_ordered[0];
                    bary[i1] = bary_ordered[1];
                    bary[i2] = bary_ordered[2];
                    let z = bary[0] * t.p[0][2] + bary[1] * t.p[1][2] + bary[2] * t.p[2][2];
                    let slot = &mut chunk[(y - row0) * w + x];
                    if z < slot.0 {
                        *slot = (z, Some((t.face, bary)));
                    }
                }
            }
        }
    });

    let colors = if want.color { mesh.colors.as_ref() } else { None };
    for (idx, (z, frag)) in fragments.into_iter().enumerate() {
        let Some((face, bary)) = frag else { continue };
        let f = mesh.faces[face as usize];
        out.silhouette.data_mut()[idx] = true;
        out.depth.data_mut()[idx] = z;
        out.face_id.data_mut()[idx] = Some(face);
        if want.normal {
            let n = normals[f[0] as usize] * bary[0] + normals[f[1] as usize] * bary[1] + normals[f[2] as usize] * bary[2];
            if let Some(n) = n.try_normalize(1e-12) {
                out.normal.data_mut()[idx] = [n.x, n.y, n.z];
            }
        }
        if let Some(cols) = colors {
            let mut c = [0.0; 3];
            for k in 0..3 {
                let vc = cols[f[k] as usize];
                for ch in 0..3 {
                    c[ch] += vc[ch] * bary[k];
                }
            }
            out.color.data_mut()[idx] = c;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(h: usize, w: usize) -> WeakPerspectiveCam {
        WeakPerspectiveCam::centered(10.0, h, w, View::Front)
    }

    fn quad(z: f64, half: f64) -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(-half, -half, z),
                Vec3::new(half, -half, z),
                Vec3::new(half, half, z),
                Vec3::new(-half, half, z),
            ],
            // wound so the outward normal faces the front camera (-z)
            vec![[0, 2, 1], [0, 3, 2]],
        )
    }

    #[test]
    fn origin_projects_to_center() {
        let c = cam(20, 30);
        let (uv, d) = project(&c, &[Vec3::zeros()]);
        assert_eq!(uv[0], [15.0, 10.0]);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn scale_is_linear() {
        let pts = [Vec3::new(0.3, -0.2, 1.0), Vec3::new(-0.5, 0.7, 2.0)];
        let (a, _) = project(&cam(20, 20), &pts);
        let (b, _) = project(&cam(20, 20).with_scale(20.0), &pts);
        let da = ((a[0][0] - a[1][0]).powi(2) + (a[0][1] - a[1][1]).powi(2)).sqrt();
        let db = ((b[0][0] - b[1][0]).powi(2) + (b[0][1] - b[1][1]).powi(2)).sqrt();
        assert!((db - 2.0 * da).abs() < 1e-12);
    }

    #[test]
    fn back_view_is_mirrored_front() {
        let p = Vec3::new(0.3, -0.2, 1.5);
        let back = cam(20, 20).with_view(View::Back).project_point(&p);
        let front = cam(20, 20).project_point(&Vec3::new(-p.x, p.y, -p.z));
        assert_eq!(back, front);
    }

    #[test]
    fn unproject_inverts_project() {
        for view in [View::Front, View::Back] {
            let c = cam(20, 30).with_view(view);
            let p = Vec3::new(0.3, -0.2, 1.5);
            let [u, v, d] = c.project_point(&p);
            assert!((c.unproject(u, v, d) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_mesh_renders_background() {
        let r = rasterize(&Mesh::empty(), &cam(8, 8), Want::ALL);
        assert_eq!(r.silhouette.count(), 0);
        assert!(r.depth.data().iter().all(|d| d.is_infinite() && *d > 0.0));
    }

    #[test]
    fn front_facing_quad_has_plus_z_normal() {
        let r = rasterize(&quad(1.0, 0.5), &cam(16, 16), Want::ALL);
        assert!(r.silhouette.count() > 0);
        for (s, n) in r.silhouette.data().iter().zip(r.normal.data()) {
            if *s {
                assert!((n[0]).abs() < 1e-4 && n[1].abs() < 1e-4 && (n[2] - 1.0).abs() < 1e-4);
            }
        }
        let back = rasterize(&quad(1.0, 0.5), &cam(16, 16).with_view(View::Back), Want::ALL);
        let n = back.normal.data()[back.silhouette.data().iter().position(|&s| s).unwrap()];
        assert!((n[2] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn nearer_quad_wins() {
        let mut m = quad(2.0, 0.5);
        m.append(&quad(1.0, 0.3));
        let r = rasterize(&m, &cam(16, 16), Want::SILHOUETTE);
        let small = rasterize(&quad(1.0, 0.3), &cam(16, 16), Want::SILHOUETTE);
        for i in 0..r.depth.len() {
            if small.silhouette.data()[i] {
                assert_eq!(r.depth.data()[i], 1.0);
            } else if r.silhouette.data()[i] {
                assert_eq!(r.depth.data()[i], 2.0);
            }
        }
    }

    #[test]
    fn shared_edge_covers_each_pixel_once() {
        // two triangles of a quad whose diagonal passes through pixel centers
        let c = WeakPerspectiveCam {
            scale: 1.0,
            principal_offset: [0.0, 0.0],
            image_size: (8, 8),
            view: View::Front,
        };
        let m = Mesh::new(
            vec![
                Vec3::new(0.5, 0.5, 1.0),
                Vec3::new(6.5, 0.5, 1.0),
                Vec3::new(6.5, 6.5, 1.0),
                Vec3::new(0.5, 6.5, 1.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let r = rasterize(&m, &c, Want::SILHOUETTE);
        let mut hits = vec![0; 64];
        for f in 0..2 {
            let single = Mesh::new(m.vertices.clone(), vec![m.faces[f]]);
            let rr = rasterize(&single, &c, Want::SILHOUETTE);
            for (h, s) in hits.iter_mut().zip(rr.silhouette.data()) {
                *h += *s as usize;
            }
        }
        assert!(hits.iter().all(|&h| h <= 1));
        assert_eq!(hits.iter().sum::<usize>(), r.silhouette.count());
    }

    #[test]
    fn degenerate_triangles_are_counted() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)],
            vec![[0, 1, 2]],
        );
        assert_eq!(rasterize(&m, &cam(8, 8), Want::ALL).degenerate_triangles, 1);
    }

    #[test]
    fn color_is_interpolated() {
        let m = quad(1.0, 0.5).with_colors(vec![[1.0, 0.0, 0.0]; 4]);
        let r = rasterize(&m, &cam(16, 16), Want::ALL);
        for (s, c) in r.silhouette.data().iter().zip(r.color.data()) {
            if *s {
                assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12);
            }
        }
    }
}
