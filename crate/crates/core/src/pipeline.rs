//! End-to-end guidance generation and the synthetic test scene.
//!
//! Input directory layout (as written by [`make_fixture`]):
//!
//! ```text
//! body.json                   body model
//! poses.json                  estimated pose sequence (one entry per frame)
//! keypoints.json              2D keypoints per frame
//! frames/NNN.png              source video frames
//! garment/NNN.png             garment masks
//! keep/NNN.png                regions never masked (face, hands); optional
//! provider/front_normal_KKK.pfm, back_normal_KKK.pfm, silhouette_KKK.png
//!                             clothed normal maps and silhouette for keyframe KKK
//! ```
//!
//! The fixture also writes `gt/` with the ground-truth clothed mesh, poses
//! and guidance renders.
//!
//! Output directory layout of [`run_pipeline`]:
//!
//! ```text
//! keyframe.json               selected index and per-frame scores
//! fit/params.json, fit/report.json
//! recon/front_depth.pfm, recon/back_depth.pfm   pixel-unit depth (back in the back view)
//! recon/clothed.obj, recon/clothed_tags.json
//! rig/binding.bin
//! params.json                 body parameters per frame
//! guidance/NNN.png            textured guidance V
//! body/NNN.png                body normal renders M
//! mask/NNN.png                agnostic masks V_m
//! agnostic/NNN.png            clothing-agnostic frames V_a
//! manifest.json               config echo, stage summaries, SHA-256 of every file above
//! timings.json                wall-clock seconds per stage (not hashed)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{make_toy_body_with_layout, BodyParams, ParametricBody, ToyLayout};
use crate::error::{Error, Result, StageContext};
use crate::fit::{constant_provider, refine_cycles, CycleResult, FitConfig, ProvidedMaps};
use crate::grid::{ColorImage, Grid, Mask, NormalMap};
use crate::io;
use crate::keyframe::{select_keyframe, FrameScore, KeyframeConfig, Keypoints2D};
use crate::mask::{agnostic_frame, rect_mask, MaskConfig};
use crate::math::{normal_to_color, Vec3};
use crate::mesh::Mesh;
use crate::raster::{rasterize, RenderTargets, View, WeakPerspectiveCam, Want};
use crate::recon::{
    back_depth_to_front_frame, infill_from_body, integrate_normals, mesh_from_depth, ClothedMesh, InfillConfig, InfillReport, Integration,
    IntegrationConfig, MeshDiagnostics, Origin,
};
use crate::rig::{animate_and_render, bind_knn, PoseFrame, PoseSequence, DEFAULT_K};

pub const MANIFEST_SCHEMA: &str = "guidance3d.manifest/1";

pub fn frame_name(i: usize) -> String {
    format!("{i:03}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitStageConfig {
    /// Refinement cycles `T`.
    pub cycles: usize,
    /// Scale threshold `d` as a fraction of the initial camera scale.
    pub scale_threshold_rel: f64,
    pub lambda: f64,
    pub search: FitConfig,
}

impl Default for FitStageConfig {
    fn default() -> Self {
        Self {
            cycles: 10,
            scale_threshold_rel: 0.9,
            lambda: 1.0,
            search: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub k: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Keyframe image after 2D try-on; the original keyframe when unset.
    pub tryon_image: Option<PathBuf>,
    pub keyframe: KeyframeConfig,
    pub fit: FitStageConfig,
    pub integration: IntegrationConfig,
    pub infill: InfillConfig,
    pub rig: RigConfig,
    pub mask: MaskConfig,
    pub conditioning: crate::cond::SamplerConfig,
    pub schedule: crate::cond::ScheduleConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_dir: PathBuf::from("input"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            tryon_image: None,
            keyframe: KeyframeConfig::default(),
            fit: FitStageConfig::default(),
            integration: IntegrationConfig {
                prior_weight: 0.01,
                ..IntegrationConfig::default()
            },
            infill: InfillConfig::default(),
            rig: RigConfig::default(),
            mask: MaskConfig::default(),
            conditioning: crate::cond::SamplerConfig::default(),
            schedule: crate::cond::ScheduleConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.fit.cycles == 0 {
            return bad("fit.cycles must be at least 1".into());
        }
        if !(self.fit.scale_threshold_rel > 0.0 && self.fit.scale_threshold_rel.is_finite()) {
            return bad("fit.scale_threshold_rel must be positive".into());
        }
        if !(self.fit.lambda >= 0.0) {
            return bad("fit.lambda must be ≥ 0".into());
        }
        self.fit.search.validate().map_err(|e| Error::Config(format!("fit.search: {e}")))?;
        if !(self.integration.tolerance > 0.0) || !(self.integration.prior_weight >= 0.0) {
            return bad("integration.tolerance must be > 0 and prior_weight ≥ 0".into());
        }
        if self.rig.k == 0 {
            return bad("rig.k must be at least 1".into());
        }
        if self.mask.window == 0 {
            return bad("mask.window must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.keyframe.confidence_threshold) {
            return bad("keyframe.confidence_threshold must lie in [0, 1]".into());
        }
        if !(self.infill.snap_radius >= 0.0) || !(self.infill.cover_tolerance >= 0.0) {
            return bad("infill radii must be ≥ 0".into());
        }
        self.conditioning.validate().map_err(|e| Error::Config(format!("conditioning: {e}")))?;
        Ok(())
    }
}

// ---------------------------------------------------------------- fixture

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub seed: u64,
    pub frames: usize,
    pub resolution: usize,
    pub keyframe: usize,
    /// Ground-truth camera scale in pixels per meter.
    pub cam_scale: f64,
}

/// Joints whose segments make up the shirt in the synthetic scene.
const GARMENT_OWNERS: [&str; 7] = ["spine1", "spine2", "spine3", "left_collar", "right_collar", "left_shoulder", "right_shoulder"];
const KEEP_OWNERS: [&str; 6] = ["neck", "head", "left_wrist", "right_wrist", "left_hand", "right_hand"];
/// COCO keypoint name and the body joint it is read from.
pub const KEYPOINT_JOINTS: [(&str, &str); 13] = [
    ("nose", "head"),
    ("left_shoulder", "left_shoulder"),
    ("right_shoulder", "right_shoulder"),
    ("left_elbow", "left_elbow"),
    ("right_elbow", "right_elbow"),
    ("left_wrist", "left_wrist"),
    ("right_wrist", "right_wrist"),
    ("left_hip", "left_hip"),
    ("right_hip", "right_hip"),
    ("left_knee", "left_knee"),
    ("right_knee", "right_knee"),
    ("left_ankle", "left_ankle"),
    ("right_ankle", "right_ankle"),
];

/// Scripted motion: a slow turn, arms lifting towards the middle of the
/// clip, and a walking leg swing.
pub fn scripted_pose(body: &ParametricBody, i: usize, n: usize) -> PoseFrame {
    let phase = if n > 1 { std::f64::consts::TAU * i as f64 / n as f64 } else { 0.0 };
    let mut theta = vec![[0.0; 3]; body.joint_count()];
    let mut set = |name: &str, v: [f64; 3]| {
        if let Some(j) = body.joint_index(name) {
            theta[j] = v;
        }
    };
    let lift = 0.35 * (1.0 - phase.cos()) / 2.0;
    let swing = 0.3 * phase.sin();
    set("pelvis", [0.0, 0.35 * phase.sin(), 0.0]);
    set("left_shoulder", [0.0, 0.0, -lift]);
    set("right_shoulder", [0.0, 0.0, lift]);
    set("left_elbow", [0.0, 0.0, -0.15 * phase.sin()]);
    set("right_elbow", [0.0, 0.0, 0.15 * phase.sin()]);
    set("left_hip", [swing, 0.0, 0.0]);
    set("right_hip", [-swing, 0.0, 0.0]);
    set("left_knee", [0.3 * phase.sin().max(0.0), 0.0, 0.0]);
    set("right_knee", [0.3 * (-phase.sin()).max(0.0), 0.0, 0.0]);
    PoseFrame {
        theta,
        trans: [0.03 * phase.sin(), -0.075, 0.0],
    }
}

/// Rest template pushed `factor` away from each vertex's bone axis.
pub fn inflate_about_axes(body: &ParametricBody, layout: &ToyLayout, factor: f64) -> Vec<Vec3> {
    body.template()
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let a = layout.axis_point(v, p);
            a + (p - a) * factor
        })
        .collect()
}

fn checker_colors(points: &[Vec3], cell: f64) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|p| {
            let k = (p.x / cell).floor() as i64 + (p.y / cell).floor() as i64 + (p.z / cell).floor() as i64;
            if k.rem_euclid(2) == 0 {
                [0.85, 0.25, 0.2]
            } else {
                [0.95, 0.9, 0.75]
            }
        })
        .collect()
}

fn submesh(mesh: &Mesh, keep_face: impl Fn(usize) -> bool) -> Mesh {
    let faces = (0..mesh.faces.len()).filter(|&f| keep_face(f)).map(|f| mesh.faces[f]).collect();
    Mesh::new(mesh.vertices.clone(), faces)
}

fn owner_faces(body: &ParametricBody, layout: &ToyLayout, names: &[&str]) -> Vec<bool> {
    let owners: Vec<usize> = names.iter().filter_map(|n| body.joint_index(n)).collect();
    let pelvis = body.joint_index("pelvis");
    let spine1 = body.joint_index("spine1");
    let garment = names.contains(&"spine1");
    body.faces()
        .iter()
        .map(|f| {
            f.iter().all(|&v| {
                let seg = &layout.segments[layout.vertex_segment[v as usize]];
                owners.contains(&seg.owner) || (garment && Some(seg.owner) == pelvis && seg.child == spine1 && spine1.is_some())
            })
        })
        .collect()
}

/// Writes a synthetic scene with known ground truth to `out_dir`.
pub fn make_fixture(seed: u64, frames: usize, resolution: usize, out_dir: &Path) -> Result<FixtureSummary> {
    if frames == 0 {
        return Err(Error::InvalidArgument("fixture needs at least one frame".into()));
    }
    if resolution < 16 || !resolution.is_multiple_of(8) {
        return Err(Error::InvalidArgument("fixture resolution must be a multiple of 8, at least 16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (body, layout) = make_toy_body_with_layout(24, 16, seed)?;
    let clothed_body = body.with_template(inflate_about_axes(&body, &layout, 1.03))?;
    let colors = checker_colors(clothed_body.template(), 0.06);
    let garment_faces = owner_faces(&body, &layout, &GARMENT_OWNERS);
    let keep_faces = owner_faces(&body, &layout, &KEEP_OWNERS);

    let cam_scale = 0.42 * resolution as f64;
    let cam = WeakPerspectiveCam::centered(cam_scale, resolution, resolution, View::Front);
    let beta: Vec<f64> = (0..body.shape_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    let gt = PoseSequence {
        beta: beta.clone(),
        frames: (0..frames).map(|i| scripted_pose(&body, i, frames)).collect(),
        frame_rate: 25.0,
        cam_scale,
    };

    for d in ["frames", "garment", "keep", "provider", "gt/guidance", "gt/silhouette"] {
        io::create_dir_all(&out_dir.join(d))?;
    }
    body.write_json(&out_dir.join("body.json"))?;
    io::write_json(&out_dir.join("gt/poses.json"), &gt)?;

    // the estimator gets the pose right but is biased in shape, placement and scale
    let d_beta: Vec<f64> = (0..beta.len()).map(|_| rng.random_range(-0.4..0.4)).collect();
    let d_scale = rng.random_range(-0.08..0.08);
    let d_px = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
    let est_scale = cam_scale * (1.0 + d_scale);
    let estimated = PoseSequence {
        beta: beta.iter().zip(&d_beta).map(|(b, d)| b + d).collect(),
        frames: gt
            .frames
            .iter()
            .map(|f| PoseFrame {
                theta: f.theta.clone(),
                trans: [f.trans[0] + d_px[0] / est_scale, f.trans[1] + d_px[1] / est_scale, f.trans[2]],
            })
            .collect(),
        frame_rate: gt.frame_rate,
        cam_scale: est_scale,
    };
    io::write_json(&out_dir.join("poses.json"), &estimated)?;

    let renders: Vec<Result<(Mesh, RenderTargets, Vec<Vec3>)>> = crate::par::map_range(frames, |i| {
        let p = gt.params(i);
        let mesh = clothed_body.skin(&p)?.with_colors(colors.clone());
        let r = rasterize(&mesh, &cam, Want::ALL);
        Ok((mesh, r, body.posed_joints(&p)?))
    });
    let mut kps = Keypoints2D {
        width: resolution,
        height: resolution,
        frames: Vec::with_capacity(frames),
    };
    let mut gt_meshes = Vec::with_capacity(frames);
    for (i, r) in renders.into_iter().enumerate() {
        let (mesh, render, joints) = r?;
        let name = frame_name(i);
        io::write_color_png(&out_dir.join("frames").join(&name), &render.color)?;
        io::write_color_png(&out_dir.join("gt/guidance").join(&name), &render.color)?;
        io::write_mask_png(&out_dir.join("gt/silhouette").join(&name), &render.silhouette)?;
        let garment = rasterize(&submesh(&mesh, |f| garment_faces[f]), &cam, Want::SILHOUETTE).silhouette;
        let keep = rasterize(&submesh(&mesh, |f| keep_faces[f]), &cam, Want::SILHOUETTE).silhouette;
        io::write_mask_png(&out_dir.join("garment").join(&name), &garment)?;
        io::write_mask_png(&out_dir.join("keep").join(&name), &keep)?;
        let mut named = BTreeMap::new();
        for (kp, joint) in KEYPOINT_JOINTS {
            let j = body.joint_index(joint).expect("toy body has every keypoint joint");
            let [u, v, _] = cam.project_point(&joints[j]);
            let inside = u >= 0.0 && v >= 0.0 && u <= resolution as f64 && v <= resolution as f64;
            named.insert(kp.to_string(), [u, v, if inside { 1.0 } else { 0.0 }]);
        }
        kps.frames.push(named);
        gt_meshes.push(mesh);
    }
    kps.write_json(&out_dir.join("keypoints.json"))?;

    let (keyframe, _) = select_keyframe(&kps, &KeyframeConfig::default())?;
    let mesh = &gt_meshes[keyframe];
    let (front, back) = crate::par::join(|| rasterize(mesh, &cam, Want::GEOMETRY), || rasterize(mesh, &cam.with_view(View::Back), Want::GEOMETRY));
    write_provider(out_dir, keyframe, &front.normal, &back.normal, &front.silhouette)?;
    mesh.write_obj(&out_dir.join("gt/clothed.obj"))?;

    let summary = FixtureSummary {
        seed,
        frames,
        resolution,
        keyframe,
        cam_scale,
    };
    io::write_json(&out_dir.join("fixture.json"), &summary)?;
    Ok(summary)
}

pub fn provider_paths(input_dir: &Path, keyframe: usize) -> [PathBuf; 3] {
    let p = input_dir.join("provider");
    [
        p.join(format!("front_normal_{keyframe:03}.pfm")),
        p.join(format!("back_normal_{keyframe:03}.pfm")),
        p.join(format!("silhouette_{keyframe:03}.png")),
    ]
}

pub fn write_provider(input_dir: &Path, keyframe: usize, front: &NormalMap, back: &NormalMap, silhouette: &Mask) -> Result<()> {
    let [f, b, s] = provider_paths(input_dir, keyframe);
    io::create_dir_all(&input_dir.join("provider"))?;
    io::write_pfm_rgb(&f, front)?;
    io::write_pfm_rgb(&b, back)?;
    io::write_mask_png(&s, silhouette)
}

pub fn read_provider(input_dir: &Path, keyframe: usize) -> Result<ProvidedMaps> {
    let [f, b, s] = provider_paths(input_dir, keyframe);
    Ok(ProvidedMaps {
        front_normal: io::read_pfm_rgb(&f)?,
        back_normal: Some(io::read_pfm_rgb(&b)?),
        silhouette: io::read_mask_png(&s)?,
    })
}

// ---------------------------------------------------------------- stages

/// Inputs of a pipeline run, loaded from the input directory.
pub struct PipelineInputs {
    pub body: ParametricBody,
    pub poses: PoseSequence,
    pub keypoints: Keypoints2D,
    pub frames: Vec<ColorImage>,
    pub garment: Vec<Mask>,
    pub keep: Vec<Mask>,
}

fn read_sequence<T>(dir: &Path, n: usize, read: impl Fn(&Path) -> Result<T>) -> Result<Vec<T>> {
    (0..n).map(|i| read(&dir.join(frame_name(i)))).collect()
}

pub fn load_inputs(input_dir: &Path) -> Result<PipelineInputs> {
    let body = ParametricBody::read_json(&input_dir.join("body.json"))?;
    let poses = PoseSequence::read_json(&input_dir.join("poses.json"))?;
    let n = poses.len();
    let keypoints = Keypoints2D::read_json(&input_dir.join("keypoints.json"))?;
    if keypoints.frames.len() != n {
        return Err(Error::ShapeMismatch(format!("{} keypoint frames for {n} poses", keypoints.frames.len())));
    }
    let frames = read_sequence(&input_dir.join("frames"), n, io::read_color_png)?;
    for f in &frames {
        f.ensure_same_dims(&frames[0], "video frames")?;
    }
    let garment = read_sequence(&input_dir.join("garment"), n, io::read_mask_png)?;
    let keep_dir = input_dir.join("keep");
    let keep = if keep_dir.is_dir() {
        read_sequence(&keep_dir, n, io::read_mask_png)?
    } else {
        Vec::new()
    };
    Ok(PipelineInputs {
        body,
        poses,
        keypoints,
        frames,
        garment,
        keep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub cycle_losses: Vec<(f64, f64)>,
    pub final_loss: f64,
    pub evaluations: usize,
    pub scale_threshold: f64,
}

/// Fits the body at the keyframe against the provider maps.
pub fn fit_stage(body: &ParametricBody, init: &BodyParams, maps: ProvidedMaps, cfg: &PipelineConfig) -> Result<(CycleResult, FitReport)> {
    let (h, w) = maps.silhouette.dims();
    let cam = WeakPerspectiveCam::centered(init.cam_scale, h, w, View::Front);
    let threshold = cfg.fit.scale_threshold_rel * init.cam_scale;
    let mut search = cfg.fit.search.clone();
    search.seed = cfg.seed;
    let result = refine_cycles(body, init, &cam, constant_provider(maps), cfg.fit.cycles, threshold, cfg.fit.lambda, &search)?;
    let report = FitReport {
        cycle_losses: result.cycle_losses.clone(),
        final_loss: result.loss.total,
        evaluations: result.evaluations,
        scale_threshold: threshold,
    };
    Ok((result, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub front_components: usize,
    pub back_components: usize,
    pub front_iterations: usize,
    pub back_iterations: usize,
    pub mesh: MeshDiagnostics,
    pub infill: InfillReport,
    pub vertices: usize,
    pub faces: usize,
}

pub struct Reconstruction {
    pub mesh: ClothedMesh,
    /// Front-view depth in pixel units.
    pub front_depth: Grid<f64>,
    /// Back-view depth in pixel units, in the back view's own lattice.
    pub back_depth: Grid<f64>,
    pub report: ReconReport,
}

/// Front and back depth from the provider normal maps, each anchored to the
/// fitted body's depth in the same view.
pub fn integrate_stage(
    body: &ParametricBody,
    params: &BodyParams,
    maps: &ProvidedMaps,
    integration: &IntegrationConfig,
) -> Result<(Integration, Integration)> {
    let (h, w) = maps.silhouette.dims();
    let back_normal = maps
        .back_normal
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("integration needs a back normal map".into()))?;
    let cam = WeakPerspectiveCam::centered(params.cam_scale, h, w, View::Front);
    let body_mesh = body.skin(params)?;
    let back_sil = maps.silhouette.mirror_x();
    let (f, b) = crate::par::join(
        || -> Result<_> {
            let prior = rasterize(&body_mesh, &cam, Want::SILHOUETTE).depth.map(|d| d * params.cam_scale);
            integrate_normals(&maps.front_normal, &maps.silhouette, Some(&prior), integration)
        },
        || -> Result<_> {
            let prior = rasterize(&body_mesh, &cam.with_view(View::Back), Want::SILHOUETTE).depth.map(|d| d * params.cam_scale);
            integrate_normals(back_normal, &back_sil, Some(&prior), integration)
        },
    );
    Ok((f?, b?))
}

/// Two-sheet mesh from integrated depths (back depth in the back view's own
/// lattice), textured from `image`, with unseen regions filled from the body.
pub fn mesh_stage(
    body: &ParametricBody,
    params: &BodyParams,
    silhouette: &Mask,
    front_depth: &Grid<f64>,
    back_depth: &Grid<f64>,
    image: &ColorImage,
    infill: &InfillConfig,
) -> Result<(ClothedMesh, MeshDiagnostics, InfillReport)> {
    let (h, w) = silhouette.dims();
    image.ensure_same_dims(silhouette, "try-on image vs silhouette")?;
    let cam = WeakPerspectiveCam::centered(params.cam_scale, h, w, View::Front);
    let body_mesh = body.skin(params)?;
    let (mesh, diag) = mesh_from_depth(front_depth, &back_depth_to_front_frame(back_depth), silhouette, image, &cam)?;
    let (mesh, report) = infill_from_body(&mesh, &body_mesh, &cam, &cam.with_view(View::Back), infill)?;
    Ok((mesh, diag, report))
}

/// [`integrate_stage`] followed by [`mesh_stage`].
pub fn reconstruct_stage(
    body: &ParametricBody,
    params: &BodyParams,
    maps: &ProvidedMaps,
    image: &ColorImage,
    integration: &IntegrationConfig,
    infill: &InfillConfig,
) -> Result<Reconstruction> {
    image.ensure_same_dims(&maps.silhouette, "try-on image vs silhouette")?;
    let (mut f, mut b) = integrate_stage(body, params, maps, integration)?;
    // depth is stored as f32; meshing from the stored precision lets a run
    // resumed from disk reproduce the same mesh
    for d in [&mut f.depth, &mut b.depth] {
        d.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    let (mesh, diag, infill_report) = mesh_stage(body, params, &maps.silhouette, &f.depth, &b.depth, image, infill)?;
    let report = ReconReport {
        front_components: f.components,
        back_components: b.components,
        front_iterations: f.iterations,
        back_iterations: b.iterations,
        mesh: diag,
        infill: infill_report,
        vertices: mesh.vertices.len(),
        faces: mesh.faces.len(),
    };
    Ok(Reconstruction {
        mesh,
        front_depth: f.depth,
        back_depth: b.depth,
        report,
    })
}

/// Per-frame parameters for animation: the estimated poses with the
/// keyframe's fitted shape and scale, and the keyframe's translation
/// correction applied to every frame.
pub fn animation_params(poses: &PoseSequence, keyframe: usize, fitted: &BodyParams) -> PoseSequence {
    let k = &poses.frames[keyframe].trans;
    let dt = [fitted.trans[0] - k[0], fitted.trans[1] - k[1], fitted.trans[2] - k[2]];
    PoseSequence {
        beta: fitted.beta.clone(),
        frames: poses
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| PoseFrame {
                theta: f.theta.clone(),
                trans: if i == keyframe { fitted.trans } else { [f.trans[0] + dt[0], f.trans[1] + dt[1], f.trans[2] + dt[2]] },
            })
            .collect(),
        frame_rate: poses.frame_rate,
        cam_scale: fitted.cam_scale,
    }
}

pub fn write_tags(path: &Path, mesh: &ClothedMesh, extra: &impl Serialize) -> Result<()> {
    #[derive(Serialize)]
    struct Tags<'a, E: Serialize> {
        origin: &'a [Origin],
        front_surface: usize,
        back_surface: usize,
        body_infill: usize,
        diagnostics: &'a E,
    }
    io::write_json(
        path,
        &Tags {
            origin: &mesh.origin,
            front_surface: mesh.count(Origin::FrontSurface),
            back_surface: mesh.count(Origin::BackSurface),
            body_infill: mesh.count(Origin::BodyInfill),
            diagnostics: extra,
        },
    )
}

pub fn read_tags(path: &Path) -> Result<Vec<Origin>> {
    #[derive(Deserialize)]
    struct Tags {
        origin: Vec<Origin>,
    }
    Ok(io::read_json::<Tags>(path, "tag sidecar")?.origin)
}

pub fn normal_image(r: &RenderTargets) -> ColorImage {
    Grid::from_fn(r.normal.width(), r.normal.height(), |x, y| {
        if *r.silhouette.get(x, y) {
            normal_to_color(&crate::math::to_vec3(*r.normal.get(x, y)))
        } else {
            [0.0; 3]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub config: PipelineConfig,
    pub keyframe: usize,
    pub frames: usize,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    pub fit: FitReport,
    pub recon: ReconReport,
    pub borrowed_mask_frames: Vec<usize>,
    pub files: Vec<FileEntry>,
}

/// Everything a run produced, with in-memory copies of the sequences.
pub struct GuidancePack {
    pub manifest: Manifest,
    pub guidance: Vec<RenderTargets>,
    pub body_frames: Vec<RenderTargets>,
    pub masks: Vec<Mask>,
    pub agnostic: Vec<ColorImage>,
    pub params: Vec<BodyParams>,
    pub clothed: ClothedMesh,
    pub timings: Vec<(String, f64)>,
}

struct Outputs {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let sha256 = io::sha256_file(&self.path(rel))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    fn json(&mut self, rel: &str, v: &impl Serialize) -> Result<()> {
        io::write_json(&self.path(rel), v)?;
        self.record(rel)
    }
}

/// Runs every stage in order and writes the guidance pack to `cfg.out_dir`.
/// Each error names the stage it came from; files written before a failure
/// stay on disk.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<GuidancePack> {
    cfg.validate()?;
    let mut timings: Vec<(String, f64)> = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        let s = clock.elapsed().as_secs_f64();
        log::info!("stage {name}: {s:.3} s");
        timings.push((name.to_string(), s));
        clock = Instant::now();
    };

    let inputs = load_inputs(&cfg.input_dir).stage("load")?;
    let n = inputs.poses.len();
    let (h, w) = inputs.frames[0].dims();
    let mut out = Outputs {
        root: cfg.out_dir.clone(),
        files: Vec::new(),
    };
    for d in ["fit", "recon", "rig", "guidance", "body", "mask", "agnostic"] {
        io::create_dir_all(&out.path(d)).stage("load")?;
    }
    lap("load", &mut timings);

    let (keyframe, scores) = select_keyframe(&inputs.keypoints, &cfg.keyframe).stage("select_keyframe")?;
    #[derive(Serialize)]
    struct KeyframeOut<'a> {
        index: usize,
        scores: &'a [FrameScore],
    }
    out.json("keyframe.json", &KeyframeOut { index: keyframe, scores: &scores }).stage("select_keyframe")?;
    lap("select_keyframe", &mut timings);

    let maps = read_provider(&cfg.input_dir, keyframe).stage("refine_cycles")?;
    let init = inputs.poses.params(keyframe);
    let (fit, fit_report) = fit_stage(&inputs.body, &init, maps.clone(), cfg).stage("refine_cycles")?;
    fit.params.write_json(&out.path("fit/params.json")).stage("refine_cycles")?;
    out.record("fit/params.json").stage("refine_cycles")?;
    out.json("fit/report.json", &fit_report).stage("refine_cycles")?;
    lap("refine_cycles", &mut timings);

    let image = match &cfg.tryon_image {
        Some(p) => io::read_color_png(p).stage("integrate_normals")?,
        None => inputs.frames[keyframe].clone(),
    };
    let recon = reconstruct_stage(&inputs.body, &fit.params, &maps, &image, &cfg.integration, &cfg.infill).stage("reconstruct")?;
    io::write_pfm_gray(&out.path("recon/front_depth.pfm"), &recon.front_depth).stage("reconstruct")?;
    io::write_pfm_gray(&out.path("recon/back_depth.pfm"), &recon.back_depth).stage("reconstruct")?;
    recon.mesh.to_mesh().write_obj(&out.path("recon/clothed.obj")).stage("reconstruct")?;
    write_tags(&out.path("recon/clothed_tags.json"), &recon.mesh, &recon.report).stage("reconstruct")?;
    for f in ["recon/front_depth.pfm", "recon/back_depth.pfm", "recon/clothed.obj", "recon/clothed_tags.json"] {
        out.record(f).stage("reconstruct")?;
    }
    lap("reconstruct", &mut timings);

    let binding = bind_knn(&recon.mesh.vertices, &inputs.body, &fit.params, cfg.rig.k).stage("bind_knn")?;
    binding.write(&out.path("rig/binding.bin")).stage("bind_knn")?;
    out.record("rig/binding.bin").stage("bind_knn")?;
    lap("bind_knn", &mut timings);

    let seq = animation_params(&inputs.poses, keyframe, &fit.params);
    let params: Vec<BodyParams> = (0..n).map(|i| seq.params(i)).collect();
    out.json("params.json", &params).stage("animate_and_render")?;
    let base = WeakPerspectiveCam::centered(seq.cam_scale, h, w, View::Front);
    let guidance = animate_and_render(&recon.mesh, &binding, &inputs.body, &seq, &base).stage("animate_and_render")?;
    for (i, g) in guidance.iter().enumerate() {
        let rel = format!("guidance/{}", frame_name(i));
        io::write_color_png(&out.path(&rel), &g.color).stage("animate_and_render")?;
        out.record(&rel).stage("animate_and_render")?;
    }
    lap("animate_and_render", &mut timings);

    let body_frames: Vec<RenderTargets> = inputs
        .body
        .skin_batch(&params)
        .stage("render_body")?
        .iter()
        .map(|m| rasterize(m, &base, Want::GEOMETRY))
        .collect();
    for (i, r) in body_frames.iter().enumerate() {
        let rel = format!("body/{}", frame_name(i));
        io::write_color_png(&out.path(&rel), &normal_image(r)).stage("render_body")?;
        out.record(&rel).stage("render_body")?;
    }
    lap("render_body", &mut timings);

    let masks = rect_mask(&inputs.garment, &inputs.keep, &cfg.mask).stage("rect_mask")?;
    let mut agnostic = Vec::with_capacity(n);
    for i in 0..n {
        let rel = format!("mask/{}", frame_name(i));
        io::write_mask_png(&out.path(&rel), &masks.masks[i]).stage("rect_mask")?;
        out.record(&rel).stage("rect_mask")?;
        let a = agnostic_frame(&inputs.frames[i], &masks.masks[i]).stage("agnostic")?;
        let rel = format!("agnostic/{}", frame_name(i));
        io::write_color_png(&out.path(&rel), &a).stage("agnostic")?;
        out.record(&rel).stage("agnostic")?;
        agnostic.push(a);
    }
    lap("rect_mask", &mut timings);

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        config: cfg.clone(),
        keyframe,
        frames: n,
        resolution: (h, w),
        fit: fit_report,
        recon: recon.report.clone(),
        borrowed_mask_frames: masks.borrowed.clone(),
        files: out.files.clone(),
    };
    io::write_json(&out.path("manifest.json"), &manifest).stage("manifest")?;
    let timing_map: BTreeMap<&str, f64> = timings.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    io::write_json(&out.path("timings.json"), &timing_map).stage("manifest")?;

    Ok(GuidancePack {
        manifest,
        guidance,
        body_frames,
        masks: masks.masks,
        agnostic,
        params,
        clothed: recon.mesh,
        timings,
    })
}

/// Recomputes every hash listed in `out_dir/manifest.json`.
pub fn verify_manifest(out_dir: &Path) -> Result<Manifest> {
    let path = out_dir.join("manifest.json");
    let m: Manifest = io::read_json(&path, "manifest")?;
    for f in &m.files {
        let actual = io::sha256_file(&out_dir.join(&f.path))?;
        if actual != f.sha256 {
            return Err(Error::format("manifest", &path, format!("hash mismatch for {}", f.path)));
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------- conditioning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub index: u64,
    pub draw: crate::cond::TrainingDraw,
    pub timestep: usize,
    /// Frames that went into the tensors (one for image draws).
    pub frames: Vec<usize>,
    pub denoiser_input: crate::cond::TensorManifest,
    pub reference: crate::cond::TensorManifest,
    pub v_target: crate::cond::TensorManifest,
}

/// Builds one training example from a finished run: the 17-channel denoiser
/// input, the width-concatenated reference features and the v-target, all
/// with the mock encoder. Written to `out_dir/conditioning/`.
pub fn conditioning_stage(cfg: &PipelineConfig, index: u64) -> Result<ConditioningReport> {
    use crate::cond::*;
    use ndarray::{s, Axis};
    use rand_distr::StandardNormal;

    cfg.validate()?;
    let inputs = load_inputs(&cfg.input_dir)?;
    let out = &cfg.out_dir;
    #[derive(Deserialize)]
    struct KeyframeIn {
        index: usize,
    }
    let keyframe = io::read_json::<KeyframeIn>(&out.join("keyframe.json"), "keyframe record")?.index;
    let n = inputs.frames.len();
    let read_dir = |d: &str| read_sequence(&out.join(d), n, io::read_color_png);
    let (agnostic, body, guidance) = (read_dir("agnostic")?, read_dir("body")?, read_dir("guidance")?);
    let masks = read_sequence(&out.join("mask"), n, io::read_mask_png)?;

    let draw = sample_training_batch(cfg.seed, index, &cfg.conditioning);
    let frames: Vec<usize> = if draw.source == Source::Image { vec![keyframe] } else { (0..n).collect() };
    let pick = |v: &[ColorImage]| -> Vec<ColorImage> { frames.iter().map(|&i| v[i].clone()).collect() };
    let pick_masks: Vec<Mask> = frames.iter().map(|&i| masks[i].clone()).collect();

    let sched = make_schedule(&cfg.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
    rng.set_stream(index);
    let timestep = rng.random_range(0..sched.len());
    let z0 = mock_encode(&pick(&inputs.frames))?;
    let eps = z0.map(|_| rng.sample::<f64, _>(StandardNormal));
    let zt = add_noise(&z0, &eps, timestep, &sched)?;
    let x = assemble_denoiser_input(
        &zt,
        &mock_encode(&pick(&agnostic))?,
        &resize_masks(&pick_masks)?,
        &mock_encode(&pick(&body))?,
        &mock_encode(&pick(&guidance))?,
        &draw.flags,
    )?;

    let frame = &inputs.frames[keyframe];
    let garment = &inputs.garment[keyframe];
    let cloth_img = Grid::from_fn(frame.width(), frame.height(), |x, y| if *garment.get(x, y) { *frame.get(x, y) } else { [0.0; 3] });
    let tryon_img = match &cfg.tryon_image {
        Some(p) => io::read_color_png(p)?,
        None => frame.clone(),
    };
    let cloth = mock_encode(&[cloth_img])?.index_axis_move(Axis(2), 0);
    let tryon = mock_encode(&[tryon_img])?.index_axis_move(Axis(2), 0);
    let (cloth, tryon) = drop_references(&cloth, &tryon, &draw.flags);
    let reference = reference_concat(&zt.slice(s![.., 0..LATENT_CHANNELS, .., .., ..]).to_owned(), &cloth, &tryon)?;
    let v = v_target(&z0, &eps, timestep, &sched)?;

    let dir = out.join("conditioning");
    let report = ConditioningReport {
        index,
        draw,
        timestep,
        frames,
        denoiser_input: dump_tensor(&dir, "denoiser_input", &x)?,
        reference: dump_tensor(&dir, "reference", &reference)?,
        v_target: dump_tensor(&dir, "v_target", &v)?,
    };
    io::write_json(&dir.join("example.json"), &report)?;
    Ok(report)
}
