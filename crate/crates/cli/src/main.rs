//! Command-line front end for the guidance pipeline.
//!
//! Every subcommand reads the same directory layout as `run`, so the stages
//! can be executed one at a time:
//!
//! ```text
//! guidance3d fixture --out-dir scene
//! guidance3d --input-dir scene --out-dir out select
//! guidance3d --input-dir scene --out-dir out fit
//! ...
//! ```
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guidance3d::body::BodyParams;
use guidance3d::error::StageContext;
use guidance3d::io;
use guidance3d::keyframe::select_keyframe;
use guidance3d::mask::{agnostic_frame, rect_mask};
use guidance3d::mesh::Mesh;
use guidance3d::pipeline::{self, frame_name, PipelineConfig};
use guidance3d::raster::{rasterize, View, WeakPerspectiveCam, Want};
use guidance3d::recon::ClothedMesh;
use guidance3d::rig::{animate_and_render, bind_knn, SkinningBinding};
use guidance3d::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "guidance3d", version, about = "Animatable textured 3D guidance for video try-on")]
struct Cli {
    /// TOML configuration; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    input_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene with ground truth to --out-dir.
    Fixture {
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Pick the keyframe from keypoints.json.
    Select,
    /// Refine shape, translation and scale at the keyframe.
    Fit {
        /// Use this frame instead of the one recorded by `select`.
        #[arg(long)]
        keyframe: Option<usize>,
    },
    /// Integrate the front and back normal maps into depth.
    Integrate,
    /// Build the clothed mesh from the integrated depths.
    Reconstruct,
    /// Transfer skinning weights from the fitted body to the clothed mesh.
    Bind,
    /// Animate the clothed mesh along the pose sequence and render guidance.
    Animate,
    /// Rectangular agnostic masks and masked frames.
    Mask,
    /// Assemble one training example of conditioning tensors.
    Conditioning {
        /// Draw index within the seeded stream.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Run every stage and write the manifest.
    Run,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::read_toml(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.input_dir {
        cfg.input_dir = d.clone();
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the parallel feature; --threads {n} has no effect");
    Ok(())
}

fn read_keyframe(cfg: &PipelineConfig) -> Result<usize> {
    #[derive(serde::Deserialize)]
    struct Record {
        index: usize,
    }
    Ok(io::read_json::<Record>(&cfg.out_dir.join("keyframe.json"), "keyframe record")?.index)
}

fn read_fitted(cfg: &PipelineConfig) -> Result<BodyParams> {
    BodyParams::read_json(&cfg.out_dir.join("fit/params.json"))
}

fn read_clothed(cfg: &PipelineConfig) -> Result<ClothedMesh> {
    let mesh = Mesh::read_obj(&cfg.out_dir.join("recon/clothed.obj"))?;
    ClothedMesh::from_mesh(&mesh, pipeline::read_tags(&cfg.out_dir.join("recon/clothed_tags.json"))?)
}

fn tryon_or_keyframe(cfg: &PipelineConfig, frames_dir: &Path, keyframe: usize) -> Result<guidance3d::grid::ColorImage> {
    match &cfg.tryon_image {
        Some(p) => io::read_color_png(p),
        None => io::read_color_png(&frames_dir.join(frame_name(keyframe))),
    }
}

fn dirs(cfg: &PipelineConfig, names: &[&str]) -> Result<()> {
    for n in names {
        io::create_dir_all(&cfg.out_dir.join(n))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Fixture { frames, resolution } => {
            let s = pipeline::make_fixture(cfg.seed, *frames, *resolution, &cfg.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
        }
        Command::ShowConfig => print!("{}", cfg.to_toml_string()),
        Command::Select => {
            let kps = guidance3d::keyframe::Keypoints2D::read_json(&cfg.input_dir.join("keypoints.json")).stage("select_keyframe")?;
            let (index, scores) = select_keyframe(&kps, &cfg.keyframe).stage("select_keyframe")?;
            io::create_dir_all(&cfg.out_dir)?;
            io::write_json(&cfg.out_dir.join("keyframe.json"), &serde_json::json!({ "index": index, "scores": scores }))?;
            println!("{index}");
        }
        Command::Fit { keyframe } => {
            let k = match keyframe {
                Some(k) => *k,
                None => read_keyframe(&cfg).stage("refine_cycles")?,
            };
            let inputs = pipeline::load_inputs(&cfg.input_dir).stage("refine_cycles")?;
            if k >= inputs.poses.len() {
                return Err(Error::InvalidArgument(format!("keyframe {k} is outside the {}-frame sequence", inputs.poses.len())));
            }
            let maps = pipeline::read_provider(&cfg.input_dir, k).stage("refine_cycles")?;
            let (fit, report) = pipeline::fit_stage(&inputs.body, &inputs.poses.params(k), maps, &cfg).stage("refine_cycles")?;
            dirs(&cfg, &["fit"])?;
            if keyframe.is_some() {
                io::write_json(&cfg.out_dir.join("keyframe.json"), &serde_json::json!({ "index": k }))?;
            }
            fit.params.write_json(&cfg.out_dir.join("fit/params.json"))?;
            io::write_json(&cfg.out_dir.join("fit/report.json"), &report)?;
            println!("loss {:.6} after {} evaluations", report.final_loss, report.evaluations);
        }
        Command::Integrate => {
            let k = read_keyframe(&cfg).stage("integrate_normals")?;
            let body = guidance3d::body::ParametricBody::read_json(&cfg.input_dir.join("body.json")).stage("integrate_normals")?;
            let params = read_fitted(&cfg).stage("integrate_normals")?;
            let maps = pipeline::read_provider(&cfg.input_dir, k).stage("integrate_normals")?;
            let (f, b) = pipeline::integrate_stage(&body, &params, &maps, &cfg.integration).stage("integrate_normals")?;
            dirs(&cfg, &["recon"])?;
            io::write_pfm_gray(&cfg.out_dir.join("recon/front_depth.pfm"), &f.depth)?;
            io::write_pfm_gray(&cfg.out_dir.join("recon/back_depth.pfm"), &b.depth)?;
            println!("front: {} iterations, back: {} iterations", f.iterations, b.iterations);
        }
        Command::Reconstruct => {
            let k = read_keyframe(&cfg).stage("mesh_from_depth")?;
            let body = guidance3d::body::ParametricBody::read_json(&cfg.input_dir.join("body.json")).stage("mesh_from_depth")?;
            let params = read_fitted(&cfg).stage("mesh_from_depth")?;
            let maps = pipeline::read_provider(&cfg.input_dir, k).stage("mesh_from_depth")?;
            let front = io::read_pfm_gray(&cfg.out_dir.join("recon/front_depth.pfm")).stage("mesh_from_depth")?;
            let back = io::read_pfm_gray(&cfg.out_dir.join("recon/back_depth.pfm")).stage("mesh_from_depth")?;
            let image = tryon_or_keyframe(&cfg, &cfg.input_dir.join("frames"), k).stage("mesh_from_depth")?;
            let (mesh, diag, infill) =
                pipeline::mesh_stage(&body, &params, &maps.silhouette, &front, &back, &image, &cfg.infill).stage("mesh_from_depth")?;
            mesh.to_mesh().write_obj(&cfg.out_dir.join("recon/clothed.obj"))?;
            pipeline::write_tags(&cfg.out_dir.join("recon/clothed_tags.json"), &mesh, &serde_json::json!({ "mesh": diag, "infill": infill }))?;
            println!("{} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
        }
        Command::Bind => {
            let body = guidance3d::body::ParametricBody::read_json(&cfg.input_dir.join("body.json")).stage("bind_knn")?;
            let params = read_fitted(&cfg).stage("bind_knn")?;
            let mesh = read_clothed(&cfg).stage("bind_knn")?;
            let binding = bind_knn(&mesh.vertices, &body, &params, cfg.rig.k).stage("bind_knn")?;
            dirs(&cfg, &["rig"])?;
            binding.write(&cfg.out_dir.join("rig/binding.bin"))?;
        }
        Command::Animate => {
            let inputs = pipeline::load_inputs(&cfg.input_dir).stage("animate_and_render")?;
            let k = read_keyframe(&cfg).stage("animate_and_render")?;
            let params = read_fitted(&cfg).stage("animate_and_render")?;
            let mesh = read_clothed(&cfg).stage("animate_and_render")?;
            let binding = SkinningBinding::read(&cfg.out_dir.join("rig/binding.bin")).stage("animate_and_render")?;
            let seq = pipeline::animation_params(&inputs.poses, k, &params);
            let (h, w) = inputs.frames[0].dims();
            let cam = WeakPerspectiveCam::centered(seq.cam_scale, h, w, View::Front);
            let frames = animate_and_render(&mesh, &binding, &inputs.body, &seq, &cam).stage("animate_and_render")?;
            let per_frame: Vec<BodyParams> = (0..seq.len()).map(|i| seq.params(i)).collect();
            dirs(&cfg, &["guidance", "body"])?;
            io::write_json(&cfg.out_dir.join("params.json"), &per_frame)?;
            for (i, (g, p)) in frames.iter().zip(&per_frame).enumerate() {
                io::write_color_png(&cfg.out_dir.join("guidance").join(frame_name(i)), &g.color)?;
                let m = inputs.body.skin(p).stage("render_body")?;
                let r = rasterize(&m, &cam, Want::GEOMETRY);
                io::write_color_png(&cfg.out_dir.join("body").join(frame_name(i)), &pipeline::normal_image(&r))?;
            }
        }
        Command::Mask => {
            let inputs = pipeline::load_inputs(&cfg.input_dir).stage("rect_mask")?;
            let masks = rect_mask(&inputs.garment, &inputs.keep, &cfg.mask).stage("rect_mask")?;
            dirs(&cfg, &["mask", "agnostic"])?;
            for (i, m) in masks.masks.iter().enumerate() {
                io::write_mask_png(&cfg.out_dir.join("mask").join(frame_name(i)), m)?;
                let a = agnostic_frame(&inputs.frames[i], m).stage("agnostic")?;
                io::write_color_png(&cfg.out_dir.join("agnostic").join(frame_name(i)), &a)?;
            }
            if !masks.borrowed.is_empty() {
                log::warn!("frames without garment pixels borrowed a neighbour's box: {:?}", masks.borrowed);
            }
        }
        Command::Conditioning { index } => {
            let r = pipeline::conditioning_stage(&cfg, *index).stage("conditioning")?;
            println!("{}", serde_json::to_string_pretty(&r.draw).expect("draw serializes"));
        }
        Command::Run => {
            let pack = pipeline::run_pipeline(&cfg)?;
            for (stage, secs) in &pack.timings {
                println!("{stage:<20} {secs:8.3} s");
            }
            println!("keyframe {}, {} frames -> {}", pack.manifest.keyframe, pack.manifest.frames, cfg.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
