//! Acceptance suite: one pass/fail line per criterion.
//!
//! Timed criteria run inside a one-thread rayon pool. The last criterion is
//! a soft performance target; it is reported but never fails the run.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use guidance3d::body::{make_toy_body, ParametricBody};
use guidance3d::cond::*;
use guidance3d::fit::{constant_provider, refine_cycles, render_body, scale_penalty, FitConfig, ProvidedMaps};
use guidance3d::grid::{Grid, Mask, NormalMap};
use guidance3d::io;
use guidance3d::mask::{rect_mask, MaskConfig};
use guidance3d::pipeline::{self, frame_name, PipelineConfig};
use guidance3d::raster::{View, WeakPerspectiveCam};
use guidance3d::recon::{integrate_normals, IntegrationConfig};
use guidance3d::rig::{animate, bind_knn, knn_weights};
use nalgebra::{Matrix4, Rotation3, Vector3, Vector4};
use ndarray::{s, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ------------------------------------------------------------ 1. LBS oracle

fn floats(v: &Value, key: &str) -> Vec<f64> {
    v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

/// A toy body with randomized shape directions and dense pose blendshapes.
fn random_body(rng: &mut ChaCha8Rng) -> (ParametricBody, Value) {
    let j = [6, 12, 18, 24][rng.random_range(0..4)];
    let toy = make_toy_body(j, 8, rng.random()).unwrap();
    let mut v: Value = serde_json::from_str(&toy.to_json_string().unwrap()).unwrap();
    let nv = v["vertex_count"].as_u64().unwrap() as usize;
    let p = 9 * (j - 1);
    let shape: Vec<Value> = floats(&v, "shape_dirs").iter().map(|d| Value::from(d + rng.random_range(-0.01..0.01))).collect();
    v["shape_dirs"] = Value::Array(shape);
    v["pose_count"] = Value::from(p);
    v["pose_dirs"] = Value::Array((0..nv * 3 * p).map(|_| Value::from(rng.random_range(-0.02..0.02))).collect());
    let body = ParametricBody::from_json_str(&v.to_string()).unwrap();
    (body, v)
}

/// Dense per-vertex LBS from the raw arrays with 4×4 homogeneous matrices.
fn lbs_oracle(v: &Value, beta: &[f64], theta: &[[f64; 3]], trans: [f64; 3]) -> Vec<[f64; 3]> {
    let nv = v["vertex_count"].as_u64().unwrap() as usize;
    let nj = v["joint_count"].as_u64().unwrap() as usize;
    let ns = v["shape_count"].as_u64().unwrap() as usize;
    let np = v["pose_count"].as_u64().unwrap() as usize;
    let (tmpl, sd, pd) = (floats(v, "template_vertices"), floats(v, "shape_dirs"), floats(v, "pose_dirs"));
    let (reg, bw) = (floats(v, "joint_regressor"), floats(v, "blend_weights"));
    let parent: Vec<i64> = v["parent"].as_array().unwrap().iter().map(|x| x.as_i64().unwrap()).collect();

    let rot: Vec<Rotation3<f64>> = theta.iter().map(|t| Rotation3::from_scaled_axis(Vector3::new(t[0], t[1], t[2]))).collect();
    let mut feat = Vec::new();
    if np > 0 {
        for r in rot.iter().skip(1) {
            let m = r.matrix() - nalgebra::Matrix3::identity();
            for a in 0..3 {
                for b in 0..3 {
                    feat.push(m[(a, b)]);
                }
            }
        }
    }
    let mut shaped = vec![[0.0; 3]; nv];
    let mut rest = vec![[0.0; 3]; nv];
    for i in 0..nv {
        for a in 0..3 {
            let base = (i * 3 + a) * ns;
            shaped[i][a] = tmpl[i * 3 + a] + (0..ns).map(|k| sd[base + k] * beta[k]).sum::<f64>();
            let pbase = (i * 3 + a) * np;
            rest[i][a] = shaped[i][a] + (0..np).map(|k| pd[pbase + k] * feat[k]).sum::<f64>();
        }
    }
    let joints: Vec<[f64; 3]> = (0..nj)
        .map(|j| {
            let mut p = [0.0; 3];
            for i in 0..nv {
                for a in 0..3 {
                    p[a] += reg[j * nv + i] * shaped[i][a];
                }
            }
            p
        })
        .collect();
    let mut world: Vec<Matrix4<f64>> = Vec::with_capacity(nj);
    for j in 0..nj {
        let local_t = if parent[j] < 0 {
            Vector3::from(joints[j])
        } else {
            Vector3::from(joints[j]) - Vector3::from(joints[parent[j] as usize])
        };
        let mut local = Matrix4::identity();
        local.fixed_view_mut::<3, 3>(0, 0).copy_from(rot[j].matrix());
        local.fixed_view_mut::<3, 1>(0, 3).copy_from(&local_t);
        let g = if parent[j] < 0 { local } else { world[parent[j] as usize] * local };
        world.push(g);
    }
    let skinning: Vec<Matrix4<f64>> = (0..nj)
        .map(|j| {
            let mut un = Matrix4::identity();
            un.fixed_view_mut::<3, 1>(0, 3).copy_from(&-Vector3::from(joints[j]));
            world[j] * un
        })
        .collect();
    (0..nv)
        .map(|i| {
            let g = (0..nj).fold(Matrix4::zeros(), |acc, j| acc + skinning[j] * bw[i * nj + j]);
            let q = g * Vector4::new(rest[i][0], rest[i][1], rest[i][2], 1.0);
            [q[0] + trans[0], q[1] + trans[1], q[2] + trans[2]]
        })
        .collect()
}

fn c1_lbs_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_rest, mut skin_time) = (0.0f64, 0.0f64, 0.0);
    for _ in 0..100 {
        let (body, raw) = random_body(&mut rng);
        let mut p = body.zero_params(100.0);
        p.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        p.theta.iter_mut().for_each(|t| t.iter_mut().for_each(|c| *c = rng.random_range(-0.6..0.6)));
        p.trans = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let t = Instant::now();
        let got = single_threaded(|| body.skin_vertices(&p).unwrap());
        let rest = single_threaded(|| body.skin_vertices(&body.zero_params(100.0)).unwrap());
        skin_time += t.elapsed().as_secs_f64();
        let want = lbs_oracle(&raw, &p.beta, &p.theta, p.trans);
        for (g, w) in got.iter().zip(&want) {
            for a in 0..3 {
                worst = worst.max((g[a] - w[a]).abs());
            }
        }
        let tmpl = floats(&raw, "template_vertices");
        for (i, g) in rest.iter().enumerate() {
            for a in 0..3 {
                worst_rest = worst_rest.max((g[a] - tmpl[i * 3 + a]).abs());
            }
        }
    }
    let detail = format!("max |Δ| {worst:.2e}, rest {worst_rest:.2e}, skinning {skin_time:.2} s");
    ensure(worst <= 1e-5 && worst_rest <= 1e-6 && skin_time < 5.0, detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ 2. weights

fn c2_knn_weights() -> Check {
    let w = knn_weights(&[0.0, 1.0]);
    ensure((w[0] - 0.7311).abs() <= 1e-4 && (w[1] - 0.2689).abs() <= 1e-4, format!("weights {w:?}"))?;
    let body = make_toy_body(24, 12, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = body.zero_params(100.0);
    let mut worst = 0.0f64;
    for k in [1, 2, 4, 8] {
        let pts: Vec<_> = (0..500)
            .map(|_| guidance3d::math::Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.9..1.0), rng.random_range(-0.2..0.2)))
            .collect();
        let b = bind_knn(&pts, &body, &params, k).unwrap();
        for v in 0..pts.len() {
            let (_, cw) = b.controls(v);
            ensure(cw.iter().all(|x| *x >= 0.0), "negative control weight")?;
            ensure(b.joint_weights_row(v).iter().all(|x| *x >= 0.0), "negative joint weight")?;
            worst = worst.max((cw.iter().sum::<f64>() - 1.0).abs());
            worst = worst.max((b.joint_weights_row(v).iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-12, format!("simplex error {worst:.2e}"))?;
    Ok(format!("({:.4}, {:.4}), simplex error {worst:.1e}", w[0], w[1]))
}

// ------------------------------------------------------------ 3. hinge

fn c3_hinge() -> Check {
    let mut n = 0;
    for d in [10.0, 64.0, 100.0, 333.0] {
        for lambda in [0.0, 0.1, 1.0, 10.0] {
            for i in 0..=200 {
                let s = 2.0 * d * i as f64 / 200.0 + 1e-3;
                let want = if s >= d { 0.0 } else { lambda * (d - s) };
                let got = scale_penalty(s, d, lambda);
                ensure((got - want).abs() <= 1e-12 * (1.0 + want), format!("s {s}, d {d}, λ {lambda}: {got} vs {want}"))?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} sweep points"))
}

// ------------------------------------------------------------ 4. fit recovery

fn c4_fit_recovery() -> Check {
    let body = make_toy_body(22, 12, 7).unwrap();
    let cam = WeakPerspectiveCam::centered(120.0, 256, 256, View::Front);
    let (mut good, mut frozen, mut slowest, mut worst_iou) = (0, 0, 0.0f64, 1.0f64);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gt = body.zero_params(rng.random_range(105.0..125.0));
        gt.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        gt.theta.iter_mut().skip(1).for_each(|t| t.iter_mut().for_each(|c| *c = rng.random_range(-0.15..0.15)));
        gt.trans = [rng.random_range(-0.05..0.05), rng.random_range(-0.1..0.0), 0.0];
        let (f, b) = render_body(&body, &gt, &cam, true).unwrap();
        let maps = ProvidedMaps {
            front_normal: f.normal.clone(),
            back_normal: Some(b.unwrap().normal),
            silhouette: f.silhouette.clone(),
        };
        let mut init = gt.clone();
        init.beta.iter_mut().for_each(|b| *b += rng.random_range(-0.5..0.5));
        init.cam_scale *= 1.0 + rng.random_range(-0.1..0.1);
        init.trans[0] += rng.random_range(-5.0..5.0) / gt.cam_scale;
        init.trans[1] += rng.random_range(-5.0..5.0) / gt.cam_scale;
        let cfg = FitConfig {
            seed,
            ..FitConfig::default()
        };
        let t = Instant::now();
        let r = single_threaded(|| refine_cycles(&body, &init, &cam, constant_provider(maps), 10, 50.0, 1.0, &cfg).unwrap());
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let (rf, _) = render_body(&body, &r.params, &cam, false).unwrap();
        let iou = rf.silhouette.iou(&f.silhouette);
        worst_iou = worst_iou.min(iou);
        good += (iou >= 0.98) as usize;
        frozen += (r.params.theta == init.theta) as usize;
    }
    let detail = format!("IoU ≥ 0.98 in {good}/20 (worst {worst_iou:.4}), θ unchanged {frozen}/20, slowest fit {slowest:.1} s");
    ensure(good >= 18 && frozen == 20 && slowest < 60.0, detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ 5. integration

fn hemisphere(size: usize, r: f64) -> (NormalMap, Mask, Grid<f64>) {
    let c = size as f64 / 2.0;
    let off = |x: usize, y: usize| (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
    let sil = Grid::from_fn(size, size, |x, y| {
        let (dx, dy) = off(x, y);
        dx * dx + dy * dy < r * r
    });
    let normal = Grid::from_fn(size, size, |x, y| {
        let (dx, dy) = off(x, y);
        [-dx / r, -dy / r, (r * r - dx * dx - dy * dy).max(0.0).sqrt() / r]
    });
    let truth = Grid::from_fn(size, size, |x, y| {
        let (dx, dy) = off(x, y);
        -(r * r - dx * dx - dy * dy).max(0.0).sqrt()
    });
    (normal, sil, truth)
}

fn aligned_rmse(depth: &Grid<f64>, truth: &Grid<f64>, sil: &Mask) -> f64 {
    let idx: Vec<usize> = (0..sil.len()).filter(|&i| sil.data()[i]).collect();
    let off = idx.iter().map(|&i| depth.data()[i] - truth.data()[i]).sum::<f64>() / idx.len() as f64;
    (idx.iter().map(|&i| (depth.data()[i] - truth.data()[i] - off).powi(2)).sum::<f64>() / idx.len() as f64).sqrt()
}

fn c5_integration() -> Check {
    let r = 100.0;
    let (n, sil, truth) = hemisphere(256, r);
    let t = Instant::now();
    let out = single_threaded(|| integrate_normals(&n, &sil, None, &IntegrationConfig::default()).unwrap());
    let t_hemi = t.elapsed().as_secs_f64();
    let rmse_hemi = aligned_rmse(&out.depth, &truth, &sil);

    let (a, b) = (0.35, -0.2);
    let sil = Grid::from_fn(256, 256, |x, y| (20..230).contains(&x) && (30..240).contains(&y));
    let len = (a * a + b * b + 1.0f64).sqrt();
    let n = Grid::new(256, 256, [-a / len, -b / len, 1.0 / len]);
    let truth = Grid::from_fn(256, 256, |x, y| a * x as f64 + b * y as f64);
    let t = Instant::now();
    let out = single_threaded(|| integrate_normals(&n, &sil, None, &IntegrationConfig::default()).unwrap());
    let t_plane = t.elapsed().as_secs_f64();
    let rmse_plane = aligned_rmse(&out.depth, &truth, &sil);
    let detail = format!(
        "hemisphere RMSE {:.3}% of r in {t_hemi:.2} s, plane RMSE {rmse_plane:.1e} in {t_plane:.2} s",
        100.0 * rmse_hemi / r
    );
    ensure(rmse_hemi <= 0.01 * r && rmse_plane <= 1e-4 && t_hemi < 10.0 && t_plane < 10.0, detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ 6–8. conditioning

fn c6_v_prediction() -> Check {
    let sched = make_schedule(&ScheduleConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut vp) = (0.0f64, 0.0f64);
    for t in 0..sched.len() {
        let z0 = Array5::from_shape_simple_fn((1, 4, 2, 3, 3), || rng.random_range(-4.0..4.0));
        let eps = Array5::from_shape_simple_fn((1, 4, 2, 3, 3), || rng.random_range(-4.0..4.0));
        let zt = add_noise(&z0, &eps, t, &sched).unwrap();
        let v = v_target(&z0, &eps, t, &sched).unwrap();
        let z0r = recover_z0(&zt, &v, t, &sched).unwrap();
        let er = recover_eps(&zt, &v, t, &sched).unwrap();
        worst = (&z0r - &z0).iter().chain((&er - &eps).iter()).fold(worst, |m, d| m.max(d.abs()));
        vp = vp.max((sched.alpha[t].powi(2) + sched.sigma[t].powi(2) - 1.0).abs());
    }
    let detail = format!("round-trip {worst:.1e}, |α²+σ²−1| {vp:.1e} over {} steps", sched.len());
    ensure(worst <= 1e-6 && vp <= 1e-6, detail.clone())?;
    Ok(detail)
}

fn c7_channel_budget() -> Check {
    let parts: Vec<Array5<f64>> = [4, 4, 1, 4, 4]
        .iter()
        .enumerate()
        .map(|(i, &c)| Array5::from_shape_fn((2, c, 3, 4, 5), |(b, ch, f, y, x)| (i * 1000 + b * 100 + ch * 10 + f) as f64 + 0.01 * (y * 5 + x) as f64))
        .collect();
    let x = assemble_denoiser_input(&parts[0], &parts[1], &parts[2], &parts[3], &parts[4], &ConditionFlags::default()).map_err(|e| e.to_string())?;
    ensure(x.dim().1 == 17, format!("{} channels", x.dim().1))?;
    let mut start = 0;
    for (i, (name, c)) in CHANNEL_LAYOUT.iter().enumerate() {
        ensure(x.slice(s![.., start..start + c, .., .., ..]) == parts[i], format!("{name} not at channels {start}..{}", start + c))?;
        start += c;
    }
    let back = split_denoiser_input(&x).map_err(|e| e.to_string())?;
    ensure(back.iter().zip(&parts).all(|(a, b)| a == b), "split does not reproduce the inputs")?;
    let names: Vec<&str> = CHANNEL_LAYOUT.iter().map(|(n, _)| *n).collect();
    Ok(format!("17 channels {names:?}, lossless"))
}

fn c8_sampler() -> Check {
    let cfg = SamplerConfig::default();
    let n = 100_000;
    let draws = sample_training_batches(8, n, &cfg).map_err(|e| e.to_string())?;
    let rate = |f: &dyn Fn(&TrainingDraw) -> bool| draws.iter().filter(|d| f(d)).count() as f64 / n as f64;
    let rates = [
        (rate(&|d| d.source == Source::Image), cfg.tau),
        (rate(&|d| d.flags.drop_cloth), cfg.p_cloth),
        (rate(&|d| d.flags.drop_tryon), cfg.p_tryon),
        (rate(&|d| d.flags.drop_guidance), cfg.p_guidance),
    ];
    let detail = format!("image {:.4} (τ {}), drops {:.4} {:.4} {:.4}", rates[0].0, cfg.tau, rates[1].0, rates[2].0, rates[3].0);
    ensure(rates.iter().all(|(got, want)| (got - want).abs() <= 0.01), detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ 9. masks

fn c9_mask_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (w, h) = (48, 36);
    let rect = |rng: &mut ChaCha8Rng, max: usize| {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        let (bw, bh) = (rng.random_range(0..max), rng.random_range(1..max));
        Grid::from_fn(w, h, move |a, b| bw > 0 && (x..x + bw).contains(&a) && (y..y + bh).contains(&b))
    };
    for fixture in 0..50 {
        let n = rng.random_range(1..10);
        let mut garment: Vec<Mask> = (0..n).map(|_| rect(&mut rng, 10)).collect();
        if garment.iter().all(|g| g.count() == 0) {
            garment[0] = Grid::from_fn(w, h, |a, b| a == 3 && b == 4);
        }
        let keep: Vec<Mask> = (0..n).map(|_| rect(&mut rng, 6)).collect();
        let cfg = MaskConfig {
            margin: rng.random_range(0..5),
            window: rng.random_range(1..7),
        };
        let out = rect_mask(&garment, &keep, &cfg).map_err(|e| e.to_string())?;
        let bare = rect_mask(&garment, &[], &cfg).map_err(|e| e.to_string())?;
        let wider = rect_mask(&garment, &keep, &MaskConfig { window: cfg.window + 1, ..cfg.clone() }).map_err(|e| e.to_string())?;
        for i in 0..n {
            let m = &bare.masks[i];
            let (x0, y0, x1, y1) = m.bbox().ok_or(format!("fixture {fixture}: empty mask"))?;
            ensure(m.count() == (x1 - x0 + 1) * (y1 - y0 + 1), format!("fixture {fixture}: frame {i} not rectangular"))?;
            for p in 0..w * h {
                let (g, k, m) = (garment[i].data()[p], keep[i].data()[p], out.masks[i].data()[p]);
                ensure(!(m && k), format!("fixture {fixture}: keep pixel masked"))?;
                ensure(!g || k || m, format!("fixture {fixture}: garment pixel uncovered"))?;
                ensure(!m || wider.masks[i].data()[p], format!("fixture {fixture}: wider window shrank the mask"))?;
            }
        }
    }
    Ok("50 fixtures: coverage, keep exclusion, rectangularity, window monotonicity".into())
}

// ------------------------------------------------------------ 10. end to end

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c10_end_to_end() -> Check {
    let input = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    pipeline::make_fixture(7, 16, 256, input.path()).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        input_dir: input.path().to_path_buf(),
        out_dir: out.path().to_path_buf(),
        ..PipelineConfig::default()
    };
    let t = Instant::now();
    let pack = single_threaded(|| pipeline::run_pipeline(&cfg)).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();

    let mut worst = 1.0f64;
    for i in 0..16 {
        let gt = io::read_mask_png(&input.path().join("gt/silhouette").join(frame_name(i))).unwrap();
        worst = worst.min(pack.guidance[i].silhouette.iou(&gt));
    }

    let body = ParametricBody::read_json(&input.path().join("body.json")).unwrap();
    let binding = guidance3d::rig::SkinningBinding::read(&out.path().join("rig/binding.bin")).unwrap();
    // zero variance ⇔ every frame carries bit-identical per-vertex colors
    let colors: Vec<Vec<[f64; 3]>> = pack.params.iter().map(|p| animate(&pack.clothed, &binding, &body, p).unwrap().colors.unwrap()).collect();
    let spread = colors
        .iter()
        .flat_map(|f| f.iter().zip(&colors[0]).flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs())))
        .fold(0.0f64, f64::max);

    let mut first = tree(out.path());
    std::fs::remove_dir_all(out.path()).unwrap();
    single_threaded(|| pipeline::run_pipeline(&cfg)).map_err(|e| e.to_string())?;
    let mut second = tree(out.path());
    first.remove("timings.json");
    second.remove("timings.json");
    let identical = first == second;

    let detail = format!(
        "{secs:.1} s, worst frame IoU {worst:.4}, max per-vertex color spread {spread}, rerun identical: {identical} (keyframe {})",
        pack.manifest.keyframe
    );
    ensure(secs < 300.0 && worst >= 0.9 && spread == 0.0 && identical, detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ 11. timing

fn c11_reconstruction_time() -> Check {
    let input = tempfile::tempdir().unwrap();
    let fx = pipeline::make_fixture(11, 1, 512, input.path()).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let inputs = pipeline::load_inputs(input.path()).map_err(|e| e.to_string())?;
    let maps = pipeline::read_provider(input.path(), fx.keyframe).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let (fit, recon) = single_threaded(|| {
        let (fit, _) = pipeline::fit_stage(&inputs.body, &inputs.poses.params(fx.keyframe), maps.clone(), &cfg).unwrap();
        let t_fit = t.elapsed().as_secs_f64();
        let recon = pipeline::reconstruct_stage(&inputs.body, &fit.params, &maps, &inputs.frames[fx.keyframe], &cfg.integration, &cfg.infill).unwrap();
        (t_fit, recon)
    });
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("fit + integrate + mesh at 512²: {secs:.1} s (fit {fit:.1} s, {} faces)", recon.mesh.faces.len());
    ensure(secs <= 90.0, detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ runner

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Check, bool);
    let criteria: [Criterion; 11] = [
        ("LBS oracle equivalence", c1_lbs_oracle, false),
        ("KNN weight unit values and simplex", c2_knn_weights, false),
        ("scale hinge", c3_hinge, false),
        ("fit recovery", c4_fit_recovery, false),
        ("normal integration", c5_integration, false),
        ("v-prediction algebra", c6_v_prediction, false),
        ("channel budget", c7_channel_budget, false),
        ("sampler statistics", c8_sampler, false),
        ("mask contract", c9_mask_contract, false),
        ("end-to-end fixture", c10_end_to_end, false),
        ("reconstruction time (soft)", c11_reconstruction_time, true),
    ];
    let mut failed = Vec::new();
    let mut stdout = std::io::stdout().lock();
    for (i, (name, run, soft)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let line = match &result {
            Ok(d) => format!("criterion {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => format!("criterion {:>2} FAIL  {name}: {d}", i + 1),
        };
        writeln!(stdout, "{line}").unwrap();
        stdout.flush().unwrap();
        if result.is_err() && !soft {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
