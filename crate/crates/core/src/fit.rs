//! Body refinement against a clothed normal map and silhouette.
//!
//! The objective is
//!
//! ```text
//! L = L_N + L_S + λ · max(d − s, 0)
//! ```
//!
//! where `L_N` is the mean L1 distance between the clothed normal map and the
//! rendered body normal map over the union of both silhouettes, `L_S` is the
//! mean L1 distance between the silhouettes over the whole image, `s` is the
//! camera scale and `d` a dataset threshold. The hinge only penalizes scales
//! *below* `d`, which stops partial-body observations from shrinking the
//! camera scale.
//!
//! Only shape `β`, the image-plane translation `(t_x, t_y)` and `s` are
//! optimized; the pose `θ` is never touched. The renderer is not
//! differentiable, so the optimizer is an adaptive coordinate search: each
//! coordinate is probed at `±step`, accepted moves grow the step and
//! rejected probes shrink it. Depth translation `t_z` does not change a
//! weak-perspective render and is left as given.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{BodyParams, ParametricBody};
use crate::error::{Error, Result};
use crate::grid::{Mask, NormalMap};
use crate::par;
use crate::raster::{rasterize, RenderTargets, View, WeakPerspectiveCam, Want};

/// Observed clothed-person maps and penalty knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTargets {
    pub front_normal: NormalMap,
    /// Back-view normals on the back camera's pixel lattice.
    pub back_normal: Option<NormalMap>,
    /// Front-view clothed silhouette; the back silhouette is its mirror.
    pub silhouette: Mask,
    /// Threshold `d` in pixels per meter.
    pub scale_threshold: f64,
    /// Penalty weight `λ`.
    pub lambda: f64,
}

impl FitTargets {
    pub fn validate(&self) -> Result<()> {
        self.front_normal.ensure_same_dims(&self.silhouette, "front normal vs silhouette")?;
        if let Some(b) = &self.back_normal {
            b.ensure_same_dims(&self.silhouette, "back normal vs silhouette")?;
        }
        if !(self.scale_threshold > 0.0) || !self.scale_threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale threshold must be positive, got {}",
                self.scale_threshold
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub normal_l1: f64,
    pub silhouette_l1: f64,
    pub scale_penalty: f64,
    pub total: f64,
    /// The body rendered to an empty silhouette.
    pub degenerate: bool,
}

/// `λ · max(d − s, 0)`
#[inline]
pub fn scale_penalty(scale: f64, threshold: f64, lambda: f64) -> f64 {
    lambda * (threshold - scale).max(0.0)
}

/// Mean per-channel L1 over the union of both silhouettes.
fn normal_l1(observed: &NormalMap, obs_sil: &Mask, rendered: &RenderTargets) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..observed.len() {
        if obs_sil.data()[i] || rendered.silhouette.data()[i] {
            let a = observed.data()[i];
            let b = rendered.normal.data()[i];
            sum += (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / (3 * count) as f64
    }
}

fn silhouette_l1(observed: &Mask, rendered: &Mask) -> f64 {
    let diff = observed
        .data()
        .iter()
        .zip(rendered.data())
        .filter(|(a, b)| a != b)
        .count();
    diff as f64 / observed.len().max(1) as f64
}

/// Renders the body's front (and back) maps at the params' camera scale.
pub fn render_body(
    body: &ParametricBody,
    params: &BodyParams,
    cam_base: &WeakPerspectiveCam,
    with_back: bool,
) -> Result<(RenderTargets, Option<RenderTargets>)> {
    let mesh = body.skin(params)?;
    let cam = cam_base.with_scale(params.cam_scale).with_view(View::Front);
    if with_back {
        let (f, b) = par::join(
            || rasterize(&mesh, &cam, Want::GEOMETRY),
            || rasterize(&mesh, &cam.with_view(View::Back), Want::GEOMETRY),
        );
        Ok((f, Some(b)))
    } else {
        Ok((rasterize(&mesh, &cam, Want::GEOMETRY), None))
    }
}

/// Evaluates the refinement objective. Front terms always contribute; back
/// terms are added when back normals are supplied.
pub fn smplx_loss(
    body: &ParametricBody,
    params: &BodyParams,
    cam_base: &WeakPerspectiveCam,
    targets: &FitTargets,
) -> Result<LossBreakdown> {
    targets.validate()?;
    let (h, w) = cam_base.image_size;
    if targets.silhouette.dims() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "targets are {:?}, camera renders {:?}",
            targets.silhouette.dims(),
            (h, w)
        )));
    }
    let (front, back) = render_body(body, params, cam_base, targets.back_normal.is_some())?;
    let mut n = normal_l1(&targets.front_normal, &targets.silhouette, &front);
    let mut s = silhouette_l1(&targets.silhouette, &front.silhouette);
    let mut degenerate = front.silhouette.count() == 0;
    if let (Some(bn), Some(br)) = (&targets.back_normal, &back) {
        let back_sil = targets.silhouette.mirror_x();
        n += normal_l1(bn, &back_sil, br);
        s += silhouette_l1(&back_sil, &br.silhouette);
        degenerate |= br.silhouette.count() == 0;
    }
    let p = scale_penalty(params.cam_scale, targets.scale_threshold, targets.lambda);
    Ok(LossBreakdown {
        normal_l1: n,
        silhouette_l1: s,
        scale_penalty: p,
        total: n + s + p,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Loss evaluations per `refine` call (per cycle in `refine_cycles`).
    pub max_evals: usize,
    pub init_step_beta: f64,
    /// Initial translation step in pixels (converted with the current scale).
    pub init_step_trans_px: f64,
    /// Initial scale step relative to the starting scale.
    pub init_step_scale_rel: f64,
    pub min_step_beta: f64,
    pub min_step_trans_px: f64,
    pub min_step_scale_rel: f64,
    pub expand: f64,
    pub shrink: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_evals: 300,
            init_step_beta: 0.25,
            init_step_trans_px: 2.0,
            init_step_scale_rel: 0.02,
            min_step_beta: 2e-3,
            min_step_trans_px: 0.02,
            min_step_scale_rel: 2e-4,
            expand: 2.0,
            shrink: 0.5,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.init_step_beta,
            self.init_step_trans_px,
            self.init_step_scale_rel,
            self.min_step_beta,
            self.min_step_trans_px,
            self.min_step_scale_rel,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("fit steps must be positive".into()));
        }
        if !(self.expand >= 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("fit needs expand ≥ 1 and 0 < shrink < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: BodyParams,
    pub loss: LossBreakdown,
    /// Total loss after every accepted move, starting with the initial loss.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Resumable coordinate-search state over `(β, t_x, t_y, s)`.
struct CoordinateSearch {
    x: BodyParams,
    best: LossBreakdown,
    steps: Vec<f64>,
    min_steps: Vec<f64>,
    dir: Vec<f64>,
    rng: ChaCha8Rng,
    pending: Vec<usize>,
    expand: f64,
    shrink: f64,
    trace: Vec<f64>,
    evaluations: usize,
}

impl CoordinateSearch {
    fn new(params0: BodyParams, loss0: LossBreakdown, cfg: &FitConfig) -> Self {
        let s = params0.beta.len();
        let scale = params0.cam_scale;
        let mut steps = vec![cfg.init_step_beta; s];
        steps.extend([cfg.init_step_trans_px / scale, cfg.init_step_trans_px / scale, cfg.init_step_scale_rel * scale]);
        let mut min_steps = vec![cfg.min_step_beta; s];
        min_steps.extend([cfg.min_step_trans_px / scale, cfg.min_step_trans_px / scale, cfg.min_step_scale_rel * scale]);
        let n = steps.len();
        Self {
            x: params0,
            best: loss0,
            steps,
            min_steps,
            dir: vec![1.0; n],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            pending: Vec::new(),
            expand: cfg.expand,
            shrink: cfg.shrink,
            trace: vec![loss0.total],
            evaluations: 0,
        }
    }

    fn converged(&self) -> bool {
        self.steps.iter().zip(&self.min_steps).all(|(s, m)| s < m)
    }

    fn moved(&self, coord: usize, delta: f64) -> BodyParams {
        let mut p = self.x.clone();
        let s = p.beta.len();
        if coord < s {
            p.beta[coord] += delta;
        } else {
            match coord - s {
                0 => p.trans[0] += delta,
                1 => p.trans[1] += delta,
                _ => p.cam_scale += delta,
            }
        }
        p
    }

    /// Re-scores the current point, e.g. after the targets changed.
    fn rebase(&mut self, loss: LossBreakdown) {
        self.best = loss;
        self.trace.push(loss.total);
    }

    fn run<F>(&mut self, budget: usize, eval: &F) -> Result<()>
    where
        F: Fn(&BodyParams) -> Result<LossBreakdown> + Sync,
    {
        let stop = self.evaluations + budget;
        while self.evaluations < stop && !self.converged() {
            if self.pending.is_empty() {
                let mut order: Vec<usize> = (0..self.steps.len()).collect();
                order.shuffle(&mut self.rng);
                // popped from the back
                order.reverse();
                self.pending = order;
            }
            let c = self.pending.pop().expect("non-empty sweep");
            if self.steps[c] < self.min_steps[c] {
                continue;
            }
            let delta = self.steps[c] * self.dir[c];
            let first = self.moved(c, delta);
            let second = self.moved(c, -delta);
            let valid = |p: &BodyParams| p.cam_scale > 0.0;
            let (l1, l2) = par::join(
                || valid(&first).then(|| eval(&first)).transpose(),
                || valid(&second).then(|| eval(&second)).transpose(),
            );
            let (l1, l2) = (l1?, l2?);
            self.evaluations += l1.is_some() as usize + l2.is_some() as usize;
            let accept = match (l1, l2) {
                (Some(a), _) if a.total < self.best.total => Some((first, a, 1.0)),
                (_, Some(b)) if b.total < self.best.total => Some((second, b, -1.0)),
                _ => None,
            };
            match accept {
                Some((p, l, sign)) => {
                    self.x = p;
                    self.best = l;
                    self.dir[c] *= sign;
                    self.steps[c] *= self.expand;
                    self.trace.push(l.total);
                }
                None => self.steps[c] *= self.shrink,
            }
        }
        Ok(())
    }
}

fn check_initial(loss: &LossBreakdown) -> Result<()> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("initial fit loss"))
    }
}

/// Refines `(β, t_x, t_y, s)` with the pose frozen. The returned loss is
/// never above the initial one and `theta` is returned bit-identical.
pub fn refine(
    body: &ParametricBody,
    params0: &BodyParams,
    cam_base: &WeakPerspectiveCam,
    targets: &FitTargets,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    body.check_params(params0)?;
    let eval = |p: &BodyParams| smplx_loss(body, p, cam_base, targets);
    let loss0 = eval(params0)?;
    check_initial(&loss0)?;
    let mut search = CoordinateSearch::new(params0.clone(), loss0, cfg);
    search.run(cfg.max_evals, &eval)?;
    debug_assert_eq!(search.x.theta, params0.theta);
    Ok(FitResult {
        params: search.x,
        loss: search.best,
        trace: search.trace,
        evaluations: search.evaluations,
    })
}

/// What the normal provider sees at the start of each cycle.
#[derive(Debug)]
pub struct CycleState<'a> {
    pub cycle: usize,
    pub params: &'a BodyParams,
    /// Body maps rendered at `params` from the front and back cameras.
    pub body_front: &'a RenderTargets,
    pub body_back: &'a RenderTargets,
}

/// Clothed maps produced for one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvidedMaps {
    pub front_normal: NormalMap,
    pub back_normal: Option<NormalMap>,
    pub silhouette: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult {
    pub params: BodyParams,
    /// Maps returned by the provider in the final cycle.
    pub maps: ProvidedMaps,
    pub loss: LossBreakdown,
    /// Per cycle: loss of the incoming params on the new maps, then after refinement.
    pub cycle_losses: Vec<(f64, f64)>,
    /// Accepted-move trace across all cycles.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Alternates normal prediction and refinement `cycles` times.
///
/// The search state (step sizes, sweep order) carries across cycles, so a
/// provider that always returns the same maps gives exactly the result of a
/// single [`refine`] with `cycles × max_evals` evaluations.
#[allow(clippy::too_many_arguments)]
pub fn refine_cycles<P>(
    body: &ParametricBody,
    params0: &BodyParams,
    cam_base: &WeakPerspectiveCam,
    mut provider: P,
    cycles: usize,
    scale_threshold: f64,
    lambda: f64,
    cfg: &FitConfig,
) -> Result<CycleResult>
where
    P: FnMut(&CycleState<'_>) -> Result<ProvidedMaps>,
{
    if cycles < 1 {
        return Err(Error::InvalidArgument("refinement needs at least one cycle".into()));
    }
    cfg.validate()?;
    body.check_params(params0)?;
    let (h, w) = cam_base.image_size;
    let mut search: Option<CoordinateSearch> = None;
    let mut cycle_losses = Vec::with_capacity(cycles);
    let mut last_maps = None;
    for cycle in 0..cycles {
        let current = search.as_ref().map_or(params0, |s| &s.x).clone();
        let (front, back) = render_body(body, &current, cam_base, true)?;
        let back = back.expect("back view requested");
        let maps = provider(&CycleState {
            cycle,
            params: &current,
            body_front: &front,
            body_back: &back,
        })?;
        let dims_ok = maps.silhouette.dims() == (h, w)
            && maps.front_normal.dims() == (h, w)
            && maps.back_normal.as_ref().is_none_or(|b| b.dims() == (h, w));
        if !dims_ok {
            return Err(Error::ShapeMismatch(format!(
                "provider returned maps that do not match the {h}x{w} camera in cycle {cycle}"
            )));
        }
        let targets = FitTargets {
            front_normal: maps.front_normal.clone(),
            back_normal: maps.back_normal.clone(),
            silhouette: maps.silhouette.clone(),
            scale_threshold,
            lambda,
        };
        let eval = |p: &BodyParams| smplx_loss(body, p, cam_base, &targets);
        let start = eval(&current)?;
        check_initial(&start)?;
        let s = match search.as_mut() {
            Some(s) => {
                if start != s.best {
                    s.rebase(start);
                }
                s
            }
            None => search.insert(CoordinateSearch::new(current, start, cfg)),
        };
        s.run(cfg.max_evals, &eval)?;
        cycle_losses.push((start.total, s.best.total));
        last_maps = Some(maps);
    }
    let s = search.expect("at least one cycle ran");
    Ok(CycleResult {
        params: s.x,
        maps: last_maps.expect("at least one cycle ran"),
        loss: s.best,
        cycle_losses,
        trace: s.trace,
        evaluations: s.evaluations,
    })
}

/// Provider that returns the same maps every cycle.
pub fn constant_provider(maps: ProvidedMaps) -> impl FnMut(&CycleState<'_>) -> Result<ProvidedMaps> {
    move |_| Ok(maps.clone())
}
