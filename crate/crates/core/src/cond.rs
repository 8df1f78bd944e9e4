//! Tensor plumbing for the video try-on denoiser.
//!
//! Tensors are `ndarray` arrays shaped `(batch, channels, frames, height,
//! width)`. Nothing here runs a network: [`mock_encode`] stands in for the
//! VAE encoder with fixed 8× block statistics so every shape contract can be
//! exercised.

use std::path::Path;

use ndarray::{concatenate, s, Array4, Array5, ArrayView5, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ColorImage, Grid, Mask};

pub type LatentVideo = Array5<f64>;

pub const LATENT_CHANNELS: usize = 4;
pub const DOWNSAMPLE: usize = 8;
/// zt, agnostic latent, mask, body latent, guidance latent.
pub const CHANNEL_LAYOUT: [(&str, usize); 5] = [("zt", 4), ("agnostic", 4), ("mask", 1), ("smpl", 4), ("guidance", 4)];
pub const DENOISER_CHANNELS: usize = 17;

#[inline]
fn luma(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Encodes frames to `(1, 4, f, h/8, w/8)`: per 8×8 block the mean of R, G,
/// B and the population standard deviation of luma.
pub fn mock_encode(frames: &[ColorImage]) -> Result<LatentVideo> {
    let Some(first) = frames.first() else {
        return Err(Error::InvalidArgument("no frames to encode".into()));
    };
    let (h, w) = first.dims();
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("{w}×{h} is not divisible by {DOWNSAMPLE}")));
    }
    for f in frames {
        f.ensure_same_dims(first, "frames")?;
    }
    let (lh, lw) = (h / DOWNSAMPLE, w / DOWNSAMPLE);
    let mut out = Array5::zeros((1, LATENT_CHANNELS, frames.len(), lh, lw));
    let n = (DOWNSAMPLE * DOWNSAMPLE) as f64;
    for (fi, img) in frames.iter().enumerate() {
        for by in 0..lh {
            for bx in 0..lw {
                let mut sum = [0.0; 3];
                let mut lsum = 0.0;
                for y in by * DOWNSAMPLE..(by + 1) * DOWNSAMPLE {
                    for x in bx * DOWNSAMPLE..(bx + 1) * DOWNSAMPLE {
                        let c = img.get(x, y);
                        for k in 0..3 {
                            sum[k] += c[k];
                        }
                        lsum += luma(c);
                    }
                }
                let lmean = lsum / n;
                let mut var = 0.0;
                for y in by * DOWNSAMPLE..(by + 1) * DOWNSAMPLE {
                    for x in bx * DOWNSAMPLE..(bx + 1) * DOWNSAMPLE {
                        var += (luma(img.get(x, y)) - lmean).powi(2);
                    }
                }
                for k in 0..3 {
                    out[[0, k, fi, by, bx]] = sum[k] / n;
                }
                out[[0, 3, fi, by, bx]] = (var / n).sqrt();
            }
        }
    }
    Ok(out)
}

/// Area (box-average) downsampling of masks to `(1, 1, f, h/8, w/8)`.
pub fn resize_masks(masks: &[Mask]) -> Result<LatentVideo> {
    let Some(first) = masks.first() else {
        return Err(Error::InvalidArgument("no masks to resize".into()));
    };
    let (h, w) = first.dims();
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(Error::ShapeMismatch(format!("{w}×{h} is not divisible by {DOWNSAMPLE}")));
    }
    let (lh, lw) = (h / DOWNSAMPLE, w / DOWNSAMPLE);
    let mut out = Array5::zeros((1, 1, masks.len(), lh, lw));
    for (fi, m) in masks.iter().enumerate() {
        m.ensure_same_dims(first, "masks")?;
        for y in 0..h {
            for x in 0..w {
                if *m.get(x, y) {
                    out[[0, 0, fi, y / DOWNSAMPLE, x / DOWNSAMPLE]] += 1.0;
                }
            }
        }
    }
    out.mapv_inplace(|v| v / (DOWNSAMPLE * DOWNSAMPLE) as f64);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Variance-preserving schedule: `α_t² + σ_t² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    fn at(&self, t: usize) -> Result<(f64, f64)> {
        if t >= self.len() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 0..{}", self.len())));
        }
        Ok((self.alpha[t], self.sigma[t]))
    }
}

/// Scaled-linear schedule: `√β` evenly spaced, `ᾱ_t = Π (1 − β)`,
/// `α_t = √ᾱ_t`, `σ_t = √(1 − ᾱ_t)`.
pub fn make_schedule(cfg: &ScheduleConfig) -> Result<NoiseSchedule> {
    let n = cfg.steps;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("schedule needs at least 2 steps, got {n}")));
    }
    if !(0.0 < cfg.beta_start && cfg.beta_start < cfg.beta_end && cfg.beta_end < 1.0) {
        return Err(Error::InvalidArgument("need 0 < beta_start < beta_end < 1".into()));
    }
    let (a, b) = (cfg.beta_start.sqrt(), cfg.beta_end.sqrt());
    let mut alpha_bar = 1.0;
    let mut alpha = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for t in 0..n {
        let beta = (a + (b - a) * t as f64 / (n - 1) as f64).powi(2);
        alpha_bar *= 1.0 - beta;
        alpha.push(alpha_bar.sqrt());
        sigma.push((1.0 - alpha_bar).sqrt());
    }
    Ok(NoiseSchedule { alpha, sigma })
}

fn same_shape(a: &LatentVideo, b: &LatentVideo, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `z_t = α_t z₀ + σ_t ε`.
pub fn add_noise(z0: &LatentVideo, eps: &LatentVideo, t: usize, sched: &NoiseSchedule) -> Result<LatentVideo> {
    same_shape(z0, eps, "z0 vs eps")?;
    let (a, s) = sched.at(t)?;
    Ok(z0 * a + eps * s)
}

/// `v = α_t ε − σ_t z₀`.
pub fn v_target(z0: &LatentVideo, eps: &LatentVideo, t: usize, sched: &NoiseSchedule) -> Result<LatentVideo> {
    same_shape(z0, eps, "z0 vs eps")?;
    let (a, s) = sched.at(t)?;
    Ok(eps * a - z0 * s)
}

/// `z₀ = α_t z_t − σ_t v`.
pub fn recover_z0(zt: &LatentVideo, v: &LatentVideo, t: usize, sched: &NoiseSchedule) -> Result<LatentVideo> {
    same_shape(zt, v, "zt vs v")?;
    let (a, s) = sched.at(t)?;
    Ok(zt * a - v * s)
}

/// `ε = σ_t z_t + α_t v`.
pub fn recover_eps(zt: &LatentVideo, v: &LatentVideo, t: usize, sched: &NoiseSchedule) -> Result<LatentVideo> {
    same_shape(zt, v, "zt vs v")?;
    let (a, s) = sched.at(t)?;
    Ok(zt * s + v * a)
}

/// Which conditions are dropped for classifier-free guidance training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub drop_cloth: bool,
    pub drop_tryon: bool,
    pub drop_guidance: bool,
}

/// Concatenates `[zt, agnostic, mask, smpl, guidance]` along channels; the
/// guidance channels are zeroed when dropped.
pub fn assemble_denoiser_input(
    zt: &LatentVideo,
    agnostic: &LatentVideo,
    mask: &LatentVideo,
    smpl: &LatentVideo,
    guidance: &LatentVideo,
    flags: &ConditionFlags,
) -> Result<LatentVideo> {
    let parts = [zt, agnostic, mask, smpl, guidance];
    let (b, _, f, h, w) = zt.dim();
    for (p, (name, c)) in parts.iter().zip(CHANNEL_LAYOUT) {
        if p.dim() != (b, c, f, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "{name}: expected {:?}, got {:?}",
                (b, c, f, h, w),
                p.dim()
            )));
        }
    }
    let views: Vec<ArrayView5<f64>> = parts.iter().map(|p| p.view()).collect();
    let mut out = concatenate(Axis(1), &views).expect("shapes checked");
    if flags.drop_guidance {
        out.slice_mut(s![.., 13..17, .., .., ..]).fill(0.0);
    }
    Ok(out)
}

/// Inverse of [`assemble_denoiser_input`]; rejects anything but 17 channels.
pub fn split_denoiser_input(x: &LatentVideo) -> Result<[LatentVideo; 5]> {
    if x.dim().1 != DENOISER_CHANNELS {
        return Err(Error::ShapeMismatch(format!("expected {DENOISER_CHANNELS} channels, got {}", x.dim().1)));
    }
    let mut start = 0;
    Ok(CHANNEL_LAYOUT.map(|(_, c)| {
        let part = x.slice(s![.., start..start + c, .., .., ..]).to_owned();
        start += c;
        part
    }))
}

/// `[latent | cloth | tryon]` along width, the two references replicated
/// over frames: `(b, c, f, h, w)` + 2 × `(b, c, h, w)` → `(b, c, f, h, 3w)`.
pub fn reference_concat(latent: &LatentVideo, cloth: &Array4<f64>, tryon: &Array4<f64>) -> Result<LatentVideo> {
    let (b, c, f, h, w) = latent.dim();
    for (name, r) in [("cloth", cloth), ("tryon", tryon)] {
        if r.dim() != (b, c, h, w) {
            return Err(Error::ShapeMismatch(format!("{name}: expected {:?}, got {:?}", (b, c, h, w), r.dim())));
        }
    }
    let rep = |r: &Array4<f64>| r.view().insert_axis(Axis(2)).broadcast((b, c, f, h, w)).expect("frame axis has length 1").to_owned();
    let (cr, tr) = (rep(cloth), rep(tryon));
    Ok(concatenate(Axis(4), &[latent.view(), cr.view(), tr.view()]).expect("shapes checked"))
}

/// Splits a [`reference_concat`] output, keeping frame 0 of each replica.
pub fn split_reference(x: &LatentVideo) -> Result<(LatentVideo, Array4<f64>, Array4<f64>)> {
    let w3 = x.dim().4;
    if !w3.is_multiple_of(3) || x.dim().2 == 0 {
        return Err(Error::ShapeMismatch(format!("width {w3} is not a multiple of 3")));
    }
    let w = w3 / 3;
    let latent = x.slice(s![.., .., .., .., ..w]).to_owned();
    let cloth = x.slice(s![.., .., 0, .., w..2 * w]).to_owned();
    let tryon = x.slice(s![.., .., 0, .., 2 * w..]).to_owned();
    Ok((latent, cloth, tryon))
}

/// Zeroes the reference features dropped by `flags`.
pub fn drop_references(cloth: &Array4<f64>, tryon: &Array4<f64>, flags: &ConditionFlags) -> (Array4<f64>, Array4<f64>) {
    let zero_if = |a: &Array4<f64>, d: bool| if d { Array4::zeros(a.dim()) } else { a.clone() };
    (zero_if(cloth, flags.drop_cloth), zero_if(tryon, flags.drop_tryon))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Probability of an image (single-frame) sample.
    pub tau: f64,
    pub p_cloth: f64,
    pub p_tryon: f64,
    pub p_guidance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau: 0.3,
            p_cloth: 0.1,
            p_tryon: 0.1,
            p_guidance: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("tau", self.tau), ("p_cloth", self.p_cloth), ("p_tryon", self.p_tryon), ("p_guidance", self.p_guidance)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Image,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingDraw {
    pub source: Source,
    pub freeze_temporal: bool,
    pub flags: ConditionFlags,
}

/// Draw `index` of the stream seeded by `seed`; each index has its own
/// generator stream, so draws can be made in any order or in parallel.
pub fn sample_training_batch(seed: u64, index: u64, cfg: &SamplerConfig) -> TrainingDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let r: f64 = rng.random();
    let source = if r < cfg.tau { Source::Image } else { Source::Video };
    let mut drop = |p: f64| rng.random::<f64>() < p;
    let flags = ConditionFlags {
        drop_cloth: drop(cfg.p_cloth),
        drop_tryon: drop(cfg.p_tryon),
        drop_guidance: drop(cfg.p_guidance),
    };
    TrainingDraw {
        source,
        freeze_temporal: source == Source::Image,
        flags,
    }
}

/// Draws `0..n` of the stream.
pub fn sample_training_batches(seed: u64, n: usize, cfg: &SamplerConfig) -> Result<Vec<TrainingDraw>> {
    cfg.validate()?;
    Ok(crate::par::map_range(n, |i| sample_training_batch(seed, i as u64, cfg)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub name: String,
    /// `(batch, channels, frames, height, width)`.
    pub shape: [usize; 5],
    /// One grayscale PFM per `(batch, channel, frame)`, in that nesting order.
    pub files: Vec<String>,
}

/// Writes a tensor as a stack of single-channel PFM slices plus a JSON
/// manifest `<name>.json` in `dir`.
pub fn dump_tensor(dir: &Path, name: &str, x: &LatentVideo) -> Result<TensorManifest> {
    crate::io::create_dir_all(dir)?;
    let (b, c, f, h, w) = x.dim();
    let mut files = Vec::with_capacity(b * c * f);
    for bi in 0..b {
        for ci in 0..c {
            for fi in 0..f {
                let file = format!("{name}_b{bi}_c{ci:02}_f{fi:03}.pfm");
                let g = Grid::from_fn(w, h, |xx, yy| x[[bi, ci, fi, yy, xx]]);
                crate::io::write_pfm_gray(&dir.join(&file), &g)?;
                files.push(file);
            }
        }
    }
    let manifest = TensorManifest {
        name: name.to_string(),
        shape: [b, c, f, h, w],
        files,
    };
    crate::io::write_json(&dir.join(format!("{name}.json")), &manifest)?;
    Ok(manifest)
}

/// Reads a tensor written by [`dump_tensor`] (values pass through `f32`).
pub fn load_tensor(dir: &Path, name: &str) -> Result<LatentVideo> {
    let m: TensorManifest = crate::io::read_json(&dir.join(format!("{name}.json")), "tensor manifest")?;
    let [b, c, f, h, w] = m.shape;
    if m.files.len() != b * c * f {
        return Err(Error::format("tensor manifest", dir.join(format!("{name}.json")), "file count does not match shape"));
    }
    let mut out = Array5::zeros((b, c, f, h, w));
    let mut it = m.files.iter();
    for bi in 0..b {
        for ci in 0..c {
            for fi in 0..f {
                let g = crate::io::read_pfm_gray(&dir.join(it.next().expect("count checked")))?;
                if g.dims() != (h, w) {
                    return Err(Error::ShapeMismatch(format!("slice of {name} is {:?}, expected {:?}", g.dims(), (h, w))));
                }
                for yy in 0..h {
                    for xx in 0..w {
                        out[[bi, ci, fi, yy, xx]] = *g.get(xx, yy);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_image_encodes_to_constant_latent() {
        let img = Grid::new(16, 16, [0.5; 3]);
        let z = mock_encode(&[img]).unwrap();
        assert_eq!(z.dim(), (1, 4, 1, 2, 2));
        for ((_, c, _, _, _), v) in z.indexed_iter() {
            let want = if c == 3 { 0.0 } else { 0.5 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn checkerboard_block_has_half_luma_std() {
        let img = Grid::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { [1.0; 3] } else { [0.0; 3] });
        let z = mock_encode(&[img]).unwrap();
        assert!((z[[0, 3, 0, 0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn indivisible_size_is_rejected() {
        assert!(mock_encode(&[Grid::new(12, 16, [0.0; 3])]).is_err());
        assert!(make_schedule(&ScheduleConfig { steps: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let s = make_schedule(&ScheduleConfig::default()).unwrap();
        assert!(s.alpha[0] > 0.9999);
        assert!(s.alpha.windows(2).all(|w| w[1] < w[0]));
        assert!(s.sigma.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_sigma_gives_v_equal_eps() {
        let sched = NoiseSchedule {
            alpha: vec![1.0, 0.0],
            sigma: vec![0.0, 1.0],
        };
        let z0 = Array5::from_elem((1, 4, 1, 2, 2), 3.0);
        let eps = Array5::from_elem((1, 4, 1, 2, 2), -0.7);
        assert_eq!(v_target(&z0, &eps, 0, &sched).unwrap(), eps);
    }

    #[test]
    fn mask_resize_is_an_area_average() {
        let m = Grid::from_fn(16, 8, |x, y| x < 4 && y < 8);
        let r = resize_masks(&[m]).unwrap();
        assert_eq!(r.dim(), (1, 1, 1, 1, 2));
        assert_eq!(r[[0, 0, 0, 0, 0]], 0.5);
        assert_eq!(r[[0, 0, 0, 0, 1]], 0.0);
    }

    #[test]
    fn sampler_extremes() {
        let always = SamplerConfig { tau: 1.0, ..Default::default() };
        let never = SamplerConfig { tau: 0.0, ..Default::default() };
        for d in sample_training_batches(3, 200, &always).unwrap() {
            assert_eq!((d.source, d.freeze_temporal), (Source::Image, true));
        }
        for d in sample_training_batches(3, 200, &never).unwrap() {
            assert_eq!((d.source, d.freeze_temporal), (Source::Video, false));
        }
        assert_eq!(sample_training_batch(9, 17, &SamplerConfig::default()), sample_training_batch(9, 17, &SamplerConfig::default()));
    }

    #[test]
    fn tensor_dump_round_trips_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let x = Array5::from_shape_fn((1, 2, 3, 2, 4), |(a, b, c, d, e)| (a + 2 * b + 3 * c + 5 * d + 7 * e) as f64 * 0.25);
        let m = dump_tensor(dir.path(), "t", &x).unwrap();
        assert_eq!(m.files.len(), 6);
        assert_eq!(load_tensor(dir.path(), "t").unwrap(), x);
    }
}
