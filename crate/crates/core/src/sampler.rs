//! Prototype-guided DDIM sampling.
//!
//! At each strided step `t → t_prev`:
//!
//! ```text
//! ε     = ε_θ(Z_t, c, t)
//! x̂0    = (Z_t − √(1−ᾱ_t) ε) / √ᾱ_t
//! g     = m_k − x̂0
//! ε'_f  = ε_f − λ_f √(1−ᾱ_t) g_f        (only while guidance is active)
//! Z_prev = √ᾱ_prev x̂0' + √(1−ᾱ_prev) ε'
//! ```
//!
//! with `λ_f = λ (1 − f/F)` for zero-based frame `f` when frame decay is on.
//! `x̂0'` is the clean estimate implied by `ε'`, which equals
//! `x̂0 + λ_f (1−ᾱ_t)/√ᾱ_t · g_f`; [`UpdateEstimate::Unguided`] keeps the
//! pre-guidance `x̂0` instead.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, predict_x0, Denoiser, DiffusionSchedule};
use crate::error::{GvdError, Result};
use crate::latent::{norm, LatentVideo, NoisePrediction};
use crate::seed;

/// Which side of `t_stop` receives guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidancePhase {
    /// Active while `t < t_stop`: the late, low-noise part of the trajectory.
    LowT,
    /// Active while `t > t_stop`: guide early, then let the denoiser refine.
    HighT,
}

/// Clean estimate fed into the DDIM update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateEstimate {
    /// `x̂0` recomputed from the guided noise `ε'`.
    Recomputed,
    /// `x̂0` from the unguided noise; only the noise term carries guidance.
    Unguided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub lambda: f64,
    /// Threshold in schedule-time units.
    pub t_stop: usize,
    pub frame_decay: bool,
    pub sampler_steps: usize,
    pub phase: GuidancePhase,
    pub update: UpdateEstimate,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            t_stop: 500,
            frame_decay: true,
            sampler_steps: 50,
            phase: GuidancePhase::HighT,
            update: UpdateEstimate::Recomputed,
        }
    }
}

impl GuidanceConfig {
    pub fn unguided(sampler_steps: usize) -> Self {
        Self {
            lambda: 0.0,
            sampler_steps,
            ..Default::default()
        }
    }

    pub fn validate(&self, s: &DiffusionSchedule) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(GvdError::config("lambda", "must be finite and >= 0"));
        }
        if self.t_stop > s.steps() {
            return Err(GvdError::config(
                "t_stop",
                format!("must lie in [0, {}]", s.steps()),
            ));
        }
        if self.sampler_steps < 1 || self.sampler_steps > s.steps() {
            return Err(GvdError::config(
                "sampler_steps",
                format!("must lie in [1, {}]", s.steps()),
            ));
        }
        Ok(())
    }

    pub fn is_active(&self, t: usize) -> bool {
        match self.phase {
            GuidancePhase::LowT => t < self.t_stop,
            GuidancePhase::HighT => t > self.t_stop,
        }
    }

    fn frame_weight(&self, f: usize, frames: usize) -> f64 {
        if self.frame_decay {
            self.lambda * (1.0 - f as f64 / frames as f64)
        } else {
            self.lambda
        }
    }
}

/// `λ (1 − f/F)` for zero-based frame index `f`.
pub fn frame_lambda(lambda: f64, f: usize, frames: usize) -> Result<f64> {
    if f >= frames {
        return Err(GvdError::Precondition(format!(
            "frame {f} outside [0, {frames})"
        )));
    }
    Ok(lambda * (1.0 - f as f64 / frames as f64))
}

/// `m_k − x̂0` with the flattened prototype reshaped to `F × D`.
pub fn guidance_term(prototype: &[f64], x0_hat: &LatentVideo) -> Result<LatentVideo> {
    if prototype.len() != x0_hat.len() {
        return Err(GvdError::dimension(
            "guidance term",
            x0_hat.len(),
            prototype.len(),
        ));
    }
    let data = prototype
        .iter()
        .zip(x0_hat.as_slice())
        .map(|(m, x)| m - x)
        .collect();
    Ok(LatentVideo::from_parts(x0_hat.frames(), x0_hat.dim(), data))
}

/// Applies guidance to a noise prediction; returns `eps` untouched while
/// guidance is inactive at `t` or `λ = 0`.
pub fn guided_eps(
    eps: &NoisePrediction,
    g: &LatentVideo,
    cfg: &GuidanceConfig,
    t: usize,
    s: &DiffusionSchedule,
) -> Result<NoisePrediction> {
    eps.latent().ensure_same_shape(g, "guided_eps")?;
    if t == 0 || t > s.steps() {
        return Err(GvdError::Precondition(format!(
            "guided_eps at t = {t}, expected [1, {}]",
            s.steps()
        )));
    }
    if !cfg.is_active(t) || cfg.lambda == 0.0 {
        return Ok(eps.clone());
    }
    let sn = (1.0 - s.alpha_bar(t)).sqrt();
    let (frames, dim) = g.shape();
    let mut out = eps.latent().clone();
    for f in 0..frames {
        let w = cfg.frame_weight(f, frames) * sn;
        let gf = g.frame(f);
        for (e, gv) in out.frame_mut(f).iter_mut().zip(gf) {
            *e -= w * gv;
        }
    }
    debug_assert_eq!(out.dim(), dim);
    Ok(NoisePrediction::new(out))
}

/// Deterministic DDIM update `√ᾱ_prev x̂0 + √(1−ᾱ_prev) ε'`.
pub fn ddim_step(
    x0_hat: &LatentVideo,
    eps: &NoisePrediction,
    t: usize,
    t_prev: usize,
    s: &DiffusionSchedule,
) -> Result<LatentVideo> {
    if !(t_prev < t && t <= s.steps()) {
        return Err(GvdError::Precondition(format!(
            "ddim_step needs t_prev < t <= T, got t_prev = {t_prev}, t = {t}"
        )));
    }
    x0_hat.ensure_same_shape(eps.latent(), "ddim_step")?;
    let ab = s.alpha_bar(t_prev);
    if ab == 1.0 {
        return Ok(x0_hat.clone());
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0_hat
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(x, e)| a * x + b * e)
        .collect();
    Ok(LatentVideo::from_parts(x0_hat.frames(), x0_hat.dim(), data))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub t: usize,
    pub g_norm: f64,
    /// Effective per-frame strength (zeros while inactive).
    pub frame_lambdas: Vec<f64>,
    /// `‖x̂0 − m_k‖` for the estimate entering the update.
    pub x0_dist: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleTrace {
    pub steps: Vec<TraceStep>,
}

fn gaussian_latent<R: Rng>(frames: usize, dim: usize, rng: &mut R) -> LatentVideo {
    let data = (0..frames * dim).map(|_| StandardNormal.sample(rng)).collect();
    LatentVideo::from_parts(frames, dim, data)
}

fn check_denoiser<D: Denoiser + ?Sized>(denoiser: &D, class: usize) -> Result<(usize, usize)> {
    if class >= denoiser.class_count() {
        return Err(GvdError::Precondition(format!(
            "class {class} not known to denoiser ({} classes)",
            denoiser.class_count()
        )));
    }
    Ok(denoiser.latent_shape())
}

/// Runs DDIM over `timesteps` (ascending, last entry is the start time).
fn denoise_from<D: Denoiser + ?Sized>(
    denoiser: &D,
    class: usize,
    mut z: LatentVideo,
    timesteps: &[usize],
    guidance: Option<(&LatentVideo, &GuidanceConfig)>,
    s: &DiffusionSchedule,
) -> Result<(LatentVideo, SampleTrace)> {
    let mut trace = SampleTrace::default();
    let frames = z.frames();
    for w in timesteps.windows(2).rev() {
        let (t_prev, t) = (w[0], w[1]);
        let step_ctx = || format!("class {class} step t = {t}");
        let eps = denoiser
            .predict_noise(class, &z, t, s)
            .map_err(|e| e.with_context(&step_ctx()))?;
        let x0 = predict_x0(&z, &eps, t, s)?;
        let (x0_used, eps_used) = match guidance {
            Some((proto, cfg)) if cfg.is_active(t) && cfg.lambda > 0.0 => {
                let g = guidance_term(proto.as_slice(), &x0)?;
                let eps_g = guided_eps(&eps, &g, cfg, t, s)?;
                let x0_g = match cfg.update {
                    UpdateEstimate::Recomputed => predict_x0(&z, &eps_g, t, s)?,
                    UpdateEstimate::Unguided => x0.clone(),
                };
                let lambdas: Vec<f64> = (0..frames).map(|f| cfg.frame_weight(f, frames)).collect();
                if cfg.update == UpdateEstimate::Recomputed {
                    debug_assert_single_step_pull(&x0, &x0_g, proto, &lambdas, t, s);
                }
                trace.steps.push(TraceStep {
                    t,
                    g_norm: norm(g.as_slice()),
                    frame_lambdas: lambdas,
                    x0_dist: x0_g.distance(proto),
                });
                (x0_g, eps_g)
            }
            Some((proto, _)) => {
                let d = x0.distance(proto);
                trace.steps.push(TraceStep {
                    t,
                    g_norm: d,
                    frame_lambdas: vec![0.0; frames],
                    x0_dist: d,
                });
                (x0, eps)
            }
            None => (x0, eps),
        };
        z = ddim_step(&x0_used, &eps_used, t, t_prev, s)?;
        if !z.is_finite() {
            return Err(GvdError::numerical(step_ctx(), "latent became non-finite"));
        }
    }
    Ok((z, trace))
}

fn debug_assert_single_step_pull(
    before: &LatentVideo,
    after: &LatentVideo,
    proto: &LatentVideo,
    lambdas: &[f64],
    t: usize,
    s: &DiffusionSchedule,
) {
    if !cfg!(debug_assertions) {
        return;
    }
    let ab = s.alpha_bar(t);
    for (f, lf) in lambdas.iter().enumerate() {
        let c = lf * (1.0 - ab) / ab.sqrt();
        if c <= 1.0 {
            let d0 = crate::latent::euclidean(before.frame(f), proto.frame(f));
            let d1 = crate::latent::euclidean(after.frame(f), proto.frame(f));
            debug_assert!(d1 <= d0 * (1.0 + 1e-9) + 1e-12, "guidance moved frame {f} away");
        }
    }
}

/// Guided sample toward `prototype` starting from `Z_T ~ N(0, I)` drawn
/// with `seed`.
pub fn sample_guided<D: Denoiser + ?Sized>(
    denoiser: &D,
    class: usize,
    prototype: &LatentVideo,
    cfg: &GuidanceConfig,
    s: &DiffusionSchedule,
    seed: u64,
) -> Result<(LatentVideo, SampleTrace)> {
    cfg.validate(s)?;
    let (frames, dim) = check_denoiser(denoiser, class)?;
    if prototype.shape() != (frames, dim) {
        return Err(GvdError::dimension(
            "prototype",
            format!("{frames}x{dim}"),
            format!("{}x{}", prototype.frames(), prototype.dim()),
        ));
    }
    let timesteps = s.strided(cfg.sampler_steps)?;
    let z = gaussian_latent(frames, dim, &mut seed::rng_from(seed));
    denoise_from(denoiser, class, z, &timesteps, Some((prototype, cfg)), s)
}

/// Unguided class-conditional sample; identical to `sample_guided` with
/// `λ = 0` and the same seed.
pub fn sample_naive<D: Denoiser + ?Sized>(
    denoiser: &D,
    class: usize,
    cfg: &GuidanceConfig,
    s: &DiffusionSchedule,
    seed: u64,
) -> Result<LatentVideo> {
    cfg.validate(s)?;
    let (frames, dim) = check_denoiser(denoiser, class)?;
    let timesteps = s.strided(cfg.sampler_steps)?;
    let z = gaussian_latent(frames, dim, &mut seed::rng_from(seed));
    Ok(denoise_from(denoiser, class, z, &timesteps, None, s)?.0)
}

/// Noises `prototype` to `t_start` and denoises it without guidance over
/// the strided steps below `t_start`.
pub fn sample_knoise<D: Denoiser + ?Sized>(
    denoiser: &D,
    class: usize,
    prototype: &LatentVideo,
    t_start: usize,
    cfg: &GuidanceConfig,
    s: &DiffusionSchedule,
    seed: u64,
) -> Result<LatentVideo> {
    cfg.validate(s)?;
    if t_start > s.steps() {
        return Err(GvdError::config(
            "t_start",
            format!("must lie in [0, {}]", s.steps()),
        ));
    }
    let (frames, dim) = check_denoiser(denoiser, class)?;
    if prototype.shape() != (frames, dim) {
        return Err(GvdError::dimension(
            "prototype",
            format!("{frames}x{dim}"),
            format!("{}x{}", prototype.frames(), prototype.dim()),
        ));
    }
    if t_start == 0 {
        return Ok(prototype.clone());
    }
    let mut timesteps: Vec<usize> = s
        .strided(cfg.sampler_steps)?
        .into_iter()
        .filter(|&t| t < t_start)
        .collect();
    timesteps.push(t_start);
    let noise = gaussian_latent(frames, dim, &mut seed::rng_from(seed));
    let z = forward_diffuse(prototype, t_start, &noise, s)?;
    Ok(denoise_from(denoiser, class, z, &timesteps, None, s)?.0)
}

/// Seed of guided instance `k` of `class`.
pub fn instance_seed(master: u64, class: usize, k: usize) -> u64 {
    seed::mix(master, "guided-sample", class as u64, k as u64)
}

/// One guided sample per prototype, in prototype order.
pub fn distill_class<D: Denoiser + ?Sized>(
    denoiser: &D,
    class: usize,
    prototypes: &[LatentVideo],
    cfg: &GuidanceConfig,
    s: &DiffusionSchedule,
    seed: u64,
) -> Result<Vec<(LatentVideo, SampleTrace)>> {
    prototypes
        .par_iter()
        .enumerate()
        .map(|(k, proto)| {
            sample_guided(denoiser, class, proto, cfg, s, instance_seed(seed, class, k))
                .map_err(|e| e.with_context(&format!("instance {k}")))
        })
        .collect()
}
