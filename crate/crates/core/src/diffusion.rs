//! Noise schedule, forward process and the denoiser contract.

use std::sync::Arc;

use nalgebra::DVector;

use crate::denoiser::TrainedDenoiser;
use crate::error::{GvdError, Result};
use crate::latent::{LatentVideo, NoisePrediction};
use crate::linalg;
use crate::world::GaussianWorld;

/// Cumulative signal fractions `ᾱ_0 = 1 > ᾱ_1 > … > ᾱ_T > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear-β schedule with `β_s` interpolated from `beta_min` (s = 1) to
    /// `beta_max` (s = T).
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 1 {
            return Err(GvdError::config("steps", "must be >= 1"));
        }
        if !(beta_min > 0.0 && beta_min < 1.0) {
            return Err(GvdError::config("beta_min", "must lie in (0, 1)"));
        }
        if !(beta_max >= beta_min && beta_max < 1.0) {
            return Err(GvdError::config("beta_max", "must lie in [beta_min, 1)"));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 1..=steps {
            let beta = if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * (s - 1) as f64 / (steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(GvdError::config("alpha_bar", "need at least T + 1 = 2 entries"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(GvdError::config("alpha_bar", "alpha_bar[0] must be exactly 1"));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0] && w[1] > 0.0 && w[1].is_finite()) {
                return Err(GvdError::config(
                    "alpha_bar",
                    format!("not strictly decreasing in (0, 1] at t = {}", t + 1),
                ));
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Total number of steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Uniformly strided timesteps `0 = t_0 < t_1 < … < t_S = T`.
    pub fn strided(&self, sampler_steps: usize) -> Result<Vec<usize>> {
        let total = self.steps();
        if sampler_steps < 1 || sampler_steps > total {
            return Err(GvdError::config(
                "sampler_steps",
                format!("must lie in [1, {total}]"),
            ));
        }
        Ok((0..=sampler_steps).map(|i| i * total / sampler_steps).collect())
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(GvdError::Precondition(format!(
                "timestep {t} outside [0, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · noise`.
pub fn forward_diffuse(
    x0: &LatentVideo,
    t: usize,
    noise: &LatentVideo,
    s: &DiffusionSchedule,
) -> Result<LatentVideo> {
    s.check_t(t)?;
    x0.ensure_same_shape(noise, "forward_diffuse")?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(x, n)| a * x + b * n)
        .collect();
    Ok(LatentVideo::from_parts(x0.frames(), x0.dim(), data))
}

/// Clean-sample estimate `(Z_t − √(1 − ᾱ_t) · ε) / √ᾱ_t`.
pub fn predict_x0(
    z: &LatentVideo,
    eps: &NoisePrediction,
    t: usize,
    s: &DiffusionSchedule,
) -> Result<LatentVideo> {
    if t == 0 {
        return Err(GvdError::Precondition(
            "predict_x0 at t = 0: no denoising step remains".into(),
        ));
    }
    s.check_t(t)?;
    z.ensure_same_shape(eps.latent(), "predict_x0")?;
    let ab = s.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(zv, e)| (zv - sn * e) / sa)
        .collect();
    Ok(LatentVideo::from_parts(z.frames(), z.dim(), data))
}

/// Class-conditioned noise predictor `ε(Z_t, c, t)`.
pub trait Denoiser: Send + Sync {
    fn predict_noise(
        &self,
        class: usize,
        z: &LatentVideo,
        t: usize,
        s: &DiffusionSchedule,
    ) -> Result<NoisePrediction>;

    /// `(frames, dim)` of the latents this denoiser accepts.
    fn latent_shape(&self) -> (usize, usize);

    fn class_count(&self) -> usize;
}

/// Posterior of the clean sample under a class mixture.
#[derive(Debug, Clone)]
pub struct OraclePosterior {
    pub mean: DVector<f64>,
    pub responsibilities: Vec<f64>,
}

/// Exact posterior `E[x0 | Z_t]` for class `c` of `world`.
///
/// Component `i` has marginal `N(√ᾱ μ_i, ᾱ Σ_i + (1 − ᾱ) I)`; responsibilities
/// are normalized in log space with the max-subtraction trick.
pub fn oracle_posterior(
    world: &GaussianWorld,
    class: usize,
    z: &LatentVideo,
    t: usize,
    s: &DiffusionSchedule,
) -> Result<OraclePosterior> {
    s.check_t(t)?;
    if t == 0 {
        return Err(GvdError::Precondition(
            "oracle denoiser at t = 0: alpha_bar = 1 leaves the noise undefined".into(),
        ));
    }
    if z.shape() != (world.frames(), world.dim()) {
        return Err(GvdError::dimension(
            "oracle denoiser",
            format!("{}x{}", world.frames(), world.dim()),
            format!("{}x{}", z.frames(), z.dim()),
        ));
    }
    let modes = world.modes(class)?;
    let ab = s.alpha_bar(t);
    let sa = ab.sqrt();
    let n = world.flat_dim();
    let zv = DVector::from_column_slice(z.as_slice());

    let mut log_w = Vec::with_capacity(modes.len());
    let mut means = Vec::with_capacity(modes.len());
    for (k, mode) in modes.iter().enumerate() {
        let mut m = &mode.cov * ab;
        for i in 0..n {
            m[(i, i)] += 1.0 - ab;
        }
        let ch = linalg::cholesky_with_jitter(&m, &format!("class {class} mode {k} at t = {t}"))?;
        let r = &zv - &mode.mean * sa;
        let sol = ch.solve(&r);
        let quad = r.dot(&sol);
        let ld = linalg::log_det(&ch);
        log_w.push(mode.weight.ln() - 0.5 * (quad + ld));
        means.push(&mode.mean + (&mode.cov * sol) * sa);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GvdError::numerical(
            format!("oracle denoiser class {class} at t = {t}"),
            "all component log-likelihoods are non-finite",
        ));
    }
    let mut resp: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = resp.iter().sum();
    resp.iter_mut().for_each(|r| *r /= total);
    let mean = means
        .iter()
        .zip(&resp)
        .fold(DVector::zeros(n), |acc, (m, r)| acc + m * *r);
    Ok(OraclePosterior {
        mean,
        responsibilities: resp,
    })
}

/// `ε̂ = (Z_t − √ᾱ_t · E[x0 | Z_t]) / √(1 − ᾱ_t)`, exact for the world.
pub fn oracle_denoise(
    world: &GaussianWorld,
    class: usize,
    z: &LatentVideo,
    t: usize,
    s: &DiffusionSchedule,
) -> Result<NoisePrediction> {
    let post = oracle_posterior(world, class, z, t, s)?;
    let ab = s.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z
        .as_slice()
        .iter()
        .zip(post.mean.iter())
        .map(|(zv, m)| (zv - sa * m) / sn)
        .collect();
    Ok(NoisePrediction::new(LatentVideo::from_parts(
        z.frames(),
        z.dim(),
        data,
    )))
}

impl Denoiser for GaussianWorld {
    fn predict_noise(
        &self,
        class: usize,
        z: &LatentVideo,
        t: usize,
        s: &DiffusionSchedule,
    ) -> Result<NoisePrediction> {
        oracle_denoise(self, class, z, t, s)
    }

    fn latent_shape(&self) -> (usize, usize) {
        (self.frames(), self.dim())
    }

    fn class_count(&self) -> usize {
        GaussianWorld::class_count(self)
    }
}

/// Which noise predictor drives sampling.
#[derive(Debug, Clone)]
pub enum DenoiserSpec {
    Oracle(Arc<GaussianWorld>),
    Trainable(TrainedDenoiser),
}

impl Denoiser for DenoiserSpec {
    fn predict_noise(
        &self,
        class: usize,
        z: &LatentVideo,
        t: usize,
        s: &DiffusionSchedule,
    ) -> Result<NoisePrediction> {
        match self {
            DenoiserSpec::Oracle(w) => oracle_denoise(w, class, z, t, s),
            DenoiserSpec::Trainable(d) => d.predict_noise(class, z, t, s),
        }
    }

    fn latent_shape(&self) -> (usize, usize) {
        match self {
            DenoiserSpec::Oracle(w) => w.latent_shape(),
            DenoiserSpec::Trainable(d) => d.latent_shape(),
        }
    }

    fn class_count(&self) -> usize {
        match self {
            DenoiserSpec::Oracle(w) => Denoiser::class_count(w.as_ref()),
            DenoiserSpec::Trainable(d) => d.class_count(),
        }
    }
}
