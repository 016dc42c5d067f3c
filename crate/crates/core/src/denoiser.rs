//! Class-conditioned MLP noise predictor trained on the L2 noise-matching loss
//! `E ‖ε_gt − ε_θ(Z_t, c, t)‖²`.
//!
//! Input features: flattened `Z_t`, one-hot class, `√ᾱ_t` and `√(1 − ᾱ_t)`.
//! The network output `r` is combined with a skip path,
//! `ε_θ = √(1 − ᾱ_t) Z_t + √ᾱ_t r`: the skip term is the exact answer for
//! standard-normal data and the residual stays bounded at every `t`, so the
//! implied `x̂0` error is `√(1 − ᾱ_t) · δr` instead of blowing up like
//! `1/√ᾱ_t` near `t = T`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::VideoDataset;
use crate::diffusion::{forward_diffuse, Denoiser, DiffusionSchedule};
use crate::error::{GvdError, Result};
use crate::latent::{LatentVideo, NoisePrediction};
use crate::mlp::{Gradients, Mlp, Sgd};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            lr: 1e-3,
            momentum: 0.9,
            epochs: 50,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDenoiser {
    frames: usize,
    dim: usize,
    classes: usize,
    net: Mlp,
}

/// One training example for the noise-matching loss.
#[derive(Debug, Clone)]
pub struct NoiseExample {
    pub class: usize,
    pub t: usize,
    pub noisy: LatentVideo,
    pub noise: LatentVideo,
}

impl TrainedDenoiser {
    pub fn init<R: Rng + ?Sized>(
        frames: usize,
        dim: usize,
        classes: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let n = frames * dim;
        let mut sizes = vec![n + classes + 2];
        sizes.extend_from_slice(hidden);
        sizes.push(n);
        Ok(Self {
            frames,
            dim,
            classes,
            net: Mlp::new(&sizes, rng)?,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn features(&self, class: usize, z: &LatentVideo, t: usize, s: &DiffusionSchedule) -> Vec<f64> {
        let ab = s.alpha_bar(t);
        let mut x = Vec::with_capacity(self.net.input_size());
        x.extend_from_slice(z.as_slice());
        x.extend((0..self.classes).map(|c| if c == class { 1.0 } else { 0.0 }));
        x.push(ab.sqrt());
        x.push((1.0 - ab).sqrt());
        x
    }

    fn combine(z: &[f64], residual: &[f64], ab: f64) -> Vec<f64> {
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        z.iter().zip(residual).map(|(z, r)| b * z + a * r).collect()
    }

    /// Mean over the batch of `‖ε_gt − ε_θ‖²`, and its gradient.
    pub fn loss_and_grad(
        &self,
        batch: &[NoiseExample],
        s: &DiffusionSchedule,
    ) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(&self.net);
        let mut loss = 0.0;
        for ex in batch {
            let ab = s.alpha_bar(ex.t);
            let tr = self.net.trace(&self.features(ex.class, &ex.noisy, ex.t, s));
            let pred = Self::combine(ex.noisy.as_slice(), tr.output(), ab);
            let g: Vec<f64> = pred
                .iter()
                .zip(ex.noise.as_slice())
                .map(|(p, e)| {
                    loss += (p - e) * (p - e);
                    2.0 * (p - e) * ab.sqrt()
                })
                .collect();
            self.net.backward(&tr, &g, &mut grads);
        }
        let k = 1.0 / batch.len() as f64;
        grads.scale(k);
        (loss * k, grads)
    }
}

impl Denoiser for TrainedDenoiser {
    fn predict_noise(
        &self,
        class: usize,
        z: &LatentVideo,
        t: usize,
        s: &DiffusionSchedule,
    ) -> Result<NoisePrediction> {
        if z.shape() != (self.frames, self.dim) {
            return Err(GvdError::dimension(
                "trained denoiser",
                format!("{}x{}", self.frames, self.dim),
                format!("{}x{}", z.frames(), z.dim()),
            ));
        }
        if class >= self.classes {
            return Err(GvdError::Precondition(format!(
                "class {class} not known to denoiser ({} classes)",
                self.classes
            )));
        }
        if t == 0 || t > s.steps() {
            return Err(GvdError::Precondition(format!("timestep {t} outside [1, {}]", s.steps())));
        }
        let r = self.net.forward(&self.features(class, z, t, s));
        let out = Self::combine(z.as_slice(), &r, s.alpha_bar(t));
        LatentVideo::new(self.frames, self.dim, out).map(NoisePrediction::new)
    }

    fn latent_shape(&self) -> (usize, usize) {
        (self.frames, self.dim)
    }

    fn class_count(&self) -> usize {
        self.classes
    }
}

/// Draws a fresh `(t, ε)` pair for a clean record.
pub fn noise_example<R: Rng + ?Sized>(
    class: usize,
    x0: &LatentVideo,
    s: &DiffusionSchedule,
    rng: &mut R,
) -> Result<NoiseExample> {
    let t = rng.random_range(1..=s.steps());
    let noise_data = (0..x0.len()).map(|_| StandardNormal.sample(rng)).collect();
    let noise = LatentVideo::new(x0.frames(), x0.dim(), noise_data)?;
    let noisy = forward_diffuse(x0, t, &noise, s)?;
    Ok(NoiseExample {
        class,
        t,
        noisy,
        noise,
    })
}

#[derive(Debug, Clone)]
pub struct DenoiserTraining {
    pub denoiser: TrainedDenoiser,
    /// Mean loss of every epoch.
    pub loss_trace: Vec<f64>,
}

/// Fits a denoiser by minibatch SGD; `on_epoch(epoch, &model)` runs after
/// every completed epoch.
pub fn train_denoiser(
    train: &VideoDataset,
    s: &DiffusionSchedule,
    cfg: &DenoiserTrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainedDenoiser),
) -> Result<DenoiserTraining> {
    if train.is_empty() {
        return Err(GvdError::config("train", "dataset is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(GvdError::config("batch_size", "must be >= 1"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(GvdError::config("lr", "must be positive"));
    }
    let mut init_rng = seed::task_rng(cfg.seed, "denoiser-init", 0, 0);
    let mut model = TrainedDenoiser::init(
        train.frames(),
        train.dim(),
        train.class_count(),
        &cfg.hidden,
        &mut init_rng,
    )?;
    let mut opt = Sgd::new(&model.net, cfg.lr, cfg.momentum);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = seed::task_rng(cfg.seed, "denoiser-epoch", 0, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let (c, v) = &train.records()[i];
                    noise_example(*c as usize, v, s, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = model.loss_and_grad(&batch, s);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(GvdError::Training {
                    step,
                    reason: format!("non-finite loss {loss} in epoch {epoch}"),
                });
            }
            opt.step(&mut model.net, &grads);
            total += loss * chunk.len() as f64;
            step += 1;
        }
        loss_trace.push(total / train.len() as f64);
        on_epoch(epoch, &model);
    }
    Ok(DenoiserTraining {
        denoiser: model,
        loss_trace,
    })
}
