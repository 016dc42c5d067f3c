//! Student/teacher classifiers, soft-label training and accuracy scoring.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::VideoDataset;
use crate::error::{GvdError, Result};
use crate::mlp::{Gradients, Mlp, Sgd};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Record train/test accuracy every this many epochs (and at the end).
    pub trace_every: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 300,
            batch: 128,
            lr: 0.01,
            momentum: 0.9,
            trace_every: 25,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(GvdError::config("hidden", "must be >= 1"));
        }
        if self.batch == 0 {
            return Err(GvdError::config("batch", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GvdError::config("lr", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GvdError::config("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftLabelConfig {
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for SoftLabelConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            temperature: 3.0,
        }
    }
}

impl SoftLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GvdError::config("alpha", "must lie in [0, 1]"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GvdError::config("temperature", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// One-hidden-layer classifier over flattened latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    net: Mlp,
}

impl Classifier {
    pub fn new(input: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        let net = Mlp::new(&[input, hidden, classes], &mut seed::rng_from(seed))?;
        Ok(Self { net })
    }

    pub fn from_net(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn class_count(&self) -> usize {
        self.net.output_size()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Hidden-layer activations, an optional feature space for metrics.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.net.trace(x).last_hidden().to_vec()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `α · teacher + (1 − α) · onehot(label)`.
pub fn blend_target(teacher: &[f64], label: usize, alpha: f64) -> Vec<f64> {
    teacher
        .iter()
        .enumerate()
        .map(|(i, p)| alpha * p + if i == label { 1.0 - alpha } else { 0.0 })
        .collect()
}

/// `KL(p ‖ q)` with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// Mean of `T² · KL(target ‖ softmax(logits / T))` over the batch and its
/// parameter gradient. The `T²` factor keeps gradient magnitudes comparable
/// across temperatures.
pub fn kl_loss_and_grad(net: &Mlp, batch: &[(&[f64], &[f64])], temperature: f64) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let t = temperature;
    for (x, target) in batch {
        let trace = net.trace(x);
        let q = softmax(trace.output(), t);
        loss += t * t * kl_divergence(target, &q);
        let d: Vec<f64> = q.iter().zip(target.iter()).map(|(qi, pi)| t * (qi - pi)).collect();
        net.backward(&trace, &d, &mut grads);
    }
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    (loss / n, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierTraining {
    pub classifier: Classifier,
    pub trace: Vec<EpochStats>,
}

/// Trains on `train`. With `soft`, each record's target blends its
/// teacher probabilities with the one-hot label; otherwise plain
/// cross-entropy (temperature 1).
pub fn train_classifier(
    train: &VideoDataset,
    soft: Option<(&[Vec<f64>], &SoftLabelConfig)>,
    cfg: &ClassifierConfig,
    test: Option<&VideoDataset>,
    seed: u64,
) -> Result<ClassifierTraining> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(GvdError::Precondition("training set is empty".into()));
    }
    let classes = train.class_count();
    let labels = train.labels();
    let (targets, temperature): (Vec<Vec<f64>>, f64) = match soft {
        Some((probs, sc)) => {
            sc.validate()?;
            if probs.len() != train.len() {
                return Err(GvdError::dimension("soft labels", train.len(), probs.len()));
            }
            let t = probs
                .iter()
                .zip(&labels)
                .map(|(p, &y)| {
                    if p.len() != classes {
                        return Err(GvdError::dimension("soft label row", classes, p.len()));
                    }
                    Ok(blend_target(p, y, sc.alpha))
                })
                .collect::<Result<_>>()?;
            (t, sc.temperature)
        }
        None => (
            labels.iter().map(|&y| blend_target(&vec![0.0; classes], y, 0.0)).collect(),
            1.0,
        ),
    };
    let xs = train.flat_features();
    let mut clf = Classifier::new(train.flat_dim(), cfg.hidden, classes, seed::mix(seed, "classifier-init", 0, 0))?;
    let mut opt = Sgd::new(&clf.net, cfg.lr, cfg.momentum);
    let mut rng = seed::task_rng(seed, "classifier-batches", 0, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        opt.lr = if epoch < cfg.epochs / 2 { cfg.lr } else { cfg.lr * 0.1 };
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(&[f64], &[f64])> =
                chunk.iter().map(|&i| (xs[i].as_slice(), targets[i].as_slice())).collect();
            let (loss, grads) = kl_loss_and_grad(&clf.net, &batch, temperature);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(GvdError::Training {
                    step,
                    reason: format!("non-finite loss {loss} in epoch {epoch}"),
                });
            }
            opt.step(&mut clf.net, &grads);
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.trace_every > 0 && (epoch + 1) % cfg.trace_every == 0) {
            trace.push(EpochStats {
                epoch: epoch + 1,
                loss: epoch_loss / train.len() as f64,
                train_acc: evaluate(&clf, train)?,
                test_acc: test.map(|d| evaluate(&clf, d)).transpose()?,
            });
        }
    }
    Ok(ClassifierTraining {
        classifier: clf,
        trace,
    })
}

/// Top-1 accuracy.
pub fn evaluate(clf: &Classifier, data: &VideoDataset) -> Result<f64> {
    if data.flat_dim() != clf.net.input_size() {
        return Err(GvdError::dimension("evaluate input", clf.net.input_size(), data.flat_dim()));
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits = data
        .records()
        .iter()
        .filter(|(y, v)| clf.predict(v.as_slice()) == *y as usize)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// `softmax(teacher(x) / T)` per record.
pub fn teacher_soft_labels(teacher: &Classifier, data: &VideoDataset, temperature: f64) -> Result<Vec<Vec<f64>>> {
    if !(temperature > 0.0) {
        return Err(GvdError::config("temperature", "must be > 0"));
    }
    Ok(data
        .records()
        .iter()
        .map(|(_, v)| softmax(&teacher.logits(v.as_slice()), temperature))
        .collect())
}

/// Accuracy of a full-data classifier on distilled samples.
pub fn representativeness(pretrained: &Classifier, distilled: &VideoDataset) -> Result<f64> {
    evaluate(pretrained, distilled)
}

pub fn write_trace_csv(trace: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "loss", "train_acc", "test_acc"]).map_err(csv_err)?;
    for s in trace {
        w.write_record([
            s.epoch.to_string(),
            s.loss.to_string(),
            s.train_acc.to_string(),
            s.test_acc.map(|a| a.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> GvdError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GvdError::Io(io),
        other => GvdError::Precondition(format!("csv: {other:?}")),
    }
}
