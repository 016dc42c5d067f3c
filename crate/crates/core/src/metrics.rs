//! Diversity metrics over feature sets: codebook entropy, coverage and
//! mean pairwise distance.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{assign, kmeans, ClusterVariant, ClusteringConfig, Metric};
use crate::error::{GvdError, Result};
use crate::latent::{euclidean, norm};

pub const DEFAULT_BINS: usize = 32;

/// Shannon entropy (nats) of a histogram.
pub fn histogram_entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Fits `bins` codewords on `reference` and returns the entropy of the
/// codeword histogram of `features`.
pub fn entropy_metric(features: &[Vec<f64>], reference: &[Vec<f64>], bins: usize, seed: u64) -> Result<f64> {
    if features.is_empty() {
        return Err(GvdError::Precondition("entropy of an empty feature set".into()));
    }
    let cfg = ClusteringConfig {
        k: bins,
        variant: ClusterVariant::Direct,
        metric: Metric::Euclidean,
        max_iters: 100,
        restarts: 2,
        seed,
    };
    let codebook = kmeans(reference, &cfg)?.centers;
    let mut counts = vec![0usize; bins];
    for f in features {
        counts[assign(f, &codebook, Metric::Euclidean)?] += 1;
    }
    Ok(histogram_entropy(&counts))
}

/// Percentile with linear interpolation between order statistics at
/// position `q · (n − 1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(GvdError::Precondition("percentile of empty set or q outside [0, 1]".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

fn nearest(x: &[f64], set: &[Vec<f64>], skip: Option<usize>) -> f64 {
    set.iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, y)| euclidean(x, y))
        .fold(f64::INFINITY, f64::min)
}

/// `τ`: 90th percentile of nearest-other-point distances within `orig`.
pub fn coverage_radius(orig: &[Vec<f64>]) -> Result<f64> {
    if orig.len() < 2 {
        return Err(GvdError::Precondition("coverage needs >= 2 original points".into()));
    }
    let nn: Vec<f64> = orig
        .par_iter()
        .enumerate()
        .map(|(i, x)| nearest(x, orig, Some(i)))
        .collect();
    percentile(&nn, 0.9)
}

/// Fraction of `orig` points within `τ` of their nearest `small` point.
pub fn coverage_metric(orig: &[Vec<f64>], small: &[Vec<f64>]) -> Result<f64> {
    if small.is_empty() {
        return Err(GvdError::Precondition("coverage of an empty small set".into()));
    }
    let tau = coverage_radius(orig)?;
    let hit = orig
        .par_iter()
        .filter(|x| nearest(x, small, None) <= tau)
        .count();
    Ok(hit as f64 / orig.len() as f64)
}

/// Scales to unit L2 norm; zero vectors stay zero.
pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    let n = norm(x);
    if n == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|v| v / n).collect()
}

/// Mean Euclidean distance over unordered pairs of L2-normalized features.
pub fn mpd_metric(features: &[Vec<f64>]) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(GvdError::Precondition("mpd needs >= 2 vectors".into()));
    }
    let unit: Vec<Vec<f64>> = features.iter().map(|f| l2_normalize(f)).collect();
    // Plain pair order keeps the sum reproducible to the last bit.
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += euclidean(&unit[i], &unit[j]);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub entropy: f64,
    pub coverage: f64,
    pub mpd: f64,
    #[serde(default)]
    pub accuracy: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn compute(features: &[Vec<f64>], reference: &[Vec<f64>], bins: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            entropy: entropy_metric(features, reference, bins, seed)?,
            coverage: coverage_metric(reference, features)?,
            mpd: mpd_metric(features)?,
            accuracy: BTreeMap::new(),
        })
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        let ok = self.entropy >= 0.0
            && self.entropy <= (bins as f64).ln() + 1e-12
            && (0.0..=1.0).contains(&self.coverage)
            && self.mpd >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GvdError::numerical("metric report", format!("values out of range: {self:?}")))
        }
    }
}
