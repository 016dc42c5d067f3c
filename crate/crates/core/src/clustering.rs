//! Per-class prototypes by k-means (Lloyd iterations, k-means++ seeding).
//!
//! Inputs are sorted into a canonical order before clustering, so the result
//! does not depend on the order records appear in a dataset.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::VideoDataset;
use crate::error::{GvdError, Result};
use crate::latent::{norm, squared_euclidean, LatentVideo};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterVariant {
    /// k-means over whole flattened videos.
    Direct,
    /// k-means over first frames, returning the nearest real videos.
    RealVideo,
    /// k-means over first frames, each center repeated for every frame.
    DummyVideo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Also accepted as `frobenius`: the Frobenius norm of an `F × D`
    /// difference is the Euclidean norm of the flattened difference.
    #[serde(alias = "frobenius")]
    Euclidean,
    Cosine,
}

impl Metric {
    pub const FROBENIUS: Metric = Metric::Euclidean;

    /// Squared Euclidean distance, or `1 − cos` for the cosine metric.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => squared_euclidean(a, b),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                1.0 - dot / (norm(a) * norm(b))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub k: usize,
    pub variant: ClusterVariant,
    pub metric: Metric,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 4,
            variant: ClusterVariant::Direct,
            metric: Metric::Euclidean,
            max_iters: 100,
            restarts: 4,
            seed: 0,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(GvdError::config("k", "must be >= 1"));
        }
        if self.max_iters < 1 {
            return Err(GvdError::config("max_iters", "must be >= 1"));
        }
        if self.restarts < 1 {
            return Err(GvdError::config("restarts", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    /// Cluster of each input, in input order.
    pub labels: Vec<usize>,
    pub sse: f64,
    /// Objective after every assignment step of the winning restart.
    pub sse_trace: Vec<f64>,
    pub restart: usize,
}

/// Index of the nearest center; the lowest index wins ties.
pub fn assign(x: &[f64], centers: &[Vec<f64>], metric: Metric) -> Result<usize> {
    if centers.is_empty() {
        return Err(GvdError::Clustering("no centers to assign to".into()));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != x.len()) {
        return Err(GvdError::dimension("assign", x.len(), c.len()));
    }
    if metric == Metric::Cosine && norm(x) == 0.0 {
        return Err(GvdError::Clustering("zero vector under cosine metric".into()));
    }
    Ok(nearest(x, centers, metric).0)
}

fn nearest(x: &[f64], centers: &[Vec<f64>], metric: Metric) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = metric.distance(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

struct Run {
    centers: Vec<Vec<f64>>,
    labels: Vec<usize>,
    sse: f64,
    trace: Vec<f64>,
}

fn seed_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, metric: Metric, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| metric.distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave u at the very end of the mass
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every point coincides with a center; take the first unused one
            chosen.iter().position(|c| !c).unwrap()
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            let d = metric.distance(p, centers.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

fn assign_all(points: &[Vec<f64>], centers: &[Vec<f64>], metric: Metric) -> (Vec<usize>, f64) {
    let mut sse = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (i, d) = nearest(p, centers, metric);
            sse += d;
            i
        })
        .collect();
    (labels, sse)
}

fn update(points: &[Vec<f64>], labels: &[usize], prev: &[Vec<f64>], metric: Metric) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; prev.len()];
    let mut counts = vec![0usize; prev.len()];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    sums.into_iter()
        .zip(counts)
        .zip(prev)
        .map(|((mut s, n), old)| {
            if n == 0 {
                return old.clone();
            }
            s.iter_mut().for_each(|v| *v /= n as f64);
            if metric == Metric::Cosine {
                let len = norm(&s);
                if len == 0.0 {
                    return old.clone();
                }
                s.iter_mut().for_each(|v| *v /= len);
            }
            s
        })
        .collect()
}

fn lloyd<R: Rng>(points: &[Vec<f64>], k: usize, metric: Metric, max_iters: usize, rng: &mut R) -> Run {
    let mut centers = seed_plus_plus(points, k, metric, rng);
    let (mut labels, mut sse) = assign_all(points, &centers, metric);
    let mut trace = vec![sse];
    for _ in 0..max_iters {
        let next = update(points, &labels, &centers, metric);
        let (next_labels, next_sse) = assign_all(points, &next, metric);
        debug_assert!(
            next_sse <= sse * (1.0 + 1e-12) + 1e-12,
            "Lloyd step increased SSE: {sse} -> {next_sse}"
        );
        centers = next;
        trace.push(next_sse);
        let done = next_labels == labels;
        labels = next_labels;
        sse = next_sse;
        if done {
            break;
        }
    }
    Run {
        centers,
        labels,
        sse,
        trace,
    }
}

/// k-means over arbitrary vectors, best of `cfg.restarts` runs by SSE.
///
/// Under the cosine metric the objective is `Σ (1 − cos)`, inputs are
/// normalized once, and each returned center is rescaled to the mean norm
/// of its members so it lives on the scale of the data.
pub fn kmeans(points: &[Vec<f64>], cfg: &ClusteringConfig) -> Result<KMeansResult> {
    cfg.validate()?;
    if points.len() < cfg.k {
        return Err(GvdError::Clustering(format!(
            "{} points cannot form {} clusters",
            points.len(),
            cfg.k
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(GvdError::dimension("kmeans input", dim, "ragged or empty vectors"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GvdError::Clustering("non-finite input".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lexicographic(&points[a], &points[b]).then(a.cmp(&b)));
    let work: Vec<Vec<f64>> = match cfg.metric {
        Metric::Euclidean => order.iter().map(|&i| points[i].clone()).collect(),
        Metric::Cosine => order
            .iter()
            .map(|&i| {
                let len = norm(&points[i]);
                if len == 0.0 {
                    return Err(GvdError::Clustering(format!(
                        "zero vector at input {i} under cosine metric"
                    )));
                }
                Ok(points[i].iter().map(|v| v / len).collect())
            })
            .collect::<Result<_>>()?,
    };

    let runs: Vec<Run> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::task_rng(cfg.seed, "kmeans-restart", 0, r as u64);
            lloyd(&work, cfg.k, cfg.metric, cfg.max_iters, &mut rng)
        })
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.sse.total_cmp(&b.sse).then(ia.cmp(ib)))
        .unwrap();

    let mut labels = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = best.labels[pos];
    }
    let mut centers = best.centers;
    if cfg.metric == Metric::Cosine {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = labels
                .iter()
                .zip(points)
                .filter(|(l, _)| **l == c)
                .map(|(_, p)| norm(p))
                .collect();
            if !members.is_empty() {
                let scale = members.iter().sum::<f64>() / members.len() as f64;
                center.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    Ok(KMeansResult {
        centers,
        labels,
        sse: best.sse,
        sse_trace: best.trace,
        restart,
    })
}

/// Prototypes from whole flattened videos.
pub fn kmeans_direct(latents: &[Vec<f64>], cfg: &ClusteringConfig) -> Result<Vec<Vec<f64>>> {
    Ok(kmeans(latents, cfg)?.centers)
}

fn first_frames(videos: &[&LatentVideo]) -> Vec<Vec<f64>> {
    videos.iter().map(|v| v.frame(0).to_vec()).collect()
}

/// Clusters first frames, then returns the dataset video nearest to each
/// center (first-frame Euclidean distance); a video already taken by an
/// earlier center is skipped in favor of the next-nearest one.
pub fn cluster_real_video_indices(videos: &[&LatentVideo], cfg: &ClusteringConfig) -> Result<Vec<usize>> {
    let firsts = first_frames(videos);
    let centers = kmeans(&firsts, cfg)?.centers;
    let mut used = vec![false; videos.len()];
    let mut picks = Vec::with_capacity(centers.len());
    for c in &centers {
        let mut ranked: Vec<(f64, usize)> = firsts
            .iter()
            .enumerate()
            .map(|(i, f)| (squared_euclidean(f, c), i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (_, pick) = ranked
            .into_iter()
            .find(|(_, i)| !used[*i])
            .expect("k <= number of videos");
        used[pick] = true;
        picks.push(pick);
    }
    Ok(picks)
}

pub fn cluster_real_video(videos: &[&LatentVideo], cfg: &ClusteringConfig) -> Result<Vec<Vec<f64>>> {
    Ok(cluster_real_video_indices(videos, cfg)?
        .into_iter()
        .map(|i| videos[i].as_slice().to_vec())
        .collect())
}

/// First-frame centers replicated across every frame.
pub fn cluster_dummy_video(videos: &[&LatentVideo], cfg: &ClusteringConfig) -> Result<Vec<Vec<f64>>> {
    let frames = videos.first().map(|v| v.frames()).unwrap_or(0);
    let centers = kmeans(&first_frames(videos), cfg)?.centers;
    Ok(centers
        .into_iter()
        .map(|c| std::iter::repeat_n(c, frames).flatten().collect())
        .collect())
}

pub fn cluster_videos(videos: &[&LatentVideo], cfg: &ClusteringConfig) -> Result<Vec<Vec<f64>>> {
    match cfg.variant {
        ClusterVariant::Direct => {
            let flat: Vec<Vec<f64>> = videos.iter().map(|v| v.as_slice().to_vec()).collect();
            kmeans_direct(&flat, cfg)
        }
        ClusterVariant::RealVideo => cluster_real_video(videos, cfg),
        ClusterVariant::DummyVideo => cluster_dummy_video(videos, cfg),
    }
}

/// Prototypes for every class of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCenters {
    pub variant: ClusterVariant,
    pub frames: usize,
    pub dim: usize,
    /// `per_class[c][k]` is a flattened prototype.
    pub per_class: Vec<Vec<Vec<f64>>>,
}

impl ClusterCenters {
    pub fn prototype(&self, class: usize, k: usize) -> Result<LatentVideo> {
        LatentVideo::new(self.frames, self.dim, self.per_class[class][k].clone())
    }

    /// One record per center, class ids preserved.
    pub fn to_dataset(&self) -> Result<VideoDataset> {
        let mut ds = VideoDataset::new(self.frames, self.dim, self.per_class.len());
        for (c, centers) in self.per_class.iter().enumerate() {
            for center in centers {
                ds.push(c as u32, LatentVideo::new(self.frames, self.dim, center.clone())?)?;
            }
        }
        Ok(ds)
    }
}

/// Clusters every class independently; class `c` uses seed
/// `mix(cfg.seed, "cluster", c, 0)`.
pub fn cluster_dataset(ds: &VideoDataset, cfg: &ClusteringConfig) -> Result<ClusterCenters> {
    let per_class = (0..ds.class_count())
        .into_par_iter()
        .map(|c| {
            let videos = ds.class_videos(c as u32);
            let class_cfg = ClusteringConfig {
                seed: seed::mix(cfg.seed, "cluster", c as u64, 0),
                ..cfg.clone()
            };
            cluster_videos(&videos, &class_cfg)
                .map_err(|e| e.with_context(&format!("class {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterCenters {
        variant: cfg.variant,
        frames: ds.frames(),
        dim: ds.dim(),
        per_class,
    })
}
