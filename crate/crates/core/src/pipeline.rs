//! End-to-end distillation: cluster, sample, compose.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_dataset, ClusterCenters, ClusterVariant, ClusteringConfig};
use crate::compose::{compose_dataset, CompositionPlan, ProvenanceEntry};
use crate::dataset::VideoDataset;
use crate::diffusion::{Denoiser, DiffusionSchedule};
use crate::error::{GvdError, Result};
use crate::eval::csv_err;
use crate::latent::LatentVideo;
use crate::sampler::{
    distill_class, instance_seed, sample_knoise, sample_naive, GuidanceConfig, SampleTrace,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Prototype-guided sampling.
    Gvd,
    /// Unguided class-conditional sampling.
    Naive,
    /// Noised first-frame prototypes denoised without guidance.
    Knoise,
    /// The class mean repeated `IPC` times.
    Degenerate,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gvd => "gvd",
            Method::Naive => "naive",
            Method::Knoise => "knoise",
            Method::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub method: Method,
    pub ipc: usize,
    /// `k` is overridden with `IPC · U`.
    pub clustering: ClusteringConfig,
    pub guidance: GuidanceConfig,
    /// `seed` is overridden with one derived from the master seed.
    pub composition: CompositionPlan,
    /// K-Noise start time as a fraction of `T`.
    pub knoise_strength: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            method: Method::Gvd,
            ipc: 5,
            clustering: ClusteringConfig::default(),
            guidance: GuidanceConfig::default(),
            composition: CompositionPlan::default(),
            knoise_strength: 0.7,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn instances_per_class(&self) -> usize {
        self.ipc * self.composition.group_size()
    }

    pub fn validate(&self, frames: usize, s: &DiffusionSchedule) -> Result<()> {
        if self.ipc == 0 {
            return Err(GvdError::config("ipc", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.knoise_strength) {
            return Err(GvdError::config("knoise_strength", "must lie in [0, 1]"));
        }
        self.composition.validate(frames)?;
        self.guidance.validate(s)?;
        self.cluster_config(self.instances_per_class()).validate()
    }

    fn cluster_config(&self, k: usize) -> ClusteringConfig {
        ClusteringConfig {
            k,
            seed: self.seed,
            ..self.clustering.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceTrace {
    pub instance_id: usize,
    pub class: u32,
    pub trace: SampleTrace,
}

#[derive(Debug, Clone)]
pub struct Distillation {
    pub centers: Option<ClusterCenters>,
    /// `IPC · U` generated instances per class, class-major.
    pub raw: VideoDataset,
    pub distilled: VideoDataset,
    pub provenance: Vec<ProvenanceEntry>,
    pub traces: Vec<InstanceTrace>,
}

/// Runs one distillation method on `train`.
pub fn distill<D: Denoiser + ?Sized>(
    train: &VideoDataset,
    denoiser: &D,
    s: &DiffusionSchedule,
    cfg: &DistillConfig,
) -> Result<Distillation> {
    let (frames, dim) = (train.frames(), train.dim());
    cfg.validate(frames, s)?;
    if denoiser.latent_shape() != (frames, dim) || denoiser.class_count() != train.class_count() {
        return Err(GvdError::dimension(
            "denoiser vs dataset",
            format!("{frames}x{dim}, {} classes", train.class_count()),
            format!("{:?}, {} classes", denoiser.latent_shape(), denoiser.class_count()),
        ));
    }
    let n = cfg.instances_per_class();
    let sample_seed = seed::mix(cfg.seed, "sample", 0, 0);
    let stage = |name: &'static str| move |e: GvdError| e.with_context(name);

    let mut raw = VideoDataset::new(frames, dim, train.class_count());
    let mut traces = Vec::new();
    let centers = match cfg.method {
        Method::Gvd => {
            let centers = cluster_dataset(train, &cfg.cluster_config(n)).map_err(stage("cluster"))?;
            for c in 0..train.class_count() {
                let protos: Vec<LatentVideo> = (0..n)
                    .map(|k| centers.prototype(c, k))
                    .collect::<Result<_>>()?;
                let out = distill_class(denoiser, c, &protos, &cfg.guidance, s, sample_seed)
                    .map_err(stage("sample"))?;
                for (video, trace) in out {
                    traces.push(InstanceTrace {
                        instance_id: raw.len(),
                        class: c as u32,
                        trace,
                    });
                    raw.push(c as u32, video)?;
                }
            }
            Some(centers)
        }
        Method::Naive => {
            for c in 0..train.class_count() {
                let out: Vec<LatentVideo> = (0..n)
                    .into_par_iter()
                    .map(|k| sample_naive(denoiser, c, &cfg.guidance, s, instance_seed(sample_seed, c, k)))
                    .collect::<Result<_>>()
                    .map_err(stage("sample"))?;
                for v in out {
                    raw.push(c as u32, v)?;
                }
            }
            None
        }
        Method::Knoise => {
            let ccfg = ClusteringConfig {
                variant: ClusterVariant::DummyVideo,
                ..cfg.cluster_config(n)
            };
            let centers = cluster_dataset(train, &ccfg).map_err(stage("cluster"))?;
            let t_start = (cfg.knoise_strength * s.steps() as f64).round() as usize;
            for c in 0..train.class_count() {
                let out: Vec<LatentVideo> = (0..n)
                    .into_par_iter()
                    .map(|k| {
                        let proto = centers.prototype(c, k)?;
                        sample_knoise(denoiser, c, &proto, t_start, &cfg.guidance, s, instance_seed(sample_seed, c, k))
                    })
                    .collect::<Result<_>>()
                    .map_err(stage("sample"))?;
                for v in out {
                    raw.push(c as u32, v)?;
                }
            }
            Some(centers)
        }
        Method::Degenerate => {
            let ccfg = ClusteringConfig {
                variant: ClusterVariant::Direct,
                ..cfg.cluster_config(1)
            };
            let centers = cluster_dataset(train, &ccfg).map_err(stage("cluster"))?;
            for c in 0..train.class_count() {
                let proto = centers.prototype(c, 0)?;
                for _ in 0..cfg.ipc {
                    raw.push(c as u32, proto.clone())?;
                }
            }
            let distilled = raw.clone();
            let provenance = identity_provenance(&raw);
            return Ok(Distillation {
                centers: Some(centers),
                raw,
                distilled,
                provenance,
                traces,
            });
        }
    };

    let plan = CompositionPlan {
        seed: seed::mix(cfg.seed, "compose", 0, 0),
        ..cfg.composition.clone()
    };
    let (distilled, provenance) = compose_dataset(&raw, &plan).map_err(stage("compose"))?;
    Ok(Distillation {
        centers,
        raw,
        distilled,
        provenance,
        traces,
    })
}

fn identity_provenance(ds: &VideoDataset) -> Vec<ProvenanceEntry> {
    ds.records()
        .iter()
        .enumerate()
        .map(|(i, (c, v))| ProvenanceEntry {
            composed_id: i,
            class: *c,
            sources: vec![crate::compose::SourceFrames {
                raw_id: i,
                frames: (0..v.frames()).collect(),
            }],
        })
        .collect()
}

/// CSV with columns `instance_id, class_id, step_t, g_norm, x0_dist`.
pub fn write_traces_csv(traces: &[InstanceTrace], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["instance_id", "class_id", "step_t", "g_norm", "x0_dist"])
        .map_err(csv_err)?;
    for it in traces {
        for st in &it.trace.steps {
            w.write_record([
                it.instance_id.to_string(),
                it.class.to_string(),
                st.t.to_string(),
                st.g_norm.to_string(),
                st.x0_dist.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
