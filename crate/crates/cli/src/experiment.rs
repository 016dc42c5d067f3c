//! Shared experiment context: world, data, teacher and the evaluation
//! protocol used by every command and by the acceptance suite.

use std::fs;
use std::sync::{Arc, OnceLock};

use gvd_core::dataset::{DistilledDataset, VideoDataset};
use gvd_core::denoiser::{train_denoiser, DenoiserTrainConfig};
use gvd_core::diffusion::{DenoiserSpec, DiffusionSchedule};
use gvd_core::eval::{
    evaluate, representativeness, teacher_soft_labels, train_classifier, Classifier, EpochStats,
};
use gvd_core::metrics::MetricReport;
use gvd_core::pipeline::{distill, DistillConfig, Distillation};
use gvd_core::seed::mix;
use gvd_core::world::{build_world, sample_dataset, GaussianWorld, WorldSpec};
use gvd_core::{GvdError, Result};
use serde::{Deserialize, Serialize};

use crate::config::{DenoiserKind, ExperimentConfig, FeatureSpace};

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub spec: WorldSpec,
    pub world: Arc<GaussianWorld>,
    pub schedule: DiffusionSchedule,
    pub train: VideoDataset,
    pub test: VideoDataset,
    teacher: OnceLock<Classifier>,
    denoiser: OnceLock<DenoiserSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    pub soft_labels: bool,
    #[serde(skip)]
    pub trace: Vec<EpochStats>,
}

impl EvalReport {
    pub fn from_runs(accuracies: Vec<f64>, soft_labels: bool, trace: Vec<EpochStats>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            accuracies,
            mean,
            std,
            soft_labels,
            trace,
        }
    }
}

pub fn world_spec(cfg: &ExperimentConfig) -> Result<WorldSpec> {
    match &cfg.world_spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                GvdError::config("world_spec", format!("cannot read {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| GvdError::config("world_spec", format!("{}: {e}", p.display())))
        }
        None => Ok(WorldSpec::benchmark(&cfg.benchmark, cfg.master_seed)),
    }
}

impl Experiment {
    /// Builds the world and samples fresh train/test sets.
    pub fn synthesize(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = world_spec(cfg)?;
        let world = build_world(&spec)?;
        let train = sample_dataset(&world, cfg.train_per_class, mix(cfg.master_seed, "train", 0, 0))?;
        let test = sample_dataset(&world, cfg.test_per_class, mix(cfg.master_seed, "test", 0, 0))?;
        Self::assemble(cfg, spec, world, train, test)
    }

    /// Uses previously written train/test sets.
    pub fn with_data(cfg: &ExperimentConfig, train: VideoDataset, test: VideoDataset) -> Result<Self> {
        let spec = world_spec(cfg)?;
        let world = build_world(&spec)?;
        if (train.frames(), train.dim(), train.class_count())
            != (world.frames(), world.dim(), world.class_count())
        {
            return Err(GvdError::dimension(
                "train set vs world",
                format!("{}x{} / {} classes", world.frames(), world.dim(), world.class_count()),
                format!("{}x{} / {} classes", train.frames(), train.dim(), train.class_count()),
            ));
        }
        Self::assemble(cfg, spec, world, train, test)
    }

    fn assemble(
        cfg: &ExperimentConfig,
        spec: WorldSpec,
        world: GaussianWorld,
        train: VideoDataset,
        test: VideoDataset,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            spec,
            world: Arc::new(world),
            schedule: cfg.schedule.build()?,
            train,
            test,
            teacher: OnceLock::new(),
            denoiser: OnceLock::new(),
        })
    }

    pub fn denoiser(&self) -> Result<&DenoiserSpec> {
        if let Some(d) = self.denoiser.get() {
            return Ok(d);
        }
        let d = match self.cfg.denoiser {
            DenoiserKind::Oracle => DenoiserSpec::Oracle(Arc::clone(&self.world)),
            DenoiserKind::Trained => {
                let tcfg = DenoiserTrainConfig {
                    seed: mix(self.cfg.master_seed, "denoiser", 0, 0),
                    ..self.cfg.denoiser_training.clone()
                };
                let fit = train_denoiser(&self.train, &self.schedule, &tcfg, |_, _| {})?;
                DenoiserSpec::Trainable(fit.denoiser)
            }
        };
        Ok(self.denoiser.get_or_init(|| d))
    }

    /// Classifier trained on the full train set.
    pub fn teacher(&self) -> Result<&Classifier> {
        if let Some(t) = self.teacher.get() {
            return Ok(t);
        }
        let seed = mix(self.cfg.master_seed, "teacher", 0, 0);
        let fit = train_classifier(&self.train, None, &self.cfg.teacher, None, seed)?;
        Ok(self.teacher.get_or_init(|| fit.classifier))
    }

    /// Distillation with the experiment's master seed.
    pub fn distill(&self, dcfg: &DistillConfig) -> Result<Distillation> {
        let dcfg = DistillConfig {
            seed: self.cfg.master_seed,
            ..dcfg.clone()
        };
        distill(&self.train, self.denoiser()?, &self.schedule, &dcfg)
    }

    /// Attaches teacher soft labels when the config enables them.
    pub fn label(&self, videos: VideoDataset) -> Result<DistilledDataset> {
        match &self.cfg.soft_labels {
            Some(sl) => {
                let probs = teacher_soft_labels(self.teacher()?, &videos, sl.temperature)?;
                DistilledDataset::with_soft_labels(videos, probs)
            }
            None => Ok(DistilledDataset::hard(videos)),
        }
    }

    /// Trains `eval_seeds` students on `data` and scores them on the test set.
    pub fn evaluate_students(&self, data: &DistilledDataset) -> Result<EvalReport> {
        let soft = match (&data.soft_labels, &self.cfg.soft_labels) {
            (Some(p), Some(sl)) => Some((p.as_slice(), sl)),
            _ => None,
        };
        let mut accs = Vec::with_capacity(self.cfg.eval_seeds);
        let mut first_trace = Vec::new();
        for r in 0..self.cfg.eval_seeds {
            let seed = mix(self.cfg.master_seed, "student", 0, r as u64);
            let fit = train_classifier(&data.videos, soft, &self.cfg.student, Some(&self.test), seed)
                .map_err(|e| e.with_context(&format!("student run {r}")))?;
            accs.push(evaluate(&fit.classifier, &self.test)?);
            if r == 0 {
                first_trace = fit.trace;
            }
        }
        Ok(EvalReport::from_runs(accs, soft.is_some(), first_trace))
    }

    pub fn representativeness(&self, videos: &VideoDataset) -> Result<f64> {
        representativeness(self.teacher()?, videos)
    }

    pub fn features(&self, ds: &VideoDataset) -> Result<Vec<Vec<f64>>> {
        Ok(match self.cfg.metrics.features {
            FeatureSpace::Raw => ds.flat_features(),
            FeatureSpace::Hidden => {
                let t = self.teacher()?;
                ds.records().iter().map(|(_, v)| t.features(v.as_slice())).collect()
            }
        })
    }

    /// Metric trio of `distilled` against the train set.
    pub fn metrics(&self, distilled: &VideoDataset) -> Result<MetricReport> {
        let feats = self.features(distilled)?;
        let reference = self.features(&self.train)?;
        let report = MetricReport::compute(
            &feats,
            &reference,
            self.cfg.metrics.bins,
            mix(self.cfg.master_seed, "metrics-codebook", 0, 0),
        )?;
        report.validate(self.cfg.metrics.bins)?;
        Ok(report)
    }
}
