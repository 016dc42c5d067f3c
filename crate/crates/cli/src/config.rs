//! Experiment configuration, read from JSON. Every field has a default, so
//! `{}` is a valid config.

use std::fs;
use std::path::{Path, PathBuf};

use gvd_core::clustering::ClusterVariant;
use gvd_core::compose::CompositionStrategy;
use gvd_core::denoiser::DenoiserTrainConfig;
use gvd_core::diffusion::DiffusionSchedule;
use gvd_core::eval::{ClassifierConfig, SoftLabelConfig};
use gvd_core::pipeline::{DistillConfig, Method};
use gvd_core::world::BenchmarkParams;
use gvd_core::{GvdError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    /// Exact posterior of the synthetic world.
    Oracle,
    /// MLP fitted to the training set.
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    Raw,
    /// Hidden layer of the teacher classifier.
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub bins: usize,
    pub features: FeatureSpace,
    pub methods: Vec<Method>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            bins: gvd_core::metrics::DEFAULT_BINS,
            features: FeatureSpace::Raw,
            methods: vec![Method::Gvd, Method::Knoise, Method::Degenerate],
        }
    }
}

/// Axes of a hyperparameter grid; an empty axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    /// `t_stop` as a fraction of `T`.
    pub t_stop_fractions: Vec<f64>,
    pub patterns: Vec<Vec<usize>>,
    pub strategies: Vec<CompositionStrategy>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            lambdas: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            t_stop_fractions: Vec::new(),
            patterns: Vec::new(),
            strategies: Vec::new(),
        }
    }
}

impl SweepGrid {
    /// The composition grid: all five patterns under both strategies.
    pub fn composition() -> Self {
        Self {
            lambdas: Vec::new(),
            t_stop_fractions: Vec::new(),
            patterns: vec![
                vec![2; 8],
                vec![3, 3, 3, 3, 2, 2],
                vec![4, 4, 4, 4],
                vec![8, 8],
                vec![16],
            ],
            strategies: vec![CompositionStrategy::Continuous, CompositionStrategy::Random],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON world spec; the procedural benchmark is used when absent.
    pub world_spec: Option<PathBuf>,
    pub benchmark: BenchmarkParams,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserKind,
    pub denoiser_training: DenoiserTrainConfig,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub distill: DistillConfig,
    pub teacher: ClassifierConfig,
    pub student: ClassifierConfig,
    /// Teacher soft labels; hard labels when `null`.
    pub soft_labels: Option<SoftLabelConfig>,
    pub eval_seeds: usize,
    pub metrics: MetricOptions,
    pub sweep: SweepGrid,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// Dataset scored by `eval`; defaults to `<out_dir>/distilled.gvds`.
    pub eval_input: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world_spec: None,
            benchmark: BenchmarkParams::default(),
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserKind::Trained,
            denoiser_training: DenoiserTrainConfig::default(),
            train_per_class: 200,
            test_per_class: 100,
            distill: DistillConfig::default(),
            teacher: ClassifierConfig::default(),
            student: ClassifierConfig::default(),
            soft_labels: Some(SoftLabelConfig::default()),
            eval_seeds: 3,
            metrics: MetricOptions::default(),
            sweep: SweepGrid::default(),
            master_seed: 0,
            out_dir: PathBuf::from("gvd-out"),
            eval_input: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            GvdError::config("config", format!("cannot read {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| GvdError::config("config", format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.world_spec {
            if !p.exists() {
                return Err(GvdError::config(
                    "world_spec",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(GvdError::config("train_per_class", "per-class counts must be >= 1"));
        }
        if self.eval_seeds == 0 {
            return Err(GvdError::config("eval_seeds", "must be >= 1"));
        }
        if self.metrics.bins == 0 {
            return Err(GvdError::config("metrics.bins", "must be >= 1"));
        }
        self.teacher.validate()?;
        self.student.validate()?;
        if let Some(sl) = &self.soft_labels {
            sl.validate()?;
        }
        let s = self.schedule.build()?;
        self.distill.validate(self.benchmark_frames(), &s)?;
        if self.distill.clustering.variant != ClusterVariant::Direct {
            log::info!("clustering variant {:?}", self.distill.clustering.variant);
        }
        for f in &self.sweep.t_stop_fractions {
            if !(0.0..=1.0).contains(f) {
                return Err(GvdError::config("sweep.t_stop_fractions", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn benchmark_frames(&self) -> usize {
        self.world_spec
            .as_ref()
            .and_then(|p| fs::read_to_string(p).ok())
            .and_then(|s| serde_json::from_str::<gvd_core::world::WorldSpec>(&s).ok())
            .map(|w| w.frames)
            .unwrap_or(self.benchmark.frames)
    }

    pub fn with_method(&self, method: Method) -> Self {
        let mut c = self.clone();
        c.distill.method = method;
        c
    }
}
