//! Subcommand implementations. Every command reads and writes files under
//! `out_dir` and returns a small summary for the terminal.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gvd_core::clustering::cluster_dataset;
use gvd_core::compose::{compose_dataset, CompositionPlan};
use gvd_core::dataset::{load_dataset, load_distilled, save_dataset, save_distilled};
use gvd_core::eval::write_trace_csv;
use gvd_core::metrics::MetricReport;
use gvd_core::pipeline::{write_traces_csv, DistillConfig, Method};
use gvd_core::seed::mix;
use gvd_core::world::{build_world, WorldSpec};
use gvd_core::{GvdError, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{world_spec, EvalReport, Experiment};

pub const TRAIN_FILE: &str = "train.gvds";
pub const TEST_FILE: &str = "test.gvds";
pub const WORLD_FILE: &str = "world.json";
pub const CENTERS_FILE: &str = "centers.gvds";
pub const RAW_FILE: &str = "raw.gvds";
pub const DISTILLED_FILE: &str = "distilled.gvds";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const COMPOSED_FILE: &str = "composed.gvds";
pub const COMPOSED_PROVENANCE_FILE: &str = "composed_provenance.json";
pub const EVAL_FILE: &str = "eval.json";
pub const EVAL_TRACE_FILE: &str = "eval_trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

struct CsvOut(csv::Writer<fs::File>);

fn csv_error(e: csv::Error) -> GvdError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GvdError::Io(io),
        other => GvdError::Precondition(format!("csv: {other:?}")),
    }
}

fn csv_writer(path: impl AsRef<Path>) -> Result<CsvOut> {
    csv::Writer::from_path(path).map(CsvOut).map_err(csv_error)
}

impl CsvOut {
    fn row<I, T>(&mut self, record: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.0.write_record(record).map_err(csv_error)
    }

    fn finish(mut self) -> Result<()> {
        self.0.flush()?;
        Ok(())
    }
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(GvdError::config(
            "out_dir",
            format!("{} not found; run `{hint}` first", path.display()),
        ))
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| GvdError::Precondition(format!("json encoding: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Loads the train/test sets written by `synth`.
pub fn load_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    let train = out_path(cfg, TRAIN_FILE);
    let test = out_path(cfg, TEST_FILE);
    require(&train, "synth")?;
    require(&test, "synth")?;
    Experiment::with_data(cfg, load_dataset(train)?, load_dataset(test)?)
}

#[derive(Debug, Serialize)]
struct ModeMoments {
    weight: f64,
    mean: Vec<f64>,
    cov_trace: f64,
}

#[derive(Debug, Serialize)]
struct WorldMoments<'a> {
    spec: &'a WorldSpec,
    class_means: Vec<Vec<f64>>,
    modes: Vec<Vec<ModeMoments>>,
}

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub train_records: usize,
    pub test_records: usize,
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<SynthSummary> {
    cfg.validate()?;
    ensure_out_dir(cfg)?;
    let exp = Experiment::synthesize(cfg)?;
    save_dataset(&exp.train, out_path(cfg, TRAIN_FILE))?;
    save_dataset(&exp.test, out_path(cfg, TEST_FILE))?;
    let world = build_world(&world_spec(cfg)?)?;
    let mut class_means = Vec::new();
    let mut modes = Vec::new();
    for c in 0..world.class_count() {
        class_means.push(world.class_mean(c)?.iter().copied().collect());
        modes.push(
            world
                .modes(c)?
                .iter()
                .map(|m| ModeMoments {
                    weight: m.weight,
                    mean: m.mean.iter().copied().collect(),
                    cov_trace: m.cov.trace(),
                })
                .collect(),
        );
    }
    let moments = WorldMoments {
        spec: &exp.spec,
        class_means,
        modes,
    };
    write_json(&moments, out_path(cfg, WORLD_FILE))?;
    Ok(SynthSummary {
        train_records: exp.train.len(),
        test_records: exp.test.len(),
    })
}

#[derive(Debug, Serialize)]
pub struct ClusterSummary {
    pub centers_per_class: usize,
    pub classes: usize,
}

pub fn cmd_cluster(cfg: &ExperimentConfig) -> Result<ClusterSummary> {
    let exp = load_experiment(cfg)?;
    let k = cfg.distill.instances_per_class();
    let ccfg = gvd_core::clustering::ClusteringConfig {
        k,
        seed: cfg.master_seed,
        ..cfg.distill.clustering.clone()
    };
    let centers = cluster_dataset(&exp.train, &ccfg).map_err(|e| e.with_context("cluster"))?;
    save_dataset(&centers.to_dataset()?, out_path(cfg, CENTERS_FILE))?;
    Ok(ClusterSummary {
        centers_per_class: k,
        classes: exp.train.class_count(),
    })
}

#[derive(Debug, Serialize)]
pub struct DistillSummary {
    pub method: Method,
    pub raw_instances: usize,
    pub distilled: usize,
}

pub fn cmd_distill(cfg: &ExperimentConfig) -> Result<DistillSummary> {
    let exp = load_experiment(cfg)?;
    let out = exp.distill(&cfg.distill)?;
    if let Some(c) = &out.centers {
        save_dataset(&c.to_dataset()?, out_path(cfg, CENTERS_FILE))?;
    }
    save_dataset(&out.raw, out_path(cfg, RAW_FILE))?;
    let n = out.distilled.len();
    let labeled = exp.label(out.distilled).map_err(|e| e.with_context("soft labels"))?;
    save_distilled(&labeled, out_path(cfg, DISTILLED_FILE))?;
    write_json(&out.provenance, out_path(cfg, PROVENANCE_FILE))?;
    write_traces_csv(&out.traces, out_path(cfg, TRACE_FILE))?;
    Ok(DistillSummary {
        method: cfg.distill.method,
        raw_instances: out.raw.len(),
        distilled: n,
    })
}

#[derive(Debug, Serialize)]
pub struct ComposeSummary {
    pub composed: usize,
}

/// Re-composes the raw instances written by `distill` with the configured plan.
pub fn cmd_compose(cfg: &ExperimentConfig) -> Result<ComposeSummary> {
    let exp = load_experiment(cfg)?;
    let raw_path = out_path(cfg, RAW_FILE);
    require(&raw_path, "distill")?;
    let raw = load_dataset(raw_path)?;
    let plan = CompositionPlan {
        seed: mix(cfg.master_seed, "compose", 0, 0),
        ..cfg.distill.composition.clone()
    };
    let (composed, prov) = compose_dataset(&raw, &plan).map_err(|e| e.with_context("compose"))?;
    let n = composed.len();
    save_distilled(&exp.label(composed)?, out_path(cfg, COMPOSED_FILE))?;
    write_json(&prov, out_path(cfg, COMPOSED_PROVENANCE_FILE))?;
    Ok(ComposeSummary { composed: n })
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let exp = load_experiment(cfg)?;
    let input = cfg
        .eval_input
        .clone()
        .unwrap_or_else(|| out_path(cfg, DISTILLED_FILE));
    require(&input, "distill")?;
    let data = load_distilled(&input)?;
    let report = exp.evaluate_students(&data)?;
    write_json(&report, out_path(cfg, EVAL_FILE))?;
    write_trace_csv(&report.trace, out_path(cfg, EVAL_TRACE_FILE))?;
    Ok(report)
}

pub fn cmd_metrics(cfg: &ExperimentConfig) -> Result<BTreeMap<String, MetricReport>> {
    let exp = load_experiment(cfg)?;
    let reports = method_metrics(&exp, &cfg.metrics.methods)?;
    write_json(&reports, out_path(cfg, METRICS_FILE))?;
    let mut w = csv_writer(out_path(cfg, METRICS_CSV_FILE))?;
    w.row(["method", "entropy", "coverage", "mpd", "representativeness"])?;
    for (m, r) in &reports {
        w.row([
            m.clone(),
            r.entropy.to_string(),
            r.coverage.to_string(),
            r.mpd.to_string(),
            r.accuracy["representativeness"].to_string(),
        ])?;
    }
    w.finish()?;
    Ok(reports)
}

/// Distills with each method and scores the result.
pub fn method_metrics(exp: &Experiment, methods: &[Method]) -> Result<BTreeMap<String, MetricReport>> {
    let mut out = BTreeMap::new();
    for &m in methods {
        let dcfg = DistillConfig {
            method: m,
            ..exp.cfg.distill.clone()
        };
        let d = exp.distill(&dcfg).map_err(|e| e.with_context(m.name()))?;
        let mut report = exp.metrics(&d.distilled)?;
        report
            .accuracy
            .insert("representativeness".into(), exp.representativeness(&d.distilled)?);
        out.insert(m.name().to_string(), report);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub t_stop: usize,
    pub pattern: Vec<usize>,
    pub strategy: gvd_core::compose::CompositionStrategy,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub outcome: std::result::Result<SweepScores, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepScores {
    pub representativeness: f64,
    pub eval: EvalReport,
}

/// Cartesian product of the grid axes; empty axes keep the base value.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<SweepCell> {
    let base = &cfg.distill;
    let g = &cfg.sweep;
    let or = |v: Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v };
    let lambdas = or(g.lambdas.clone(), base.guidance.lambda);
    let t_stops: Vec<usize> = if g.t_stop_fractions.is_empty() {
        vec![base.guidance.t_stop]
    } else {
        g.t_stop_fractions
            .iter()
            .map(|f| (f * cfg.schedule.steps as f64).round() as usize)
            .collect()
    };
    let patterns = if g.patterns.is_empty() {
        vec![base.composition.pattern.clone()]
    } else {
        g.patterns.clone()
    };
    let strategies = if g.strategies.is_empty() {
        vec![base.composition.strategy]
    } else {
        g.strategies.clone()
    };
    let mut cells = Vec::new();
    for &lambda in &lambdas {
        for &t_stop in &t_stops {
            for pattern in &patterns {
                for &strategy in &strategies {
                    let cell = SweepCell {
                        lambda,
                        t_stop,
                        pattern: pattern.clone(),
                        strategy,
                    };
                    if !cells.contains(&cell) {
                        cells.push(cell);
                    }
                }
            }
        }
    }
    cells
}

pub fn run_cell(exp: &Experiment, cell: &SweepCell) -> Result<SweepScores> {
    let mut dcfg = exp.cfg.distill.clone();
    dcfg.guidance.lambda = cell.lambda;
    dcfg.guidance.t_stop = cell.t_stop;
    dcfg.composition.pattern = cell.pattern.clone();
    dcfg.composition.strategy = cell.strategy;
    let d = exp.distill(&dcfg)?;
    let representativeness = exp.representativeness(&d.distilled)?;
    let eval = exp.evaluate_students(&exp.label(d.distilled)?)?;
    Ok(SweepScores {
        representativeness,
        eval,
    })
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let exp = load_experiment(cfg)?;
    let rows: Vec<SweepRow> = sweep_cells(cfg)
        .into_iter()
        .map(|cell| {
            let outcome = run_cell(&exp, &cell).map_err(|e| {
                log::warn!("sweep cell {cell:?} failed: {e}");
                e.to_string()
            });
            SweepRow { cell, outcome }
        })
        .collect();
    let mut w = csv_writer(out_path(cfg, SWEEP_FILE))?;
    w.row([
        "lambda",
        "t_stop",
        "pattern",
        "strategy",
        "status",
        "representativeness",
        "eval_mean",
        "eval_std",
    ])?;
    for r in &rows {
        let pattern = r
            .cell
            .pattern
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("-");
        let strategy = format!("{:?}", r.cell.strategy).to_lowercase();
        let mut rec = vec![r.cell.lambda.to_string(), r.cell.t_stop.to_string(), pattern, strategy];
        match &r.outcome {
            Ok(s) => rec.extend([
                "ok".to_string(),
                s.representativeness.to_string(),
                s.eval.mean.to_string(),
                s.eval.std.to_string(),
            ]),
            Err(e) => rec.extend([format!("failed: {e}"), String::new(), String::new(), String::new()]),
        }
        w.row(&rec)?;
    }
    w.finish()?;
    Ok(rows)
}
