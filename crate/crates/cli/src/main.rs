use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gvd_cli::commands;
use gvd_cli::ExperimentConfig;
use gvd_core::{GvdError, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gvd", version, about = "Prototype-guided video dataset distillation on a synthetic latent world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train/test sets and write the world description.
    Synth(Common),
    /// Cluster each class of the train set into prototypes.
    Cluster(Common),
    /// Cluster, sample and compose a distilled set.
    Distill(Common),
    /// Re-compose the raw instances of a previous `distill`.
    Compose(Common),
    /// Train students on the distilled set and report test accuracy.
    Eval(Common),
    /// Diversity metrics for several distillation methods.
    Metrics(Common),
    /// Hyperparameter grid over guidance and composition settings.
    Sweep(Common),
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)
        .map_err(|e| GvdError::Precondition(format!("json encoding: {e}")))?;
    println!("{s}");
    Ok(())
}

fn run(cmd: &Command) -> Result<()> {
    let common = match cmd {
        Command::Synth(c)
        | Command::Cluster(c)
        | Command::Distill(c)
        | Command::Compose(c)
        | Command::Eval(c)
        | Command::Metrics(c)
        | Command::Sweep(c) => c,
    };
    let cfg = common.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers)
        .build()
        .map_err(|e| GvdError::config("workers", e.to_string()))?;
    pool.install(|| match cmd {
        Command::Synth(_) => print(&commands::cmd_synth(&cfg)?),
        Command::Cluster(_) => print(&commands::cmd_cluster(&cfg)?),
        Command::Distill(_) => print(&commands::cmd_distill(&cfg)?),
        Command::Compose(_) => print(&commands::cmd_compose(&cfg)?),
        Command::Eval(_) => print(&commands::cmd_eval(&cfg)?),
        Command::Metrics(_) => print(&commands::cmd_metrics(&cfg)?),
        Command::Sweep(_) => {
            let rows = commands::cmd_sweep(&cfg)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} cells, {failed} failed", rows.len());
            Ok(())
        }
    })
}

fn exit_code(e: &GvdError) -> u8 {
    match e {
        GvdError::Config { .. } | GvdError::Dimension { .. } | GvdError::Format { .. } => 2,
        GvdError::Numerical { .. } | GvdError::Training { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(exit_code(&e))
        }
    }
}
