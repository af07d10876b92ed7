//! `arteria`: synthesize coronary digital twins, compute reference 1D
//! hemodynamics, pretrain the graph encoder on physics losses, fine-tune a
//! classifier, and evaluate it — each stage a subcommand, all driven by one
//! TOML config with flag overrides.
//!
//! Exit codes: 0 success, 1 validation/runtime failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "arteria", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread cap for per-twin parallel work.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize twins by recombining donor anatomy.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Donor twin files or directories.
        #[arg(long)]
        donors: Vec<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        target_n: Option<usize>,
        #[arg(long)]
        target_k: Option<usize>,
    },
    /// Export vascular graphs for twins.
    Graph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        twins: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Reference 1D hemodynamics profiles (CSV per twin plus a summary).
    Hemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        twins: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Fixed flow in cm³/s (otherwise drawn per twin).
        #[arg(long)]
        flow: Option<f64>,
        #[arg(long)]
        inlet_pressure_mmhg: Option<f64>,
    },
    /// Physics-guided pretraining of the encoder.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        twin_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n_centerline: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Classifier fine-tuning on a frozen encoder.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Classification metrics and curves from a predictions file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check twin files against every structural invariant.
    Validate {
        /// Twin files or directories.
        paths: Vec<PathBuf>,
    },
    /// Export a twin's boundary point cloud as ASCII PLY.
    ExportPly {
        twin: PathBuf,
        out: PathBuf,
        /// Scalar channel: area or radius.
        #[arg(long, default_value = "area")]
        channel: String,
    },
}

fn load_run_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if cfg.jobs > 0 {
        // ignore failure when a pool was already installed (tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global();
    }
    Ok(cfg)
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            common,
            donors,
            count,
            out_dir,
            target_n,
            target_k,
        } => {
            let mut run = load_run_config(&common)?;
            let mut cfg = run.synth.take().unwrap_or_default();
            if !donors.is_empty() {
                cfg.donors = donors;
            }
            if let Some(v) = count {
                cfg.count = v;
            }
            if let Some(v) = out_dir {
                cfg.out_dir = v;
            }
            if let Some(v) = target_n {
                cfg.target_n = v;
            }
            if let Some(v) = target_k {
                cfg.target_k = v;
            }
            run.synth = Some(cfg.clone());
            commands::cmd_synth(&run, &cfg)
        }
        Command::Graph {
            common,
            twins,
            out_dir,
        } => {
            let mut run = load_run_config(&common)?;
            let mut cfg = run.graph.take().unwrap_or_default();
            if !twins.is_empty() {
                cfg.twins = twins;
            }
            if let Some(v) = out_dir {
                cfg.out_dir = v;
            }
            run.graph = Some(cfg.clone());
            commands::cmd_graph(&run, &cfg)
        }
        Command::Hemo {
            common,
            twins,
            out_dir,
            flow,
            inlet_pressure_mmhg,
        } => {
            let mut run = load_run_config(&common)?;
            let mut cfg = run.hemo.take().unwrap_or_default();
            if !twins.is_empty() {
                cfg.twins = twins;
            }
            if let Some(v) = out_dir {
                cfg.out_dir = v;
            }
            if flow.is_some() {
                cfg.flow = flow;
            }
            if let Some(v) = inlet_pressure_mmhg {
                cfg.inlet_pressure_mmhg = v;
            }
            run.hemo = Some(cfg.clone());
            commands::cmd_hemo(&run, &cfg)
        }
        Command::Pretrain {
            common,
            twin_dir,
            out_dir,
            epochs,
            d,
            n_centerline,
            learning_rate,
        } => {
            let mut run = load_run_config(&common)?;
            let mut cfg = run.pretrain.take().unwrap_or_default();
            if let Some(v) = twin_dir {
                cfg.twin_dir = v;
            }
            if let Some(v) = out_dir {
                cfg.out_dir = v;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = d {
                cfg.d = v;
            }
            if let Some(v) = n_centerline {
                cfg.n_centerline = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            run.pretrain = Some(cfg.clone());
            commands::cmd_pretrain(&run, &cfg)
        }
        Command::Finetune {
            common,
            checkpoint,
            labels,
            out_dir,
            epochs,
        } => {
            let mut run = load_run_config(&common)?;
            let mut cfg = run.finetune.take().unwrap_or_default();
            if let Some(v) = checkpoint {
                cfg.checkpoint = v;
            }
            if let Some(v) = labels {
                cfg.labels = v;
            }
            if let Some(v) = out_dir {
                cfg.out_dir = v;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            run.finetune = Some(cfg.clone());
            commands::cmd_finetune(&run, &cfg)
        }
        Command::Eval {
            common,
            predictions,
            out_dir,
        } => {
            let mut run = load_run_config(&common)?;
            let mut cfg = run.eval.take().unwrap_or_default();
            if let Some(v) = predictions {
                cfg.predictions = v;
            }
            if let Some(v) = out_dir {
                cfg.out_dir = v;
            }
            run.eval = Some(cfg.clone());
            commands::cmd_eval(&run, &cfg)
        }
        Command::Validate { paths } => commands::cmd_validate(&paths),
        Command::ExportPly { twin, out, channel } => {
            commands::cmd_export_ply(&twin, &out, &channel)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
