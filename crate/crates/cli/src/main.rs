use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use cascadet_cli::assertion;
use cascadet_cli::config::ExperimentConfig;
use cascadet_cli::pipeline::{self, Axis, Stage};

/// Two-stage cascade detection sandbox: dataset generation, stagewise
/// training, evaluation and ablation grids.
#[derive(Parser)]
#[command(name = "cascadet", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Rpn,
    CascadeProposer,
    Frcn1,
    Frcn2,
    All,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Rpn => Stage::Rpn,
            StageArg::CascadeProposer => Stage::CascadeProposer,
            StageArg::Frcn1 => Stage::Frcn1,
            StageArg::Frcn2 => Stage::Frcn2,
            StageArg::All => Stage::All,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichArg {
    Proposals,
    Detections,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    SamplingThresholds,
    FinetuneDepth,
    ClassifierObjective,
    Rescore,
    Fusion,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Axis {
        match a {
            AxisArg::SamplingThresholds => Axis::SamplingThresholds,
            AxisArg::FinetuneDepth => Axis::FinetuneDepth,
            AxisArg::ClassifierObjective => Axis::ClassifierObjective,
            AxisArg::Rescore => Axis::Rescore,
            AxisArg::Fusion => Axis::Fusion,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the train/test splits described by the config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Master seed override: rewrites dataset and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one stage (or `all` consecutively).
    Train {
        stage: StageArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate proposals (recall tables) or detections (AP + confusion).
    Eval {
        which: WhichArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also evaluate the fused proposal variant (proposals mode only).
        #[arg(long)]
        fused: bool,
        /// Trend assertions such as "cascade.recall@0.7/50 > rpn.recall@0.7/50";
        /// a failing assertion sets a nonzero exit code.
        #[arg(long = "assert")]
        asserts: Vec<String>,
    },
    /// Run one ablation grid with shared seeds.
    Ablate {
        axis: AxisArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.apply_master_seed(s);
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn init_workers() {
    if let Ok(v) = std::env::var("CASCADET_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // affects speed only; per-image results are order-preserved
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run() -> Result<bool> {
    init_workers();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::GenData { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            pipeline::cmd_gen_data(&cfg)?;
            Ok(true)
        }
        Cmd::Train { stage, config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let stage = Stage::from(stage);
            pipeline::check_dependencies(&cfg, stage)?;
            pipeline::cmd_train(&cfg, stage)?;
            Ok(true)
        }
        Cmd::Eval { which, config, seed, out, fused, asserts } => {
            let cfg = load_config(&config, seed, out)?;
            let reports = match which {
                WhichArg::Proposals => pipeline::cmd_eval_proposals(&cfg, fused)?,
                WhichArg::Detections => pipeline::cmd_eval_detections(&cfg)?,
            };
            for (variant, report) in &reports {
                if let Some(r) = &report.recall {
                    println!("{variant}: recall@{}/{} = {:.4}", r.thresholds[0], r.budgets[r.budgets.len() - 1],
                        r.overall[r.budgets.len() - 1][0]);
                }
                if let Some(d) = &report.detection {
                    println!("{variant}: mAP = {:.4}", d.map);
                }
            }
            let mut all_ok = true;
            for expr in &asserts {
                let ok = assertion::evaluate(expr, &reports)?;
                println!("assert [{expr}] -> {}", if ok { "PASS" } else { "FAIL" });
                all_ok &= ok;
            }
            Ok(all_ok)
        }
        Cmd::Ablate { axis, config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let table = pipeline::cmd_ablate(&cfg, Axis::from(axis))?;
            print!("{table}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
