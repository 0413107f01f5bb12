//! Command-line entry points. Exit codes: 0 success, 1 user or config
//! error, 2 runtime failure.

mod ablate;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use ablate::{
    flatten, render_table, run_ablation, summarize, AblationPlan, AblationSummary, RunRecord, Stat,
    SummaryRow, Variant, DEFAULT_SEEDS,
};
pub use commands::{
    evaluate_cmd, make_run_dir, predict_cmd, synth_cmd, train, EvaluateArgs, PredictArgs,
    TrainOutcome,
};
pub use config::{parse_overrides, parse_value, set_path, DataConfig, RunConfig};

use crate::datamodel::SynthConfig;
use crate::network::DEFAULT_THRESHOLD;
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "scd",
    version,
    about = "Semantic change detection on bi-temporal image pairs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Base directory for the timestamped run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; extra `--section.key value` pairs override the config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sets both the initialisation and the batch-order seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "OVERRIDES"
        )]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on a dataset.
    Evaluate {
        #[arg(long, required_unless_present = "bypass_model")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        root: PathBuf,
        /// File of scene ids; all scenes when omitted.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        palette: Option<PathBuf>,
        /// Score the ground truth against itself.
        #[arg(long)]
        bypass_model: bool,
        #[arg(long, default_value_t = 6)]
        batch_size: usize,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Seed recorded in the report.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Write semantic and change maps for one image pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        #[arg(long)]
        palette: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic dataset with a train/test split.
    SynthGen {
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
        /// TOML file of generator settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_samples: Option<usize>,
        /// Height and width.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        change_rate: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Run every variant of an ablation plan under every seed.
    Ablate {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn synth_config(
    path: Option<&PathBuf>,
    n_samples: Option<usize>,
    size: Option<usize>,
    num_classes: Option<usize>,
    change_rate: Option<f64>,
) -> Result<SynthConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let de = toml::Deserializer::parse(&text).map_err(|e| Error::Config {
                key: p.display().to_string(),
                message: e.message().to_string(),
            })?;
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                key: e.path().to_string(),
                message: e.into_inner().message().to_string(),
            })?
        }
        None => SynthConfig::default(),
    };
    if let Some(n) = n_samples {
        cfg.n_samples = n;
    }
    if let Some(s) = size {
        cfg.height = s;
        cfg.width = s;
    }
    if let Some(k) = num_classes {
        cfg.num_classes = k;
    }
    if let Some(r) = change_rate {
        cfg.change_rate = r;
    }
    Ok(cfg)
}

/// Executes a parsed command. Returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train {
            config,
            seed,
            common,
            overrides,
        } => {
            let ov = parse_overrides(&overrides)?;
            let mut cfg = RunConfig::load(config.as_deref(), &ov)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            let dir = make_run_dir(&common.out, "train")?;
            let outcome = train(&cfg, &dir)?;
            let r = &outcome.report;
            println!("{}", dir.display());
            eprintln!(
                "oa {:.4}  fscd {:.4}  miou {:.4}  sek {:.4}",
                r.oa, r.fscd, r.miou, r.sek
            );
            Ok(0)
        }
        Command::Evaluate {
            checkpoint,
            root,
            split,
            palette,
            bypass_model,
            batch_size,
            threshold,
            seed,
            common,
        } => {
            let args = EvaluateArgs {
                checkpoint,
                root,
                split,
                palette,
                bypass_model,
                batch_size,
                threshold,
                seeds: seed.into_iter().collect(),
            };
            let dir = make_run_dir(&common.out, "evaluate")?;
            let r = evaluate_cmd(&args, &dir)?;
            println!("{}", dir.display());
            eprintln!(
                "oa {:.4}  fscd {:.4}  miou {:.4}  sek {:.4}",
                r.oa, r.fscd, r.miou, r.sek
            );
            Ok(0)
        }
        Command::Predict {
            checkpoint,
            t1,
            t2,
            palette,
            threshold,
            common,
        } => {
            let args = PredictArgs {
                checkpoint,
                t1,
                t2,
                palette,
                threshold,
            };
            let dir = make_run_dir(&common.out, "predict")?;
            predict_cmd(&args, &dir)?;
            println!("{}", dir.display());
            Ok(0)
        }
        Command::SynthGen {
            out,
            config,
            seed,
            n_samples,
            size,
            num_classes,
            change_rate,
            test_fraction,
        } => {
            let cfg = synth_config(config.as_ref(), n_samples, size, num_classes, change_rate)?;
            let split = synth_cmd(&cfg, seed, test_fraction, &out)?;
            println!("{}", out.display());
            eprintln!(
                "{} train, {} test scenes",
                split.train_ids.len(),
                split.test_ids.len()
            );
            Ok(0)
        }
        Command::Ablate { plan, common } => {
            let plan = AblationPlan::load(&plan)?;
            let dir = make_run_dir(&common.out, "ablate")?;
            let summary = run_ablation(&plan, &dir)?;
            println!("{}", dir.display());
            eprint!("{}", render_table(&summary));
            for r in summary.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "run {} seed {} failed: {}",
                    r.variant,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
            Ok(if summary.any_failed() { 2 } else { 0 })
        }
    }
}

/// Parses `args` (program name first) and runs the command, printing errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}
