//! `spikedecode`: synthetic sessions, pre-processing, training, search,
//! evaluation, streaming replay and training-size sweeps.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spikedecode::pipeline::{Partition, SplitFractions, Task};
use spikedecode::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "spikedecode", version, about = "Grasp phase and object decoding from spike trains")]
struct Cli {
    /// TOML run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for generation, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Bin width in seconds.
    #[arg(long, global = true)]
    bin_width: Option<f64>,

    /// Window length in bins.
    #[arg(long, global = true)]
    window: Option<usize>,

    /// Train, validation and test fractions, e.g. `0.64,0.16,0.2`.
    #[arg(long, global = true)]
    fractions: Option<SplitFractions>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "SPIKEDECODE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic session.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Bin, split and window a session into a dataset bundle.
    Preprocess {
        session: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train one model with the configured hyper-parameters.
    Train {
        data: PathBuf,
        #[arg(long, default_value = "classification")]
        task: Task,
        /// Re-split windows ignoring trial membership (inflates test scores).
        #[arg(long)]
        leaky_split: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Random search over the configured space, then retrain the winner.
    Tune {
        data: PathBuf,
        #[arg(long, default_value = "classification")]
        task: Task,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a saved model on one partition of a bundle.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Partition,
        #[arg(long, default_value = "classification")]
        task: Task,
        /// Defaults to `eval-<split>` next to the model.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Replay the trials of one partition bin by bin through the models.
    Stream {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        phase_model: PathBuf,
        #[arg(long)]
        class_model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Partition,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Retrain the classifier on shrinking train+val shares.
    Sweep {
        session: PathBuf,
        /// Train+val shares, e.g. `0.8,0.5,0.2`.
        #[arg(long, value_delimiter = ',')]
        train_val: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(w) = cli.bin_width {
        cfg.pipeline.bin_width = w;
    }
    if let Some(w) = cli.window {
        cfg.pipeline.window = w;
    }
    if let Some(f) = &cli.fractions {
        cfg.pipeline.fractions = f.clone();
    }
    match &cli.command {
        Command::Tune { budget: Some(b), .. } => cfg.search_budget = *b,
        Command::Sweep { train_val, seeds, .. } => {
            if let Some(tv) = train_val {
                cfg.sweep.train_val = tv.clone();
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Synth { out } => commands::cmd_synth(&cfg, out),
        Command::Preprocess { session, out } => commands::cmd_preprocess(&cfg, session, out),
        Command::Train {
            data,
            task,
            leaky_split,
            out,
        } => commands::cmd_train(&cfg, data, *task, *leaky_split, out),
        Command::Tune { data, task, out, .. } => commands::cmd_tune(&cfg, data, *task, cfg.search_budget, out),
        Command::Eval {
            model,
            data,
            split,
            task,
            out,
        } => {
            let out = out.clone().unwrap_or_else(|| {
                model
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join(format!("eval-{split}"))
            });
            commands::cmd_eval(&cfg, model, data, *split, *task, &out)
        }
        Command::Stream {
            session,
            data,
            phase_model,
            class_model,
            split,
            out,
        } => commands::cmd_stream(&cfg, session, data, phase_model, class_model.as_deref(), *split, out),
        Command::Sweep { session, out, .. } => commands::cmd_sweep(&cfg, session, out),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
