use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use univmatch_cli::commands::{cmd_eval, cmd_gen, cmd_sweep, cmd_train, parse_values, with_suffix, SweepAxis};
use univmatch_cli::config::{parse_centroid_mode, EvalMode, ExperimentConfig};
use univmatch_cli::CliError;

#[derive(Parser)]
#[command(name = "univmatch", version, about = "Partial multi-graph matching through learned universe embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, dotted keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset; writes <out>, <out>.best and <out>.log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        /// Also score the pairwise baseline.
        #[arg(long)]
        baseline: bool,
        /// learned | mean | occurrence
        #[arg(long)]
        centroid_mode: Option<String>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate, train and evaluate for each value of one setting.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Comma-separated values; the axis defaults when omitted.
        #[arg(long)]
        values: Option<String>,
        /// CSV destination; stdout when omitted. Point logs go to <out>.log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout()),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common, out } => {
            let d = cmd_gen(&load_config(&common)?, &out)?;
            eprintln!("wrote {} train + {} test graphs to {}", d.train.len(), d.test.len(), out.display());
        }
        Command::Train { common, dataset, out } => {
            cmd_train(&dataset, &load_config(&common)?, &out, &mut io::stdout())?;
        }
        Command::Eval {
            common,
            dataset,
            checkpoint,
            mode,
            baseline,
            centroid_mode,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = mode {
                cfg.eval.mode = m.parse::<EvalMode>()?;
            }
            if let Some(c) = centroid_mode {
                cfg.eval.centroid_mode = parse_centroid_mode(&c)?;
            }
            cfg.eval.baseline |= baseline;
            let mut w = output(out.as_deref())?;
            cmd_eval(&dataset, &checkpoint, &cfg, &mut w)?;
        }
        Command::Sweep {
            common,
            axis,
            values,
            out,
        } => {
            let cfg = load_config(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let values = match values {
                Some(v) => parse_values(&v)?,
                None => axis.default_values(),
            };
            let mut w = output(out.as_deref())?;
            let mut log = output(out.as_deref().map(|p| with_suffix(p, ".log")).as_deref())?;
            if out.is_none() {
                log = Box::new(io::stderr());
            }
            cmd_sweep(axis, &values, &cfg, &mut w, &mut log)?;
            w.flush()?;
            log.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
