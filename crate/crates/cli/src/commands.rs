//! The `gen`, `train`, `eval` and `sweep` subcommands.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use univmatch::diff::{load_checkpoint, save_checkpoint};
use univmatch::synth::{generate_dataset, read_dataset, write_dataset, Dataset};
use univmatch::train::EpochLog;

use crate::config::{EvalMode, ExperimentConfig};
use crate::experiment::{evaluate, train_model, EvalReport, Method, TrainOutcome};
use crate::CliError;

pub const SWEEP_HEADER: &str = "axis,value,f1,precision,recall,violation_rate,wall_time_ms";
pub const EVAL_HEADER: &str = "method,mode,f1,precision,recall,macro_f1,accuracy,violation_rate,pairs,wall_time_ms";

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(read_dataset(BufReader::new(f))?)
}

pub fn save_dataset(path: &Path, d: &Dataset) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_dataset(&mut w, d)?;
    Ok(())
}

/// Generates the dataset described by `cfg` and writes it to `out`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset, CliError> {
    cfg.validate()?;
    let d = generate_dataset(&cfg.synth)?;
    save_dataset(out, &d)?;
    Ok(d)
}

/// Sibling path with `suffix` appended to the file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn epoch_line(log: &EpochLog) -> String {
    format!(
        "{{\"event\":\"epoch\",\"epoch\":{},\"loss\":{},\"train_f1\":{},\"steps\":{}}}",
        log.epoch, log.loss, log.train_f1, log.steps
    )
}

fn summary_line(t: &TrainOutcome) -> String {
    format!(
        "{{\"event\":\"done\",\"epochs\":{},\"steps\":{},\"best_epoch\":{},\"best_by\":\"train_loss\",\"final_train_f1\":{}}}",
        t.logs.len(),
        t.steps,
        t.best_epoch,
        t.final_train_f1
    )
}

/// Trains on a dataset file. Writes the final checkpoint to `out`, the
/// lowest-training-loss checkpoint to `<out>.best` and the log to
/// `<out>.log`; log lines are also echoed to `echo`.
pub fn cmd_train(
    dataset: &Path,
    cfg: &ExperimentConfig,
    out: &Path,
    echo: &mut dyn Write,
) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let data = load_dataset(dataset)?;
    let log_path = with_suffix(out, ".log");
    let mut log = create(&log_path)?;
    let mut io_err = None;
    let outcome = train_model(cfg, &data, |l, _, _| {
        let line = epoch_line(l);
        if let Err(e) = writeln!(log, "{line}").and_then(|_| writeln!(echo, "{line}")) {
            io_err = Some(e);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let line = summary_line(&outcome);
    writeln!(log, "{line}")?;
    writeln!(echo, "{line}")?;
    log.flush()?;
    save_checkpoint(&outcome.final_store, out)?;
    save_checkpoint(&outcome.best_store, &with_suffix(out, ".best"))?;
    Ok(outcome)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    writeln!(s, "{EVAL_HEADER}").unwrap();
    for r in reports {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.mode,
            opt(r.prf.map(|p| p.f1)),
            opt(r.prf.map(|p| p.precision)),
            opt(r.prf.map(|p| p.recall)),
            opt(r.macro_f1),
            opt(r.accuracy),
            opt(r.violation_rate),
            r.pairs,
            r.wall_time_ms
        )
        .unwrap();
    }
    s
}

/// Evaluates a checkpoint on the test split of a dataset file and writes
/// the CSV to `out`.
pub fn cmd_eval(
    dataset: &Path,
    checkpoint: &Path,
    cfg: &ExperimentConfig,
    out: &mut dyn Write,
) -> Result<Vec<EvalReport>, CliError> {
    cfg.validate()?;
    let data = load_dataset(dataset)?;
    let store = load_checkpoint(checkpoint)?;
    let reports = evaluate(cfg, &data, &store)?;
    out.write_all(eval_csv(&reports).as_bytes())?;
    out.flush()?;
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Visibility,
    Size,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Visibility => "visibility",
            Self::Size => "size",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::Visibility => vec![0.2, 0.4, 0.6, 0.8, 1.0],
            Self::Size => vec![25.0, 50.0, 100.0, 200.0, 500.0, 1000.0],
        }
    }

    /// `cfg` with the swept setting replaced by `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, CliError> {
        let mut c = cfg.clone();
        match self {
            Self::Visibility => c.synth.p_vis = value,
            Self::Size => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(CliError::Validation(format!("size {value} is not a whole number")));
                }
                c.synth.n_univ = value as usize;
            }
        }
        c.sync();
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visibility" => Ok(Self::Visibility),
            "size" => Ok(Self::Size),
            other => Err(CliError::Validation(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: Option<f64>,
    pub violation_rate: f64,
    /// Test-set inference time (encoding plus assignment).
    pub wall_time_ms: f64,
    pub epoch_of_best: usize,
    pub steps: usize,
}

impl ResultRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.axis.name(),
            self.value,
            self.f1,
            self.precision,
            self.recall,
            self.violation_rate,
            self.wall_time_ms
        )
    }
}

/// One sweep point: regenerate, train, evaluate the lowest-loss parameters
/// in union mode.
pub fn sweep_point(axis: SweepAxis, value: f64, cfg: &ExperimentConfig) -> Result<(ResultRow, TrainOutcome), CliError> {
    let mut c = axis.apply(cfg, value)?;
    c.eval.mode = EvalMode::Union;
    c.eval.baseline = false;
    let data = generate_dataset(&c.synth)?;
    let outcome = train_model(&c, &data, |_, _, _| ControlFlow::Continue(()))?;
    let reports = evaluate(&c, &data, &outcome.best_store)?;
    let url = reports
        .iter()
        .find(|r| r.method == Method::Url)
        .expect("union evaluation reports the universe matcher");
    let prf = url.prf.expect("union mode has F1");
    Ok((
        ResultRow {
            axis,
            value,
            f1: prf.f1,
            precision: prf.precision,
            recall: prf.recall,
            accuracy: url.accuracy,
            violation_rate: url.violation_rate.unwrap_or(0.0),
            wall_time_ms: url.wall_time_ms,
            epoch_of_best: outcome.best_epoch,
            steps: outcome.steps,
        },
        outcome,
    ))
}

/// Runs the sweep points in order, writing the CSV to `out` and one JSON
/// line per point (training budget and best epoch) to `log`.
pub fn cmd_sweep(
    axis: SweepAxis,
    values: &[f64],
    cfg: &ExperimentConfig,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<Vec<ResultRow>, CliError> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(CliError::Validation("no sweep values".into()));
    }
    for &v in values {
        axis.apply(cfg, v)?;
    }
    writeln!(out, "{SWEEP_HEADER}")?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let (row, outcome) = sweep_point(axis, v, cfg)?;
        writeln!(out, "{}", row.csv())?;
        out.flush()?;
        writeln!(
            log,
            "{{\"event\":\"sweep_point\",\"axis\":\"{}\",\"value\":{},\"epochs\":{},\"steps\":{},\"max_steps\":{},\"epoch_of_best\":{},\"final_train_f1\":{}}}",
            axis.name(),
            v,
            outcome.logs.len(),
            outcome.steps,
            cfg.train.max_steps.map(|s| s.to_string()).unwrap_or_else(|| "null".into()),
            outcome.best_epoch,
            outcome.final_train_f1
        )?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_values(list: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("bad sweep value {s:?}")))
        })
        .collect()
}
