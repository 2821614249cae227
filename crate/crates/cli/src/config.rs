//! Experiment configuration.
//!
//! Files are TOML; every setting is addressed by a dotted key, either inline
//! (`train.lr = 5e-3`) or inside a `[train]` table. Unknown keys are
//! rejected.

use std::fmt;
use std::str::FromStr;

use univmatch::diff::AdamConfig;
use univmatch::model::{CentroidMode, EncoderConfig};
use univmatch::synth::SynthConfig;
use univmatch::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Union,
    Intersection,
}

impl FromStr for EvalMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "union" => Ok(Self::Union),
            "intersection" => Ok(Self::Intersection),
            other => Err(CliError::Validation(format!("unknown eval mode {other:?}"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Union => "union",
            Self::Intersection => "intersection",
        })
    }
}

pub fn parse_centroid_mode(s: &str) -> Result<Option<CentroidMode>, CliError> {
    match s {
        "learned" => Ok(None),
        "mean" => Ok(Some(CentroidMode::Mean)),
        "occurrence" => Ok(Some(CentroidMode::Occurrence)),
        other => Err(CliError::Validation(format!("unknown centroid mode {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Replace the learned universe by training-set centroids.
    pub centroid_mode: Option<CentroidMode>,
    pub baseline: bool,
    /// Triples sampled for the violation rate.
    pub n_triples: usize,
    /// Quantile of training matched-pair similarities used as the baseline
    /// threshold.
    pub tau_quantile: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Union,
            centroid_mode: None,
            baseline: false,
            n_triples: 1000,
            tau_quantile: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    /// `input_dim` and `universe_size` follow `synth.feat_dim` and
    /// `synth.n_univ`.
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 123,
            synth: SynthConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        c.sync();
        c
    }
}

fn bad(key: &str, what: &str) -> CliError {
    CliError::Validation(format!("{key}: expected {what}"))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64, CliError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number")),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize, CliError> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(bad(key, "a non-negative integer")),
    }
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str, CliError> {
    v.as_str().ok_or_else(|| bad(key, "a string"))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl ExperimentConfig {
    /// Propagates shared settings into the component configs.
    pub fn sync(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.encoder.input_dim = self.synth.feat_dim;
        self.encoder.universe_size = self.synth.n_univ;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync();
        self
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut c = Self::default();
        for (key, v) in &entries {
            c.set(key, v)?;
        }
        c.sync();
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> Result<(), CliError> {
        let s = &mut self.synth;
        let e = &mut self.encoder;
        let t = &mut self.train;
        let a: &mut AdamConfig = &mut t.adam;
        match key {
            "seed" => match v {
                toml::Value::Integer(i) if *i >= 0 => self.seed = *i as u64,
                _ => return Err(bad(key, "a non-negative integer")),
            },
            "synth.n_univ" => s.n_univ = as_usize(key, v)?,
            "synth.p_vis" => s.p_vis = as_f64(key, v)?,
            "synth.sigma_feat" => s.sigma_feat = as_f64(key, v)?,
            "synth.sigma_coo" => s.sigma_coo = as_f64(key, v)?,
            "synth.feat_dim" => s.feat_dim = as_usize(key, v)?,
            "synth.canvas" => s.canvas = as_f64(key, v)?,
            "synth.n_train" => s.n_train = as_usize(key, v)?,
            "synth.n_test" => s.n_test = as_usize(key, v)?,
            "synth.rotation_deg" => s.rotation_deg = as_f64(key, v)?,
            "synth.scale_min" => s.scale_min = as_f64(key, v)?,
            "synth.scale_max" => s.scale_max = as_f64(key, v)?,
            "synth.translation" => s.translation = as_f64(key, v)?,
            "model.hidden_dim" => e.hidden_dim = as_usize(key, v)?,
            "model.spline_layers_2d" => e.spline_layers_2d = as_usize(key, v)?,
            "model.spline_layers_3d" => e.spline_layers_3d = as_usize(key, v)?,
            "model.knots" => e.knots = as_usize(key, v)?,
            "model.mlp_z_hidden" => e.mlp_z_hidden = as_usize(key, v)?,
            "model.dropout" => e.dropout_rate = as_f64(key, v)?,
            "model.label_smoothing" => e.label_smoothing = as_f64(key, v)?,
            "train.lr" => a.lr = as_f64(key, v)?,
            "train.weight_decay" => a.weight_decay = as_f64(key, v)?,
            "train.beta1" => a.beta1 = as_f64(key, v)?,
            "train.beta2" => a.beta2 = as_f64(key, v)?,
            "train.epochs" => t.epochs = as_usize(key, v)?,
            "train.batch_size" => t.batch_size = as_usize(key, v)?,
            "train.max_steps" => t.max_steps = Some(as_usize(key, v)?),
            "eval.mode" => self.eval.mode = as_str(key, v)?.parse()?,
            "eval.centroid_mode" => self.eval.centroid_mode = parse_centroid_mode(as_str(key, v)?)?,
            "eval.baseline" => self.eval.baseline = v.as_bool().ok_or_else(|| bad(key, "a boolean"))?,
            "eval.n_triples" => self.eval.n_triples = as_usize(key, v)?,
            "eval.tau_quantile" => self.eval.tau_quantile = as_f64(key, v)?,
            other => return Err(CliError::Validation(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.encoder.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        let a = &self.train.adam;
        if !(a.lr.is_finite() && a.lr > 0.0) {
            return Err(CliError::Validation("train.lr must be positive".into()));
        }
        if !(a.weight_decay.is_finite() && a.weight_decay >= 0.0) {
            return Err(CliError::Validation("train.weight_decay must be non-negative".into()));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(CliError::Validation("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if self.train.batch_size == 0 {
            return Err(CliError::Validation("train.batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.tau_quantile) {
            return Err(CliError::Validation("eval.tau_quantile must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
