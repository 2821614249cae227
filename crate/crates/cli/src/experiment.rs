//! Training and evaluation on in-memory datasets.

use std::ops::ControlFlow;
use std::time::Instant;

use ndarray::Array2;
use univmatch::assignment::{solve_lap_auction, AuctionConfig, ScoreMatrix};
use univmatch::diff::ParamStore;
use univmatch::geometry::Graph;
use univmatch::matching::{pairwise_from_universe, MatchingCollection, PartialPermutation, UniverseMatching};
use univmatch::model::{centroid_universe, UrlModel, UNIVERSE};
use univmatch::synth::{
    accuracy, baseline_collection, collection_f1, intersection_filter, label_matching, matched_similarities,
    pairwise_baseline_match, quantile, violation_rate, Dataset, Prf, SynthConfig,
};
use univmatch::train::{EpochLog, Trainer};

use crate::config::{EvalMode, ExperimentConfig};
use crate::CliError;

/// Encoder sized for a dataset's feature dimension and universe.
pub fn model_for(cfg: &ExperimentConfig, data: &SynthConfig) -> Result<UrlModel, CliError> {
    let mut encoder = cfg.encoder.clone();
    encoder.input_dim = data.feat_dim;
    encoder.universe_size = data.n_univ;
    Ok(UrlModel::new(encoder)?)
}

/// Fails unless `store` holds exactly the parameters `model` expects.
pub fn check_store(model: &UrlModel, store: &ParamStore) -> Result<(), CliError> {
    let expected = model.init_params(&mut univmatch::synth::stream_rng(0, 0));
    let mismatch = expected.len() != store.len()
        || expected
            .iter()
            .any(|(name, t)| store.get(name).map(|s| s.dim() != t.dim()).unwrap_or(true));
    if mismatch {
        return Err(CliError::Validation(format!(
            "checkpoint does not fit the dataset (feat_dim {}, n_univ {}) and model config",
            model.config.input_dim, model.config.universe_size
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub final_store: ParamStore,
    /// Parameters after the epoch with the lowest training loss.
    pub best_store: ParamStore,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub steps: usize,
    /// Pairwise F1 on the training set without dropout.
    pub final_train_f1: f64,
}

/// Trains on `data.train`. `on_epoch` sees every epoch log and may stop
/// training early.
pub fn train_model<F>(cfg: &ExperimentConfig, data: &Dataset, mut on_epoch: F) -> Result<TrainOutcome, CliError>
where
    F: FnMut(&EpochLog, &UrlModel, &ParamStore) -> ControlFlow<()>,
{
    let model = model_for(cfg, &data.config)?;
    let mut trainer = Trainer::new(model.clone(), cfg.train.clone())?;
    let mut best_store = trainer.store.clone();
    let mut best = (0usize, f64::INFINITY);
    let mut logs = Vec::new();
    while !trainer.finished() {
        let log = trainer.run_epoch(&data.train)?;
        if log.loss < best.1 {
            best = (log.epoch, log.loss);
            best_store = trainer.store.clone();
        }
        logs.push(log);
        if on_epoch(&log, &model, &trainer.store).is_break() {
            break;
        }
    }
    let final_train_f1 = if data.train.is_empty() {
        1.0
    } else {
        let universe = trainer.store.get(UNIVERSE)?.clone();
        union_scores(&model, &trainer.store, &universe, &data.train, data.config.n_univ)?.0.f1
    };
    Ok(TrainOutcome {
        logs,
        steps: trainer.steps(),
        final_store: trainer.store,
        best_store,
        best_epoch: best.0,
        final_train_f1,
    })
}

fn gt_matchings(graphs: &[Graph], d: usize) -> Result<Vec<UniverseMatching>, CliError> {
    graphs
        .iter()
        .map(|g| label_matching(g, d).map_err(CliError::from))
        .collect()
}

/// Micro scores, macro F1 and the predicted collection.
fn union_scores(
    model: &UrlModel,
    store: &ParamStore,
    universe: &Array2<f64>,
    graphs: &[Graph],
    d: usize,
) -> Result<(Prf, f64, MatchingCollection), CliError> {
    let res = model.match_collection_with(store, universe, graphs)?;
    let pred = res.collection()?;
    let gt = MatchingCollection::from_universe(&gt_matchings(graphs, d)?)?;
    let (prf, macro_f1) = collection_f1(&pred, &gt)?;
    Ok((prf, macro_f1, pred))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Url,
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Url => "url",
            Self::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub mode: EvalMode,
    /// Union mode only.
    pub prf: Option<Prf>,
    pub macro_f1: Option<f64>,
    /// Intersection mode only.
    pub accuracy: Option<f64>,
    pub violation_rate: Option<f64>,
    /// Pairs scored (union) or filtered pairs with a common label
    /// (intersection).
    pub pairs: usize,
    /// Inference time over the test set.
    pub wall_time_ms: f64,
}

fn encode_all(model: &UrlModel, store: &ParamStore, graphs: &[Graph]) -> Result<Vec<Array2<f64>>, CliError> {
    graphs
        .iter()
        .map(|g| Ok(model.encode_eval(store, g)?.0))
        .collect()
}

/// Universe embeddings used at test time.
fn test_universe(
    cfg: &ExperimentConfig,
    model: &UrlModel,
    store: &ParamStore,
    data: &Dataset,
) -> Result<Array2<f64>, CliError> {
    match cfg.eval.centroid_mode {
        None => Ok(store.get(UNIVERSE)?.clone()),
        Some(mode) => {
            let features = encode_all(model, store, &data.train)?;
            let gt = gt_matchings(&data.train, data.config.n_univ)?;
            Ok(centroid_universe(&features, &gt, mode)?)
        }
    }
}

/// Threshold for the pairwise baseline: a quantile of the similarities of
/// assignment-matched nodes over consecutive training pairs.
pub fn baseline_threshold(cfg: &ExperimentConfig, model: &UrlModel, store: &ParamStore, data: &Dataset) -> Result<f64, CliError> {
    let features = encode_all(model, store, &data.train)?;
    let mut sims = Vec::new();
    for w in features.windows(2) {
        sims.extend(matched_similarities(&w[0], &w[1])?);
    }
    if sims.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(quantile(&sims, cfg.eval.tau_quantile)?)
}

fn pair_indices(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect()
}

/// Evaluates `store` on `data.test`: the universe matcher, plus the
/// pairwise baseline when enabled.
pub fn evaluate(cfg: &ExperimentConfig, data: &Dataset, store: &ParamStore) -> Result<Vec<EvalReport>, CliError> {
    let model = model_for(cfg, &data.config)?;
    check_store(&model, store)?;
    let d = data.config.n_univ;
    let test = &data.test;
    let universe = test_universe(cfg, &model, store, data)?;
    let mut reports = Vec::new();
    let k = test.len();
    let n_pairs = k * k.saturating_sub(1) / 2;

    match cfg.eval.mode {
        EvalMode::Union => {
            let start = Instant::now();
            let (prf, macro_f1, pred) = union_scores(&model, store, &universe, test, d)?;
            let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
            reports.push(EvalReport {
                method: Method::Url,
                mode: EvalMode::Union,
                prf: Some(prf),
                macro_f1: Some(macro_f1),
                accuracy: None,
                violation_rate: Some(violation_rate(&pred, cfg.eval.n_triples, cfg.seed)?),
                pairs: n_pairs,
                wall_time_ms,
            });
            if cfg.eval.baseline {
                let tau = baseline_threshold(cfg, &model, store, data)?;
                let start = Instant::now();
                let features = encode_all(&model, store, test)?;
                let pred = baseline_collection(&features, tau)?;
                let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
                let gt = MatchingCollection::from_universe(&gt_matchings(test, d)?)?;
                let (prf, macro_f1) = collection_f1(&pred, &gt)?;
                reports.push(EvalReport {
                    method: Method::Baseline,
                    mode: EvalMode::Union,
                    prf: Some(prf),
                    macro_f1: Some(macro_f1),
                    accuracy: None,
                    violation_rate: Some(violation_rate(&pred, cfg.eval.n_triples, cfg.seed)?),
                    pairs: n_pairs,
                    wall_time_ms,
                });
            }
        }
        EvalMode::Intersection => {
            let mut methods = vec![Method::Url];
            if cfg.eval.baseline {
                methods.push(Method::Baseline);
            }
            for method in methods {
                let start = Instant::now();
                let (mut pred, mut gt) = (Vec::new(), Vec::new());
                for (i, j) in pair_indices(k) {
                    let Some((a, b)) = intersection_filter(&test[i], &test[j])? else {
                        continue;
                    };
                    pred.push(match method {
                        Method::Url => full_url_match(&model, store, &universe, &a, &b)?,
                        Method::Baseline => {
                            let fa = model.encode_eval(store, &a)?.0;
                            let fb = model.encode_eval(store, &b)?.0;
                            pairwise_baseline_match(&fa, &fb, f64::NEG_INFINITY)?
                        }
                    });
                    gt.push(pairwise_from_universe(&label_matching(&a, d)?, &label_matching(&b, d)?)?);
                }
                let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
                reports.push(EvalReport {
                    method,
                    mode: EvalMode::Intersection,
                    prf: None,
                    macro_f1: None,
                    accuracy: Some(accuracy(&pred, &gt)?),
                    violation_rate: None,
                    pairs: pred.len(),
                    wall_time_ms,
                });
            }
        }
    }
    Ok(reports)
}

/// Full matching of two graphs with the same node count through their soft
/// universe assignments: linear assignment on `S_a S_b^T`.
fn full_url_match(
    model: &UrlModel,
    store: &ParamStore,
    universe: &Array2<f64>,
    a: &Graph,
    b: &Graph,
) -> Result<PartialPermutation, CliError> {
    let (sa, _, _) = model.match_graph(store, universe, a)?;
    let (sb, _, _) = model.match_graph(store, universe, b)?;
    let s = sa.0.dot(&sb.0.t());
    let x = solve_lap_auction(&ScoreMatrix::from_array(s.view())?, &AuctionConfig::default())?;
    Ok(x.matching.as_partial())
}
