//! The universe-representation matcher.
//!
//! A graph passes through an input projection, a stack of 2-D spline
//! convolutions over relative keypoint locations, a small MLP that predicts
//! a per-node virtual coordinate, and a stack of 3-D spline convolutions
//! whose third pseudo-coordinate is that virtual coordinate. Final node
//! features are scored against learned universe embeddings, normalized per
//! row, and discretized by linear assignment.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::{solve_lap_auction, AssignmentError, AuctionConfig, ScoreMatrix};
use crate::diff::{DiffError, ParamStore, SplineGeometry, Tape, Var};
use crate::geometry::{pseudo_coords, pseudo_scale, GeometryError, Graph};
use crate::matching::{pairwise_from_universe, MatchingCollection, MatchingError, PartialPermutation, UniverseMatching};

/// Floor applied inside the loss logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
pub const UNIVERSE: &str = "universe";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("graph with {nodes} nodes exceeds the universe size {universe}")]
    Infeasible { nodes: usize, universe: usize },
    #[error("supervision: {0}")]
    Supervision(String),
    #[error("invalid encoder config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub spline_layers_2d: usize,
    pub spline_layers_3d: usize,
    /// Knots per pseudo-coordinate dimension.
    pub knots: usize,
    pub mlp_z_hidden: usize,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub universe_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            hidden_dim: 64,
            spline_layers_2d: 2,
            spline_layers_3d: 1,
            knots: 5,
            mlp_z_hidden: 32,
            dropout_rate: 0.35,
            label_smoothing: 0.4,
            universe_size: 25,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("mlp_z_hidden", self.mlp_z_hidden),
            ("universe_size", self.universe_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.knots < 2 {
            return Err(ModelError::Config("knots must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ModelError::Config("label_smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// How [`centroid_universe`] normalizes the summed features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentroidMode {
    /// Divide every universe row by the number of graphs `k`.
    Mean,
    /// Divide each universe row by how many graphs contain that point.
    Occurrence,
}

/// Rows on the probability simplex, one per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMatching(pub Array2<f64>);

/// Per-graph encoder output.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub features: Var,
    pub z: Var,
}

/// Matches for a collection of graphs against the shared universe.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub soft: Vec<SoftMatching>,
    pub hard: Vec<UniverseMatching>,
    pub z: Vec<Vec<f64>>,
}

impl MatchResult {
    /// `X_i X_j^T`.
    pub fn pairwise(&self, i: usize, j: usize) -> Result<PartialPermutation, MatchingError> {
        pairwise_from_universe(&self.hard[i], &self.hard[j])
    }

    pub fn collection(&self) -> Result<MatchingCollection, MatchingError> {
        MatchingCollection::from_universe(&self.hard)
    }
}

fn layer_name(block: &str, layer: usize, part: &str) -> String {
    format!("{block}.{layer}.{part}")
}

/// Dropout masks are drawn from this generator during training.
pub type DropoutRng<'a> = Option<&'a mut dyn rand::RngCore>;

#[derive(Debug, Clone)]
pub struct UrlModel {
    pub config: EncoderConfig,
    pub auction: AuctionConfig,
}

impl UrlModel {
    pub fn new(config: EncoderConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            auction: AuctionConfig::default(),
        })
    }

    /// Glorot-normal weights, zero biases, universe embeddings with
    /// standard deviation `1/sqrt(h)`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let c = &self.config;
        let h = c.hidden_dim;
        let mut store = ParamStore::new();
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
        };
        let glorot = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f64).sqrt();

        store.insert("input.weight", normal(c.input_dim, h, glorot(c.input_dim, h)));
        store.insert("input.bias", Array2::zeros((1, h)));
        for (block, layers, dims) in [("spline2d", c.spline_layers_2d, 2u32), ("spline3d", c.spline_layers_3d, 3)] {
            let cells = c.knots.pow(dims);
            for l in 0..layers {
                store.insert(layer_name(block, l, "root"), normal(h, h, glorot(h, h)));
                store.insert(layer_name(block, l, "bias"), Array2::zeros((1, h)));
                store.insert(layer_name(block, l, "kernel"), normal(cells * h, h, glorot(h, h)));
            }
        }
        store.insert("mlp_z.w1", normal(h, c.mlp_z_hidden, glorot(h, c.mlp_z_hidden)));
        store.insert("mlp_z.b1", Array2::zeros((1, c.mlp_z_hidden)));
        store.insert("mlp_z.w2", normal(c.mlp_z_hidden, 1, glorot(c.mlp_z_hidden, 1)));
        store.insert("mlp_z.b2", Array2::zeros((1, 1)));
        store.insert(UNIVERSE, normal(c.universe_size, h, 1.0 / (h as f64).sqrt()));
        store
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: &mut DropoutRng<'_>) -> Result<Var, ModelError> {
        let rate = self.config.dropout_rate;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = Array2::from_shape_fn(tape.value(x).dim(), |_| rng.random::<f64>() >= rate);
                Ok(tape.dropout(x, &keep, rate)?)
            }
            _ => Ok(x),
        }
    }

    /// `relu(x W_root + b + spline_message(x))`, then dropout when training.
    #[allow(clippy::too_many_arguments)]
    pub fn spline_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: (&str, usize),
        x: Var,
        pseudo: Var,
        geometry: &Arc<SplineGeometry>,
        rng: &mut DropoutRng<'_>,
    ) -> Result<Var, ModelError> {
        let root = tape.param(&layer_name(prefix.0, prefix.1, "root"), store)?;
        let bias = tape.param(&layer_name(prefix.0, prefix.1, "bias"), store)?;
        let kernel = tape.param(&layer_name(prefix.0, prefix.1, "kernel"), store)?;
        let lin = tape.matmul(x, root)?;
        let lin = tape.add_row(lin, bias)?;
        let msg = tape.spline_message(x, kernel, pseudo, geometry, self.config.knots)?;
        let pre = tape.add(lin, msg)?;
        let out = tape.relu(pre)?;
        self.dropout(tape, out, rng)
    }

    /// `z = relu(f W1 + b1) W2 + b2`, one value per node (`m x 1`).
    pub fn lift_virtual_coordinate(&self, tape: &mut Tape, store: &ParamStore, f: Var) -> Result<Var, ModelError> {
        let w1 = tape.param("mlp_z.w1", store)?;
        let b1 = tape.param("mlp_z.b1", store)?;
        let w2 = tape.param("mlp_z.w2", store)?;
        let b2 = tape.param("mlp_z.b2", store)?;
        let a = tape.matmul(f, w1)?;
        let a = tape.add_row(a, b1)?;
        let a = tape.relu(a)?;
        let z = tape.matmul(a, w2)?;
        Ok(tape.add_row(z, b2)?)
    }

    /// Runs the encoder on one graph.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &Graph,
        rng: &mut DropoutRng<'_>,
    ) -> Result<Encoded, ModelError> {
        if graph.feature_dim() != self.config.input_dim {
            return Err(ModelError::Config(format!(
                "graph features have {} dims, encoder expects {}",
                graph.feature_dim(),
                self.config.input_dim
            )));
        }
        let m = graph.n_nodes();
        let directed = graph.directed_edges();
        let geometry = SplineGeometry::new(m, directed.clone());
        let scale = pseudo_scale(graph);
        let pseudo2 = tape.constant(pseudo_coords(graph, None)?.values)?;

        let x = tape.constant(graph.features().clone())?;
        let w = tape.param("input.weight", store)?;
        let b = tape.param("input.bias", store)?;
        let x = tape.matmul(x, w)?;
        let mut x = tape.add_row(x, b)?;

        for l in 0..self.config.spline_layers_2d {
            x = self.spline_layer(tape, store, ("spline2d", l), x, pseudo2, &geometry, rng)?;
        }

        let z = self.lift_virtual_coordinate(tape, store, x)?;
        if self.config.spline_layers_3d > 0 {
            let receivers: Vec<usize> = directed.iter().map(|e| e.0).collect();
            let senders: Vec<usize> = directed.iter().map(|e| e.1).collect();
            let zw = tape.gather_rows(z, &senders)?;
            let zv = tape.gather_rows(z, &receivers)?;
            let dz = tape.sub(zw, zv)?;
            let dz = tape.scale(dz, 1.0 / (2.0 * scale))?;
            let dz = tape.add_scalar(dz, 0.5)?;
            let uz = tape.clamp(dz, 0.0, 1.0)?;
            let pseudo3 = tape.concat_cols(&[pseudo2, uz])?;
            for l in 0..self.config.spline_layers_3d {
                x = self.spline_layer(tape, store, ("spline3d", l), x, pseudo3, &geometry, rng)?;
            }
        }
        Ok(Encoded { features: x, z })
    }

    /// Row-wise softmax of `F U^T`.
    pub fn soft_matching(&self, tape: &mut Tape, features: Var, universe: Var) -> Result<Var, ModelError> {
        let (m, d) = (tape.value(features).nrows(), tape.value(universe).nrows());
        if m > d {
            return Err(ModelError::Infeasible { nodes: m, universe: d });
        }
        let logits = tape.matmul_nt(features, universe)?;
        Ok(tape.row_softmax(logits)?)
    }

    /// Mean per-node cross-entropy against label-smoothed targets
    /// `(1 - eps) y + eps / d`.
    pub fn node_loss(
        &self,
        tape: &mut Tape,
        soft: Var,
        gt: &UniverseMatching,
        smoothing: f64,
    ) -> Result<Var, ModelError> {
        let (m, d) = tape.value(soft).dim();
        if gt.n_rows() != m || gt.universe_size() != d {
            return Err(ModelError::Supervision(format!(
                "ground truth is {}x{}, soft matching is {m}x{d}",
                gt.n_rows(),
                gt.universe_size()
            )));
        }
        let mut target = Array2::from_elem((m, d), smoothing / d as f64);
        for (r, &c) in gt.assignment().iter().enumerate() {
            target[[r, c]] += 1.0 - smoothing;
        }
        let target = tape.constant(target)?;
        let logs = tape.log(soft, LOG_FLOOR)?;
        let weighted = tape.mul(logs, target)?;
        let total = tape.sum(weighted)?;
        Ok(tape.scale(total, -1.0 / m.max(1) as f64)?)
    }

    /// Ground-truth universe matching from a graph's labels.
    pub fn ground_truth(&self, graph: &Graph) -> Result<UniverseMatching, ModelError> {
        let d = self.config.universe_size;
        graph
            .check_labels(d)
            .map_err(|e| ModelError::Supervision(e.to_string()))?;
        let labels = graph.labels().expect("checked above").to_vec();
        Ok(UniverseMatching::new(labels, d)?)
    }

    /// Sum of per-graph losses.
    pub fn total_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graphs: &[&Graph],
        rng: &mut DropoutRng<'_>,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        if graphs.is_empty() {
            return Err(ModelError::Supervision("empty batch".into()));
        }
        let universe = tape.param(UNIVERSE, store)?;
        let mut total = None;
        let mut softs = Vec::with_capacity(graphs.len());
        for g in graphs {
            let gt = self.ground_truth(g)?;
            let enc = self.encode(tape, store, g, rng)?;
            let soft = self.soft_matching(tape, enc.features, universe)?;
            let li = self.node_loss(tape, soft, &gt, self.config.label_smoothing)?;
            softs.push(soft);
            total = Some(match total {
                None => li,
                Some(t) => tape.add(t, li)?,
            });
        }
        Ok((total.expect("non-empty batch"), softs))
    }

    /// Optimal universe matching for a soft matching.
    pub fn discretize(&self, soft: &Array2<f64>) -> Result<UniverseMatching, ModelError> {
        let (m, d) = soft.dim();
        if m > d {
            return Err(ModelError::Infeasible { nodes: m, universe: d });
        }
        let s = ScoreMatrix::from_array(soft.view())?;
        Ok(solve_lap_auction(&s, &self.auction)?.matching)
    }

    /// Encoder output without dropout: node features and virtual
    /// coordinates.
    pub fn encode_eval(&self, store: &ParamStore, graph: &Graph) -> Result<(Array2<f64>, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, store, graph, &mut None)?;
        let z = tape.value(enc.z).column(0).to_vec();
        Ok((tape.value(enc.features).clone(), z))
    }

    /// Encodes, scores and discretizes one graph against `universe`.
    pub fn match_graph(
        &self,
        store: &ParamStore,
        universe: &Array2<f64>,
        graph: &Graph,
    ) -> Result<(SoftMatching, UniverseMatching, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, store, graph, &mut None)?;
        let u = tape.constant(universe.clone())?;
        let soft = self.soft_matching(&mut tape, enc.features, u)?;
        let soft = tape.value(soft).clone();
        let hard = self.discretize(&soft)?;
        let z = tape.value(enc.z).column(0).to_vec();
        Ok((SoftMatching(soft), hard, z))
    }

    /// Matches every graph independently against the learned universe.
    pub fn match_collection(&self, store: &ParamStore, graphs: &[Graph]) -> Result<MatchResult, ModelError> {
        let universe = store.get(UNIVERSE)?.clone();
        self.match_collection_with(store, &universe, graphs)
    }

    /// As [`Self::match_collection`] with explicit universe embeddings.
    pub fn match_collection_with(
        &self,
        store: &ParamStore,
        universe: &Array2<f64>,
        graphs: &[Graph],
    ) -> Result<MatchResult, ModelError> {
        let per_graph: Vec<_> = graphs
            .par_iter()
            .map(|g| self.match_graph(store, universe, g))
            .collect::<Result<_, _>>()?;
        let mut result = MatchResult {
            soft: Vec::with_capacity(graphs.len()),
            hard: Vec::with_capacity(graphs.len()),
            z: Vec::with_capacity(graphs.len()),
        };
        for (s, h, z) in per_graph {
            result.soft.push(s);
            result.hard.push(h);
            result.z.push(z);
        }
        Ok(result)
    }
}

/// Universe embeddings as averages of the features assigned to each point.
pub fn centroid_universe(
    features: &[Array2<f64>],
    gt: &[UniverseMatching],
    mode: CentroidMode,
) -> Result<Array2<f64>, ModelError> {
    if features.len() != gt.len() || gt.is_empty() {
        return Err(ModelError::Supervision(format!(
            "{} feature sets for {} matchings",
            features.len(),
            gt.len()
        )));
    }
    let d = gt[0].universe_size();
    let h = features[0].ncols();
    let mut sum = Array2::<f64>::zeros((d, h));
    let mut count = vec![0usize; d];
    for (f, x) in features.iter().zip(gt) {
        if f.ncols() != h || f.nrows() != x.n_rows() || x.universe_size() != d {
            return Err(ModelError::Supervision("inconsistent feature / matching shapes".into()));
        }
        for (r, &c) in x.assignment().iter().enumerate() {
            let mut row = sum.row_mut(c);
            row += &f.row(r);
            count[c] += 1;
        }
    }
    match mode {
        CentroidMode::Mean => sum /= gt.len() as f64,
        CentroidMode::Occurrence => {
            for (mut row, &n) in sum.axis_iter_mut(Axis(0)).zip(&count) {
                if n > 0 {
                    row /= n as f64;
                }
            }
        }
    }
    Ok(sum)
}
