//! Synthetic keypoint benchmark: an anchor graph of universe points, noisy
//! partial observations of it, evaluation metrics and a pairwise baseline.

mod baseline;
mod io;
mod metrics;

pub use baseline::{baseline_collection, matched_similarities, pairwise_baseline_match, quantile};
pub use io::{read_dataset, write_dataset, DatasetIoError, FORMAT_VERSION};
pub use metrics::{
    accuracy, collection_f1, f1_score, intersection_filter, macro_f1, pair_counts, violation_rate, MetricError,
    PairCounts, Prf,
};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Graph;
use crate::matching::UniverseMatching;

/// Graphs need at least three nodes for a triangulation.
pub const MIN_NODES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid synthetic config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_univ: usize,
    pub p_vis: f64,
    pub sigma_feat: f64,
    pub sigma_coo: f64,
    pub feat_dim: usize,
    pub canvas: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Rotation drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Translation per axis drawn from `[-translation, translation]`.
    pub translation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_univ: 25,
            p_vis: 0.8,
            sigma_feat: 1.5,
            sigma_coo: 10.0,
            feat_dim: 1024,
            canvas: 256.0,
            n_train: 200,
            n_test: 100,
            rotation_deg: 30.0,
            scale_min: 0.8,
            scale_max: 1.2,
            translation: 20.0,
            seed: 123,
        }
    }
}

impl SynthConfig {
    /// No noise and an identity transform.
    pub fn noise_free(self) -> Self {
        Self {
            sigma_feat: 0.0,
            sigma_coo: 0.0,
            rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            translation: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_string()));
        if !(0.0..=1.0).contains(&self.p_vis) {
            return err("p_vis must lie in [0, 1]");
        }
        if self.p_vis == 0.0 {
            return err("p_vis = 0 never yields a graph with at least 3 nodes");
        }
        if self.n_univ < MIN_NODES {
            return err("n_univ must be at least 3");
        }
        if self.feat_dim == 0 {
            return err("feat_dim must be positive");
        }
        let nonneg = [
            ("sigma_feat", self.sigma_feat),
            ("sigma_coo", self.sigma_coo),
            ("rotation_deg", self.rotation_deg),
            ("translation", self.translation),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.canvas.is_finite() && self.canvas > 0.0) {
            return err("canvas must be positive");
        }
        if !(self.scale_min.is_finite() && self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return err("scale range must satisfy 0 < scale_min <= scale_max");
        }
        if !self.scale_max.is_finite() {
            return err("scale_max must be finite");
        }
        Ok(())
    }
}

/// The ground-truth graph every sample perturbs.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub features: Array2<f64>,
    pub coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub anchor: Anchor,
    pub train: Vec<Graph>,
    pub test: Vec<Graph>,
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_anchor(cfg: &SynthConfig, seed: u64) -> Anchor {
    let mut rng = stream_rng(seed, 0);
    let features = Array2::from_shape_fn((cfg.n_univ, cfg.feat_dim), |_| rng.random_range(-1.0..=1.0));
    let coords = (0..cfg.n_univ)
        .map(|_| [rng.random_range(0.0..=cfg.canvas), rng.random_range(0.0..=cfg.canvas)])
        .collect();
    Anchor { features, coords }
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

fn gaussian<R: Rng>(rng: &mut R, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

/// Draws observation `index` of the anchor. Each universe point is visible
/// independently with probability `p_vis`; draws with fewer than three
/// visible points are repeated. Nodes are ordered by universe label.
pub fn sample_graph(anchor: &Anchor, cfg: &SynthConfig, seed: u64, index: u64) -> Graph {
    let mut rng = stream_rng(seed, index + 1);
    let visible = loop {
        let v: Vec<usize> = (0..cfg.n_univ).filter(|_| rng.random_bool(cfg.p_vis)).collect();
        if v.len() >= MIN_NODES {
            break v;
        }
    };

    let theta = symmetric(&mut rng, cfg.rotation_deg).to_radians();
    let scale = if cfg.scale_max > cfg.scale_min {
        rng.random_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let shift = [symmetric(&mut rng, cfg.translation), symmetric(&mut rng, cfg.translation)];
    let centre = cfg.canvas / 2.0;
    let (sin, cos) = theta.sin_cos();
    let identity = theta == 0.0 && scale == 1.0 && shift == [0.0, 0.0];

    let mut features = anchor.features.select(ndarray::Axis(0), &visible);
    features.mapv_inplace(|v| v + gaussian(&mut rng, cfg.sigma_feat));
    let coords = visible
        .iter()
        .map(|&u| {
            let [x, y] = anchor.coords[u];
            if identity {
                return [x + gaussian(&mut rng, cfg.sigma_coo), y + gaussian(&mut rng, cfg.sigma_coo)];
            }
            let (dx, dy) = (x - centre, y - centre);
            let px = scale * (cos * dx - sin * dy) + centre + shift[0];
            let py = scale * (sin * dx + cos * dy) + centre + shift[1];
            [px + gaussian(&mut rng, cfg.sigma_coo), py + gaussian(&mut rng, cfg.sigma_coo)]
        })
        .collect();
    Graph::new(coords, features, Some(visible)).expect("sampled graph is well formed")
}

/// Anchor plus `n_train` training and `n_test` test graphs. Each graph has
/// its own stream, so generation runs in parallel yet is reproducible.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset, ConfigError> {
    cfg.validate()?;
    let anchor = generate_anchor(cfg, cfg.seed);
    let total = (cfg.n_train + cfg.n_test) as u64;
    let mut graphs: Vec<Graph> = (0..total)
        .into_par_iter()
        .map(|i| sample_graph(&anchor, cfg, cfg.seed, i))
        .collect();
    let test = graphs.split_off(cfg.n_train);
    Ok(Dataset {
        config: cfg.clone(),
        anchor,
        train: graphs,
        test,
    })
}

/// Universe matching encoded by a graph's labels.
pub fn label_matching(graph: &Graph, d: usize) -> Result<UniverseMatching, MetricError> {
    graph.check_labels(d).map_err(|e| MetricError::Shape(e.to_string()))?;
    let labels = graph.labels().expect("checked above").to_vec();
    UniverseMatching::new(labels, d).map_err(|e| MetricError::Shape(e.to_string()))
}
