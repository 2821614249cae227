//! Mini-batch training of the universe matcher.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Adam, AdamConfig, ParamStore, Tape};
use crate::geometry::Graph;
use crate::matching::pairwise_from_universe;
use crate::model::{ModelError, UrlModel};
use crate::synth::{pair_counts, PairCounts};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 123,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-graph loss.
    pub loss: f64,
    /// Pairwise F1 of the training-mode predictions within each batch.
    pub train_f1: f64,
    pub steps: usize,
}

pub struct Trainer {
    pub model: UrlModel,
    pub store: ParamStore,
    pub config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    steps: usize,
    epoch: usize,
}

impl Trainer {
    /// Parameters are initialized from the training seed.
    pub fn new(model: UrlModel, config: TrainConfig) -> Result<Self, ModelError> {
        if config.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let store = model.init_params(&mut rng);
        Ok(Self {
            adam: Adam::new(config.adam),
            model,
            store,
            config,
            rng,
            steps: 0,
            epoch: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_steps.is_some_and(|cap| self.steps >= cap)
    }

    /// One pass over `graphs` in a shuffled order.
    pub fn run_epoch(&mut self, graphs: &[Graph]) -> Result<EpochLog, ModelError> {
        if graphs.is_empty() {
            return Err(ModelError::Supervision("no training graphs".into()));
        }
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut counts = PairCounts::default();
        for batch in order.chunks(self.config.batch_size) {
            if self.config.max_steps.is_some_and(|cap| self.steps >= cap) {
                break;
            }
            let refs: Vec<&Graph> = batch.iter().map(|&i| &graphs[i]).collect();
            let mut tape = Tape::new();
            let (loss, softs) = self
                .model
                .total_loss(&mut tape, &self.store, &refs, &mut Some(&mut self.rng))?;
            loss_sum += tape.scalar(loss);
            seen += refs.len();

            let mut pred = Vec::with_capacity(refs.len());
            let mut gt = Vec::with_capacity(refs.len());
            for (g, s) in refs.iter().zip(&softs) {
                pred.push(self.model.discretize(tape.value(*s))?);
                gt.push(self.model.ground_truth(g)?);
            }
            for i in 0..refs.len() {
                for j in (i + 1)..refs.len() {
                    let p = pairwise_from_universe(&pred[i], &pred[j])?;
                    let t = pairwise_from_universe(&gt[i], &gt[j])?;
                    counts = counts.merge(pair_counts(&p, &t).map_err(|e| ModelError::Supervision(e.to_string()))?);
                }
            }

            let grads = tape.backward(loss, &self.store)?;
            self.adam.step(&mut self.store, &grads)?;
            self.steps += 1;
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            train_f1: counts.prf().f1,
            steps: self.steps,
        })
    }
}
