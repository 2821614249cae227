use rand::Rng;
use thiserror::Error;

use crate::geometry::Graph;
use crate::matching::{subset_violated, MatchingCollection, MatchingError, PartialPermutation};

use super::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("pair {0} is not a full permutation")]
    NotBijective(usize),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub true_positive: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

impl PairCounts {
    pub fn merge(self, o: Self) -> Self {
        Self {
            true_positive: self.true_positive + o.true_positive,
            predicted: self.predicted + o.predicted,
            ground_truth: self.ground_truth + o.ground_truth,
        }
    }

    /// Precision, recall and F1. `0/0` counts as 1 only when nothing is
    /// predicted and nothing is expected.
    pub fn prf(&self) -> Prf {
        let both_empty = self.predicted == 0 && self.ground_truth == 0;
        let ratio = |den: usize| {
            if den > 0 {
                self.true_positive as f64 / den as f64
            } else if both_empty {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(self.predicted);
        let recall = ratio(self.ground_truth);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn pair_counts(pred: &PartialPermutation, gt: &PartialPermutation) -> Result<PairCounts, MetricError> {
    if pred.n_rows() != gt.n_rows() || pred.n_cols() != gt.n_cols() {
        return Err(MetricError::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.n_rows(),
            pred.n_cols(),
            gt.n_rows(),
            gt.n_cols()
        )));
    }
    let true_positive = pred
        .entries()
        .iter()
        .zip(gt.entries())
        .filter(|(p, g)| p.is_some() && p == g)
        .count();
    Ok(PairCounts {
        true_positive,
        predicted: pred.nnz(),
        ground_truth: gt.nnz(),
    })
}

fn check_lengths(pred: usize, gt: usize) -> Result<(), MetricError> {
    if pred != gt {
        return Err(MetricError::Shape(format!("{pred} predicted pairs, {gt} ground-truth pairs")));
    }
    Ok(())
}

/// Micro-averaged scores over a list of pairwise matchings.
pub fn f1_score(pred: &[PartialPermutation], gt: &[PartialPermutation]) -> Result<Prf, MetricError> {
    check_lengths(pred.len(), gt.len())?;
    let mut total = PairCounts::default();
    for (p, g) in pred.iter().zip(gt) {
        total = total.merge(pair_counts(p, g)?);
    }
    Ok(total.prf())
}

/// Mean of the per-pair F1 scores.
pub fn macro_f1(pred: &[PartialPermutation], gt: &[PartialPermutation]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), gt.len())?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sum += pair_counts(p, g)?.prf().f1;
    }
    Ok(sum / pred.len() as f64)
}

/// Micro scores over every unordered pair `i < j` of two collections.
pub fn collection_f1(pred: &MatchingCollection, gt: &MatchingCollection) -> Result<(Prf, f64), MetricError> {
    if pred.sizes() != gt.sizes() {
        return Err(MetricError::Shape("collections cover different graphs".into()));
    }
    let k = pred.k();
    let mut p = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    let mut g = Vec::with_capacity(p.capacity());
    for i in 0..k {
        for j in (i + 1)..k {
            p.push(pred.get(i, j)?.clone());
            g.push(gt.get(i, j)?.clone());
        }
    }
    Ok((f1_score(&p, &g)?, macro_f1(&p, &g)?))
}

/// Fraction of rows mapped correctly, pooled over pairs. Every matching must
/// be a full permutation.
pub fn accuracy(pred: &[PartialPermutation], gt: &[PartialPermutation]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), gt.len())?;
    let (mut correct, mut rows) = (0usize, 0usize);
    for (n, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.is_full_permutation() || !g.is_full_permutation() {
            return Err(MetricError::NotBijective(n));
        }
        let c = pair_counts(p, g)?;
        correct += c.true_positive;
        rows += p.n_rows();
    }
    Ok(if rows == 0 { 1.0 } else { correct as f64 / rows as f64 })
}

/// Restricts two labeled graphs to their common labels, keeping node order
/// and re-triangulating. `None` when the label sets are disjoint.
pub fn intersection_filter(gi: &Graph, gj: &Graph) -> Result<Option<(Graph, Graph)>, MetricError> {
    let (li, lj) = match (gi.labels(), gj.labels()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(MetricError::Shape("intersection filtering needs labeled graphs".into())),
    };
    let keep_i: Vec<usize> = (0..li.len()).filter(|&r| lj.contains(&li[r])).collect();
    let keep_j: Vec<usize> = (0..lj.len()).filter(|&r| li.contains(&lj[r])).collect();
    if keep_i.is_empty() {
        return Ok(None);
    }
    Ok(Some((gi.subgraph(&keep_i), gj.subgraph(&keep_j))))
}

fn triple_count(k: usize) -> u128 {
    let k = k as u128;
    k * k.saturating_sub(1) * k.saturating_sub(2) / 6
}

/// Fraction of graph triples whose pairwise matchings break identity,
/// symmetry or transitivity. Triples are sets of three distinct graphs:
/// all of them when there are at most `n_triples`, otherwise `n_triples`
/// drawn uniformly with replacement from a generator seeded by `seed`.
/// With fewer than three graphs the whole collection is the only triple.
pub fn violation_rate(c: &MatchingCollection, n_triples: usize, seed: u64) -> Result<f64, MetricError> {
    let k = c.k();
    if k == 0 {
        return Ok(0.0);
    }
    if k < 3 {
        let all: Vec<usize> = (0..k).collect();
        return Ok(if subset_violated(c, &all)? { 1.0 } else { 0.0 });
    }
    let mut violated = 0usize;
    let mut checked = 0usize;
    if triple_count(k) <= n_triples as u128 {
        for i in 0..k {
            for j in (i + 1)..k {
                for l in (j + 1)..k {
                    checked += 1;
                    violated += subset_violated(c, &[i, j, l])? as usize;
                }
            }
        }
    } else {
        let mut rng = stream_rng(seed, 0);
        for _ in 0..n_triples {
            let i = rng.random_range(0..k);
            let mut j = rng.random_range(0..k - 1);
            if j >= i {
                j += 1;
            }
            let l = loop {
                let l = rng.random_range(0..k);
                if l != i && l != j {
                    break l;
                }
            };
            checked += 1;
            violated += subset_violated(c, &[i, j, l])? as usize;
        }
    }
    Ok(if checked == 0 { 0.0 } else { violated as f64 / checked as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::UniverseMatching;

    fn pp(rows: &[Option<usize>], cols: usize) -> PartialPermutation {
        PartialPermutation::new(rows.to_vec(), cols).unwrap()
    }

    #[test]
    fn f1_examples() {
        let gt = pp(&[Some(0), Some(1)], 2);
        let s = f1_score(&[gt.clone()], &[gt.clone()]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        let s = f1_score(&[pp(&[None, None], 2)], &[gt]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));

        let gt = pp(&[Some(0), Some(1), Some(2), Some(3)], 4);
        let pred = pp(&[Some(0), Some(2), None, None], 4);
        let s = f1_score(&[pred], &[gt]).unwrap();
        assert_eq!((s.precision, s.recall), (0.5, 0.25));
        assert!((s.f1 - 1.0 / 3.0).abs() < 1e-15);

        let empty = pp(&[None], 1);
        assert_eq!(f1_score(&[empty.clone()], &[empty]).unwrap().f1, 1.0);

        assert!(f1_score(&[pp(&[None], 1)], &[pp(&[None, None], 2)]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let id = PartialPermutation::identity(2);
        let swap = pp(&[Some(1), Some(0)], 2);
        assert_eq!(accuracy(&[id.clone()], &[id.clone()]).unwrap(), 1.0);
        assert_eq!(accuracy(&[swap.clone()], &[id.clone()]).unwrap(), 0.0);
        let gt3 = PartialPermutation::identity(3);
        let half = pp(&[Some(0), Some(2), Some(1)], 3);
        assert!((accuracy(&[half], &[gt3]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let two = pp(&[Some(0), Some(1)], 2);
        let one_right = pp(&[Some(0), Some(1)], 2);
        let pred = pp(&[Some(1), Some(0)], 2);
        assert_eq!(accuracy(&[two, pred], &[one_right, id.clone()]).unwrap(), 0.5);
        assert!(matches!(
            accuracy(&[pp(&[Some(0), None], 2)], &[id]),
            Err(MetricError::NotBijective(0))
        ));
    }

    #[test]
    fn f1_equals_accuracy_for_full_matchings() {
        let gt = PartialPermutation::identity(3);
        let pred = pp(&[Some(0), Some(2), Some(1)], 3);
        let s = f1_score(&[pred.clone()], &[gt.clone()]).unwrap();
        let a = accuracy(&[pred], &[gt]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (a, a, a));
    }

    fn universe_collection(assign: &[&[usize]], d: usize) -> MatchingCollection {
        let x: Vec<UniverseMatching> = assign
            .iter()
            .map(|a| UniverseMatching::new(a.to_vec(), d).unwrap())
            .collect();
        MatchingCollection::from_universe(&x).unwrap()
    }

    #[test]
    fn violation_rate_examples() {
        let c = universe_collection(&[&[0, 1], &[1, 2], &[2, 0], &[0, 2]], 3);
        assert_eq!(violation_rate(&c, 1000, 0).unwrap(), 0.0);
        assert_eq!(violation_rate(&c, 2, 0).unwrap(), 0.0);

        let single = universe_collection(&[&[0, 1]], 2);
        assert_eq!(violation_rate(&single, 10, 0).unwrap(), 0.0);

        // X_12 = I, X_23 = I, X_13 = 0: transitivity fails.
        let mut c = MatchingCollection::new(vec![1, 1, 1]);
        let one = PartialPermutation::identity(1);
        let none = PartialPermutation::empty(1, 1);
        for i in 0..3 {
            c.insert(i, i, one.clone()).unwrap();
        }
        for (i, j, x) in [(0, 1, &one), (1, 2, &one), (0, 2, &none)] {
            c.insert(i, j, x.clone()).unwrap();
            c.insert(j, i, x.transpose()).unwrap();
        }
        assert_eq!(violation_rate(&c, 100, 0).unwrap(), 1.0);
    }

    fn labeled(labels: &[usize]) -> Graph {
        let coords = labels.iter().map(|&l| [l as f64, (l * l) as f64]).collect();
        let f = ndarray::Array2::from_shape_fn((labels.len(), 1), |(r, _)| labels[r] as f64);
        Graph::new(coords, f, Some(labels.to_vec())).unwrap()
    }

    #[test]
    fn intersection_filter_examples() {
        let (a, b) = intersection_filter(&labeled(&[0, 1, 2]), &labeled(&[1, 2, 3])).unwrap().unwrap();
        assert_eq!(a.labels().unwrap(), &[1, 2]);
        assert_eq!(b.labels().unwrap(), &[1, 2]);

        let g = labeled(&[0, 2, 5, 7]);
        let (a, b) = intersection_filter(&g, &labeled(&[7, 5, 2, 0])).unwrap().unwrap();
        assert_eq!(a, g);
        assert_eq!(b.labels().unwrap(), &[7, 5, 2, 0]);

        assert!(intersection_filter(&labeled(&[0, 1]), &labeled(&[2, 3])).unwrap().is_none());
    }
}
