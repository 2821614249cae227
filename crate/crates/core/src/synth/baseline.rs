use ndarray::Array2;
use rayon::prelude::*;

use crate::assignment::{solve_lap_auction, AssignmentError, AuctionConfig, ScoreMatrix};
use crate::matching::{MatchingCollection, MatchingError, PartialPermutation};

use super::MetricError;

fn lap_pairs(fi: &Array2<f64>, fj: &Array2<f64>) -> Result<Vec<(usize, usize, f64)>, AssignmentError> {
    let s = fi.dot(&fj.t());
    let cfg = AuctionConfig::default();
    if s.nrows() <= s.ncols() {
        let a = solve_lap_auction(&ScoreMatrix::from_array(s.view())?, &cfg)?;
        Ok(a.matching
            .assignment()
            .iter()
            .enumerate()
            .map(|(r, &c)| (r, c, s[[r, c]]))
            .collect())
    } else {
        let st = s.t();
        let a = solve_lap_auction(&ScoreMatrix::from_array(st)?, &cfg)?;
        let mut pairs: Vec<_> = a
            .matching
            .assignment()
            .iter()
            .enumerate()
            .map(|(c, &r)| (r, c, s[[r, c]]))
            .collect();
        pairs.sort_unstable_by_key(|p| p.0);
        Ok(pairs)
    }
}

/// Similarities `<f_i[r], f_j[c]>` of the pairs chosen by linear assignment.
pub fn matched_similarities(fi: &Array2<f64>, fj: &Array2<f64>) -> Result<Vec<f64>, MetricError> {
    check_dims(fi, fj)?;
    let pairs = lap_pairs(fi, fj).map_err(|e| MetricError::Shape(e.to_string()))?;
    Ok(pairs.into_iter().map(|p| p.2).collect())
}

fn check_dims(fi: &Array2<f64>, fj: &Array2<f64>) -> Result<(), MetricError> {
    if fi.ncols() != fj.ncols() {
        return Err(MetricError::Shape(format!(
            "feature dims {} and {} differ",
            fi.ncols(),
            fj.ncols()
        )));
    }
    Ok(())
}

/// Two-graph matching without a universe: maximum-similarity assignment of
/// the smaller side, keeping pairs whose similarity reaches `tau`.
pub fn pairwise_baseline_match(
    fi: &Array2<f64>,
    fj: &Array2<f64>,
    tau: f64,
) -> Result<PartialPermutation, MetricError> {
    check_dims(fi, fj)?;
    let mut rows = vec![None; fi.nrows()];
    if fi.nrows() > 0 && fj.nrows() > 0 {
        for (r, c, s) in lap_pairs(fi, fj).map_err(|e| MetricError::Shape(e.to_string()))? {
            if s >= tau {
                rows[r] = Some(c);
            }
        }
    }
    Ok(PartialPermutation::new(rows, fj.nrows())?)
}

/// All pairwise baseline matchings of a collection: `X_ij` is solved for
/// `i < j`, `X_ji = X_ij^T` and `X_ii = I`.
pub fn baseline_collection(features: &[Array2<f64>], tau: f64) -> Result<MatchingCollection, MetricError> {
    let k = features.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect();
    let solved: Vec<PartialPermutation> = pairs
        .par_iter()
        .map(|&(i, j)| pairwise_baseline_match(&features[i], &features[j], tau))
        .collect::<Result<_, _>>()?;
    let mut c = MatchingCollection::new(features.iter().map(|f| f.nrows()).collect());
    for (i, f) in features.iter().enumerate() {
        c.insert(i, i, PartialPermutation::identity(f.nrows()))?;
    }
    for (&(i, j), x) in pairs.iter().zip(solved) {
        c.insert(j, i, x.transpose())?;
        c.insert(i, j, x)?;
    }
    Ok(c)
}

/// Empirical `q`-quantile (nearest rank) of `values`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64, MatchingError> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(MatchingError::Invalid(format!(
            "quantile {q} of {} values",
            values.len()
        )));
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}
