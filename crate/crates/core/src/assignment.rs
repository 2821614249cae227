//! Rectangular linear assignment: maximize `<X, S>` over object-to-universe
//! matchings `X`.
//!
//! [`solve_lap_auction`] is the production solver (forward auction with
//! epsilon scaling). [`solve_lap_exact`] enumerates every injective map and
//! serves as the reference for small problems.

use ndarray::ArrayView2;
use thiserror::Error;

use crate::matching::UniverseMatching;

/// Largest column count [`solve_lap_exact`] accepts.
pub const EXACT_MAX_COLS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("infeasible: {rows} rows cannot be assigned injectively to {cols} columns")]
    Infeasible { rows: usize, cols: usize },
    #[error("score matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("score matrix expects {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid epsilon schedule: {0}")]
    Schedule(String),
    #[error("exhaustive solver is limited to {EXACT_MAX_COLS} columns, got {0}")]
    TooLarge(usize),
}

/// Dense `m x d` similarity matrix (higher is better), `m <= d`, finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, AssignmentError> {
        if values.len() != rows * cols {
            return Err(AssignmentError::Shape {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if rows > cols {
            return Err(AssignmentError::Infeasible { rows, cols });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(AssignmentError::Shape {
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_array(a: ArrayView2<'_, f64>) -> Result<Self, AssignmentError> {
        let (rows, cols) = a.dim();
        Self::new(rows, cols, a.iter().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `<X, S>` summed in row order.
    pub fn objective(&self, assignment: &[usize]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .fold(0.0, |acc, (r, &c)| acc + self.get(r, c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub matching: UniverseMatching,
    pub objective: f64,
}

/// Strictly decreasing positive epsilons, one auction phase each.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSchedule(Vec<f64>);

impl EpsilonSchedule {
    pub fn new(eps: Vec<f64>) -> Result<Self, AssignmentError> {
        if eps.is_empty() {
            return Err(AssignmentError::Schedule("empty".into()));
        }
        if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(AssignmentError::Schedule("epsilons must be positive and finite".into()));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(AssignmentError::Schedule("epsilons must strictly decrease".into()));
        }
        Ok(Self(eps))
    }

    /// `eps_0 = max|S|`, divided by 4 per phase, ending at
    /// `granularity / (n + 1)` for `n` bidders.
    pub fn scaling(max_abs: f64, bidders: usize, granularity: f64) -> Self {
        let last = granularity / (bidders as f64 + 1.0);
        let mut eps = Vec::new();
        let mut e = max_abs;
        while e > last {
            eps.push(e);
            e /= 4.0;
        }
        eps.push(last);
        Self(eps)
    }

    pub fn phases(&self) -> &[f64] {
        &self.0
    }

    pub fn final_epsilon(&self) -> f64 {
        *self.0.last().expect("schedule is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionConfig {
    /// Optimality granularity: the returned objective is within this of the
    /// optimum.
    pub granularity: f64,
}

impl Default for AuctionConfig {
    fn default() -> Self {
        Self { granularity: 1e-9 }
    }
}

/// Auction solve with the default epsilon-scaling schedule.
pub fn solve_lap_auction(s: &ScoreMatrix, cfg: &AuctionConfig) -> Result<Assignment, AssignmentError> {
    let schedule = EpsilonSchedule::scaling(s.max_abs(), s.cols, cfg.granularity);
    solve_lap_auction_with_schedule(s, &schedule)
}

/// Forward auction (Gauss-Seidel bidding, FIFO bidder queue).
///
/// Rows `m..d` are padded with zero-benefit bidders so the problem is
/// square; their columns are the unused universe points. Prices carry over
/// between phases, assignments do not.
pub fn solve_lap_auction_with_schedule(
    s: &ScoreMatrix,
    schedule: &EpsilonSchedule,
) -> Result<Assignment, AssignmentError> {
    let (m, n) = (s.rows, s.cols);
    if m > n {
        return Err(AssignmentError::Infeasible { rows: m, cols: n });
    }
    let benefit = |i: usize, j: usize| if i < m { s.get(i, j) } else { 0.0 };

    let mut prices = vec![0.0f64; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut queue = std::collections::VecDeque::with_capacity(n);

    for &eps in schedule.phases() {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        queue.clear();
        queue.extend(0..n);

        while let Some(i) = queue.pop_front() {
            let mut best = usize::MAX;
            let mut v1 = f64::NEG_INFINITY;
            let mut v2 = f64::NEG_INFINITY;
            for j in 0..n {
                let v = benefit(i, j) - prices[j];
                if v > v1 {
                    v2 = v1;
                    v1 = v;
                    best = j;
                } else if v > v2 {
                    v2 = v;
                }
            }
            let raise = if v2.is_finite() { v1 - v2 + eps } else { eps };
            prices[best] += raise;
            if let Some(prev) = owner[best].replace(i) {
                assigned[prev] = None;
                queue.push_back(prev);
            }
            assigned[i] = Some(best);
        }
    }

    let cols: Vec<usize> = assigned[..m]
        .iter()
        .map(|a| a.expect("auction terminates with every bidder assigned"))
        .collect();
    let objective = s.objective(&cols);
    let matching = UniverseMatching::new(cols, n).expect("auction assignment is injective");
    Ok(Assignment { matching, objective })
}

/// Optimum found by enumeration, with the runner-up objective for margin
/// checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub assignment: Assignment,
    /// Best objective among all other injective maps; `None` when the
    /// optimum is the only feasible map.
    pub second_best: Option<f64>,
}

impl ExactSolution {
    /// Gap between the optimum and the runner-up.
    pub fn margin(&self) -> f64 {
        self.second_best
            .map_or(f64::INFINITY, |s| self.assignment.objective - s)
    }
}

/// Exhaustive search over all injective row -> column maps in
/// lexicographic order; ties keep the lexicographically smallest map.
pub fn solve_lap_exact(s: &ScoreMatrix) -> Result<ExactSolution, AssignmentError> {
    if s.cols > EXACT_MAX_COLS {
        return Err(AssignmentError::TooLarge(s.cols));
    }
    if s.rows > s.cols {
        return Err(AssignmentError::Infeasible {
            rows: s.rows,
            cols: s.cols,
        });
    }

    struct Search<'a> {
        s: &'a ScoreMatrix,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
        second: Option<f64>,
    }

    impl Search<'_> {
        fn visit(&mut self, partial: f64) {
            let row = self.current.len();
            if row == self.s.rows {
                match &self.best {
                    Some((b, _)) if partial <= *b => {
                        self.second = Some(self.second.map_or(partial, |s| s.max(partial)));
                    }
                    Some((b, _)) => {
                        let b = *b;
                        self.second = Some(self.second.map_or(b, |s| s.max(b)));
                        self.best = Some((partial, self.current.clone()));
                    }
                    None => self.best = Some((partial, self.current.clone())),
                }
                return;
            }
            for c in 0..self.s.cols {
                if !self.used[c] {
                    self.used[c] = true;
                    self.current.push(c);
                    self.visit(partial + self.s.get(row, c));
                    self.current.pop();
                    self.used[c] = false;
                }
            }
        }
    }

    let mut search = Search {
        s,
        used: vec![false; s.cols],
        current: Vec::with_capacity(s.rows),
        best: None,
        second: None,
    };
    search.visit(0.0);
    let (objective, cols) = search.best.expect("at least one injective map exists");
    Ok(ExactSolution {
        assignment: Assignment {
            matching: UniverseMatching::new(cols, s.cols).expect("enumerated map is injective"),
            objective,
        },
        second_best: search.second,
    })
}
