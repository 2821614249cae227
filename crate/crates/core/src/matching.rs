//! Matching matrices, cycle-consistency checks and the universe factorization.
//!
//! Both matching kinds are stored sparsely as one optional column index per
//! row, so a matching between two graphs with `m` nodes costs `O(m)` memory
//! regardless of the column count.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid matching matrix: {0}")]
    Invalid(String),
    #[error("collection is missing the pairwise matching ({0}, {1})")]
    Incomplete(usize, usize),
    #[error("cannot factorize: class {class:?} {reason}")]
    Factorization {
        /// Offending class as `(graph, node)` members.
        class: Vec<(usize, usize)>,
        reason: String,
    },
}

/// Binary `m x n` matrix with at most one nonzero per row and per column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialPermutation {
    cols: usize,
    rows: Vec<Option<usize>>,
}

impl PartialPermutation {
    pub fn new(rows: Vec<Option<usize>>, cols: usize) -> Result<Self, MatchingError> {
        let mut used = vec![false; cols];
        for (r, c) in rows.iter().enumerate() {
            if let Some(c) = *c {
                if c >= cols {
                    return Err(MatchingError::Invalid(format!(
                        "row {r} points at column {c} of {cols}"
                    )));
                }
                if std::mem::replace(&mut used[c], true) {
                    return Err(MatchingError::Invalid(format!("column {c} used twice")));
                }
            }
        }
        Ok(Self { cols, rows })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            rows: vec![None; rows],
        }
    }

    pub fn identity(m: usize) -> Self {
        Self {
            cols: m,
            rows: (0..m).map(Some).collect(),
        }
    }

    /// Builds from a dense 0/1 matrix given row by row.
    pub fn from_dense(dense: &[Vec<u8>], cols: usize) -> Result<Self, MatchingError> {
        let mut rows = Vec::with_capacity(dense.len());
        for (r, row) in dense.iter().enumerate() {
            if row.len() != cols {
                return Err(MatchingError::Dimension(format!(
                    "row {r} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            let mut hit = None;
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 if hit.is_none() => hit = Some(c),
                    1 => return Err(MatchingError::Invalid(format!("row {r} has two ones"))),
                    _ => return Err(MatchingError::Invalid(format!("entry ({r},{c}) = {v}"))),
                }
            }
            rows.push(hit);
        }
        Self::new(rows, cols)
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|c| {
                let mut row = vec![0u8; self.cols];
                if let Some(c) = *c {
                    row[c] = 1;
                }
                row
            })
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize) -> Option<usize> {
        self.rows[row]
    }

    pub fn entries(&self) -> &[Option<usize>] {
        &self.rows
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rows[row] == Some(col)
    }

    /// Number of ones.
    pub fn nnz(&self) -> usize {
        self.rows.iter().filter(|c| c.is_some()).count()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![None; self.cols];
        for (r, c) in self.rows.iter().enumerate() {
            if let Some(c) = *c {
                rows[c] = Some(r);
            }
        }
        Self {
            cols: self.rows.len(),
            rows,
        }
    }

    /// Matrix product `self * other`; again a partial permutation.
    pub fn compose(&self, other: &Self) -> Result<Self, MatchingError> {
        if self.cols != other.n_rows() {
            return Err(MatchingError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows(),
                self.cols,
                other.n_rows(),
                other.cols
            )));
        }
        Ok(Self {
            cols: other.cols,
            rows: self.rows.iter().map(|c| c.and_then(|c| other.rows[c])).collect(),
        })
    }

    /// Elementwise `self <= other`.
    pub fn is_dominated_by(&self, other: &Self) -> bool {
        self.rows.len() == other.rows.len()
            && self.cols == other.cols
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.is_none() || a == b)
    }

    /// True when every row and every column carries exactly one entry.
    pub fn is_full_permutation(&self) -> bool {
        self.rows.len() == self.cols && self.rows.iter().all(Option::is_some)
    }
}

/// Object-to-universe matching: every node maps to exactly one universe
/// point, no universe point is hit twice.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UniverseMatching {
    universe: usize,
    assignment: Vec<usize>,
}

impl UniverseMatching {
    pub fn new(assignment: Vec<usize>, universe: usize) -> Result<Self, MatchingError> {
        if assignment.len() > universe {
            return Err(MatchingError::Dimension(format!(
                "{} nodes cannot map injectively into {universe} universe points",
                assignment.len()
            )));
        }
        PartialPermutation::new(assignment.iter().copied().map(Some).collect(), universe)?;
        Ok(Self {
            universe,
            assignment,
        })
    }

    pub fn from_dense(dense: &[Vec<u8>], universe: usize) -> Result<Self, MatchingError> {
        let p = PartialPermutation::from_dense(dense, universe)?;
        let assignment = p
            .entries()
            .iter()
            .enumerate()
            .map(|(r, c)| c.ok_or_else(|| MatchingError::Invalid(format!("row {r} is empty"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(assignment, universe)
    }

    pub fn n_rows(&self) -> usize {
        self.assignment.len()
    }

    pub fn universe_size(&self) -> usize {
        self.universe
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn column_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    /// Inverse map: universe column -> row, if the column is used.
    pub fn row_of_column(&self) -> Vec<Option<usize>> {
        let mut inv = vec![None; self.universe];
        for (r, &c) in self.assignment.iter().enumerate() {
            inv[c] = Some(r);
        }
        inv
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.as_partial().to_dense()
    }

    pub fn as_partial(&self) -> PartialPermutation {
        PartialPermutation {
            cols: self.universe,
            rows: self.assignment.iter().copied().map(Some).collect(),
        }
    }
}

/// `X_i X_j^T`: row `a` of graph `i` matches row `b` of graph `j` iff both
/// sit on the same universe point.
pub fn pairwise_from_universe(
    xi: &UniverseMatching,
    xj: &UniverseMatching,
) -> Result<PartialPermutation, MatchingError> {
    if xi.universe != xj.universe {
        return Err(MatchingError::Dimension(format!(
            "universe sizes differ: {} vs {}",
            xi.universe, xj.universe
        )));
    }
    let inv = xj.row_of_column();
    Ok(PartialPermutation {
        cols: xj.n_rows(),
        rows: xi.assignment.iter().map(|&c| inv[c]).collect(),
    })
}

/// Pairwise matchings between `k` graphs, keyed by ordered pair.
#[derive(Debug, Clone, Default)]
pub struct MatchingCollection {
    sizes: Vec<usize>,
    pairwise: HashMap<(usize, usize), PartialPermutation>,
}

impl MatchingCollection {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self {
            sizes,
            pairwise: HashMap::new(),
        }
    }

    /// Every ordered pair (including `(i, i)`) from universe matchings.
    pub fn from_universe(matchings: &[UniverseMatching]) -> Result<Self, MatchingError> {
        let mut c = Self::new(matchings.iter().map(UniverseMatching::n_rows).collect());
        for (i, xi) in matchings.iter().enumerate() {
            for (j, xj) in matchings.iter().enumerate() {
                c.insert(i, j, pairwise_from_universe(xi, xj)?)?;
            }
        }
        Ok(c)
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn insert(&mut self, i: usize, j: usize, x: PartialPermutation) -> Result<(), MatchingError> {
        let (Some(&mi), Some(&mj)) = (self.sizes.get(i), self.sizes.get(j)) else {
            return Err(MatchingError::Dimension(format!(
                "pair ({i}, {j}) outside a collection of {} graphs",
                self.k()
            )));
        };
        if x.n_rows() != mi || x.n_cols() != mj {
            return Err(MatchingError::Dimension(format!(
                "pair ({i}, {j}) must be {mi}x{mj}, got {}x{}",
                x.n_rows(),
                x.n_cols()
            )));
        }
        self.pairwise.insert((i, j), x);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Result<&PartialPermutation, MatchingError> {
        self.pairwise.get(&(i, j)).ok_or(MatchingError::Incomplete(i, j))
    }

    fn ensure_complete(&self) -> Result<(), MatchingError> {
        for i in 0..self.k() {
            for j in 0..self.k() {
                self.get(i, j)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub identity_violations: Vec<usize>,
    pub symmetry_violations: Vec<(usize, usize)>,
    pub transitivity_violations: Vec<(usize, usize, usize)>,
    pub is_consistent: bool,
}

/// Checks identity, symmetry and partial transitivity over all graphs,
/// pairs and ordered triples.
pub fn check_cycle_consistency(c: &MatchingCollection) -> Result<ConsistencyReport, MatchingError> {
    c.ensure_complete()?;
    let k = c.k();
    let mut report = ConsistencyReport::default();
    for i in 0..k {
        if *c.get(i, i)? != PartialPermutation::identity(c.sizes[i]) {
            report.identity_violations.push(i);
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if *c.get(i, j)? != c.get(j, i)?.transpose() {
                report.symmetry_violations.push((i, j));
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            let xij = c.get(i, j)?;
            for l in 0..k {
                if !xij.compose(c.get(j, l)?)?.is_dominated_by(c.get(i, l)?) {
                    report.transitivity_violations.push((i, j, l));
                }
            }
        }
    }
    report.is_consistent = report.identity_violations.is_empty()
        && report.symmetry_violations.is_empty()
        && report.transitivity_violations.is_empty();
    Ok(report)
}

/// Whether any cycle-consistency condition fails among the graphs of
/// `members` (identity of each, symmetry of each pair, transitivity of each
/// ordered triple drawn from the set).
pub fn subset_violated(c: &MatchingCollection, members: &[usize]) -> Result<bool, MatchingError> {
    for &i in members {
        if *c.get(i, i)? != PartialPermutation::identity(c.sizes[i]) {
            return Ok(true);
        }
        for &j in members {
            if *c.get(i, j)? != c.get(j, i)?.transpose() {
                return Ok(true);
            }
            for &l in members {
                if !c.get(i, j)?.compose(c.get(j, l)?)?.is_dominated_by(c.get(i, l)?) {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index becomes the root so roots are class minima.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Recovers universe matchings from a cycle-consistent pairwise collection.
///
/// Classes are the connected components of the union of all match edges.
/// Columns are ordered by each class's smallest `(graph, node)` member.
pub fn factorize_pairwise(c: &MatchingCollection) -> Result<Vec<UniverseMatching>, MatchingError> {
    c.ensure_complete()?;
    let k = c.k();
    let offsets: Vec<usize> = c
        .sizes
        .iter()
        .scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        })
        .collect();
    let owner: Vec<(usize, usize)> = c
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(i, &m)| (0..m).map(move |a| (i, a)))
        .collect();
    let total = owner.len();

    let mut sets = DisjointSets::new(total);
    for i in 0..k {
        for j in 0..k {
            for (a, b) in c.get(i, j)?.entries().iter().enumerate() {
                if let Some(b) = *b {
                    sets.union(offsets[i] + a, offsets[j] + b);
                }
            }
        }
    }

    let mut column_of_root: HashMap<usize, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for g in 0..total {
        let root = sets.find(g);
        let col = *column_of_root.entry(root).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[col].push(g);
    }
    let d = members.len();

    let describe = |class: &[usize]| class.iter().map(|&g| owner[g]).collect::<Vec<_>>();
    for class in &members {
        let mut seen = vec![false; k];
        for &g in class {
            let (graph, _) = owner[g];
            if std::mem::replace(&mut seen[graph], true) {
                return Err(MatchingError::Factorization {
                    class: describe(class),
                    reason: format!("holds two nodes of graph {graph}"),
                });
            }
        }
    }

    let mut result = Vec::with_capacity(k);
    for i in 0..k {
        let assignment = (0..c.sizes[i])
            .map(|a| column_of_root[&sets.find(offsets[i] + a)])
            .collect();
        result.push(UniverseMatching::new(assignment, d)?);
    }

    for i in 0..k {
        for j in 0..k {
            let expanded = pairwise_from_universe(&result[i], &result[j])?;
            let given = c.get(i, j)?;
            if expanded != *given {
                let a = (0..c.sizes[i])
                    .find(|&a| expanded.get(a) != given.get(a))
                    .unwrap_or(0);
                let class = &members[result[i].column_of(a)];
                return Err(MatchingError::Factorization {
                    class: describe(class),
                    reason: format!("is not reproduced by pair ({i}, {j}); input is not cycle-consistent"),
                });
            }
        }
    }
    Ok(result)
}
