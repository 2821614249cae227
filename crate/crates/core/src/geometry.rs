//! Keypoint graphs: Delaunay structure, relative-location edge attributes
//! and normalized pseudo-coordinates for spline convolution.

use std::collections::HashMap;

use ndarray::Array2;
use robust::{incircle, orient2d, Coord};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid labels: {0}")]
    Labels(String),
    #[error("invalid edge ({0}, {1})")]
    Edge(usize, usize),
}

/// A keypoint graph. Edges are undirected with `a < b`; message passing
/// uses both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    coords: Vec<[f64; 2]>,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph whose structure is the Delaunay triangulation of
    /// `coords`.
    pub fn new(
        coords: Vec<[f64; 2]>,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, GeometryError> {
        let edges = delaunay_edges(&coords);
        Self::with_edges(coords, features, labels, edges)
    }

    pub fn with_edges(
        coords: Vec<[f64; 2]>,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GeometryError> {
        let m = coords.len();
        if features.nrows() != m {
            return Err(GeometryError::Dimension(format!(
                "{m} coordinates but {} feature rows",
                features.nrows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != m {
                return Err(GeometryError::Labels(format!("{} labels for {m} nodes", l.len())));
            }
            let mut seen = std::collections::HashSet::with_capacity(m);
            if let Some(dup) = l.iter().find(|x| !seen.insert(**x)) {
                return Err(GeometryError::Labels(format!("label {dup} repeated")));
            }
        }
        let mut norm = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b || a >= m || b >= m {
                return Err(GeometryError::Edge(a, b));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        Ok(Self {
            coords,
            features,
            labels,
            edges: norm,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Undirected edges, `a < b`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Both directions of every edge: `(a, b), (b, a), ...`.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect()
    }

    /// Relative location `p_w - p_v` for each directed edge `(v, w)`.
    pub fn edge_attr(&self) -> Vec<[f64; 2]> {
        self.directed_edges()
            .into_iter()
            .map(|(v, w)| {
                [
                    self.coords[w][0] - self.coords[v][0],
                    self.coords[w][1] - self.coords[v][1],
                ]
            })
            .collect()
    }

    /// Checks every label is below the universe size `d`.
    pub fn check_labels(&self, d: usize) -> Result<(), GeometryError> {
        match &self.labels {
            Some(l) => match l.iter().find(|&&x| x >= d) {
                Some(bad) => Err(GeometryError::Labels(format!("label {bad} >= universe size {d}"))),
                None => Ok(()),
            },
            None => Err(GeometryError::Labels("graph is unlabeled".into())),
        }
    }

    /// Reorders nodes: node `i` of the result is node `perm[i]` of `self`.
    /// Edges are carried over (not recomputed).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.n_nodes();
        assert_eq!(perm.len(), m);
        let mut inv = vec![0; m];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let coords = perm.iter().map(|&p| self.coords[p]).collect();
        let features = self.features.select(ndarray::Axis(0), perm);
        let labels = self.labels.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect());
        let edges = self.edges.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        Self::with_edges(coords, features, labels, edges).expect("permutation keeps a valid graph")
    }

    /// Keeps the listed nodes in the given order and recomputes the
    /// Delaunay structure on them.
    pub fn subgraph(&self, keep: &[usize]) -> Self {
        let coords = keep.iter().map(|&i| self.coords[i]).collect();
        let features = self.features.select(ndarray::Axis(0), keep);
        let labels = self.labels.as_ref().map(|l| keep.iter().map(|&i| l[i]).collect());
        Self::new(coords, features, labels).expect("subset of a valid graph")
    }
}

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

/// Delaunay edges of a point set, `a < b`, sorted.
///
/// * fewer than two points: no edges; two points: one edge
/// * all points collinear: a chain through the points sorted along the axis
///   of larger extent
/// * cocircular quadruples: the diagonal with the lexicographically smaller
///   endpoint pair
///
/// Exactly duplicated points keep only their first occurrence in the
/// triangulation; the copies are isolated.
pub fn delaunay_edges(coords: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let m = coords.len();
    match m {
        0 | 1 => return Vec::new(),
        2 => return vec![(0, 1)],
        _ => {}
    }
    if all_collinear(coords) {
        return collinear_chain(coords);
    }
    let points: Vec<delaunator::Point> = coords
        .iter()
        .map(|p| delaunator::Point { x: p[0], y: p[1] })
        .collect();
    let tri = delaunator::triangulate(&points);
    let mut triangles: Vec<[usize; 3]> = tri
        .triangles
        .chunks_exact(3)
        .map(|t| {
            let (a, b, c) = (t[0], t[1], t[2]);
            if orient2d(coord(coords[a]), coord(coords[b]), coord(coords[c])) > 0.0 {
                [a, b, c]
            } else {
                [a, c, b]
            }
        })
        .filter(|t| orient2d(coord(coords[t[0]]), coord(coords[t[1]]), coord(coords[t[2]])) > 0.0)
        .collect();
    if triangles.is_empty() {
        return collinear_chain(coords);
    }
    legalize(coords, &mut triangles);

    let mut edges: Vec<(usize, usize)> = triangles
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn all_collinear(coords: &[[f64; 2]]) -> bool {
    let first = coords[0];
    let Some(second) = coords.iter().copied().find(|p| *p != first) else {
        return true;
    };
    coords
        .iter()
        .all(|&p| orient2d(coord(first), coord(second), coord(p)) == 0.0)
}

fn collinear_chain(coords: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in coords {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let major = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
    let minor = 1 - major;
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| {
        coords[a][major]
            .total_cmp(&coords[b][major])
            .then(coords[a][minor].total_cmp(&coords[b][minor]))
            .then(a.cmp(&b))
    });
    let mut edges: Vec<(usize, usize)> = order
        .windows(2)
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .collect();
    edges.sort_unstable();
    edges
}

/// Lawson flips with exact predicates until every interior edge is locally
/// Delaunay; cocircular quadrilaterals take the lexicographically smaller
/// diagonal.
fn legalize(coords: &[[f64; 2]], triangles: &mut [[usize; 3]]) {
    let c = |i: usize| coord(coords[i]);
    let max_sweeps = 4 * coords.len() + 16;
    for _ in 0..max_sweeps {
        // Directed edge (a, b) -> (triangle, opposite vertex); triangles are
        // counter-clockwise so each interior edge appears once per direction.
        let mut half: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(triangles.len() * 3);
        for (ti, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                half.insert((t[k], t[(k + 1) % 3]), (ti, t[(k + 2) % 3]));
            }
        }
        let mut keys: Vec<(usize, usize)> = half.keys().copied().filter(|(a, b)| a < b).collect();
        keys.sort_unstable();
        let mut touched = vec![false; triangles.len()];
        let mut flipped = false;
        for (a, b) in keys {
            let (Some(&(t1, cv)), Some(&(t2, dv))) = (half.get(&(a, b)), half.get(&(b, a))) else {
                continue;
            };
            if touched[t1] || touched[t2] {
                continue;
            }
            // t1 = (a, b, cv) and t2 = (b, a, dv), both counter-clockwise.
            let inside = incircle(c(a), c(b), c(cv), c(dv));
            let flip = if inside > 0.0 {
                true
            } else if inside == 0.0 {
                (cv.min(dv), cv.max(dv)) < (a, b)
            } else {
                false
            };
            if !flip {
                continue;
            }
            // Only convex quadrilaterals can be flipped.
            if orient2d(c(dv), c(cv), c(a)) <= 0.0 || orient2d(c(cv), c(dv), c(b)) <= 0.0 {
                continue;
            }
            triangles[t1] = [cv, a, dv];
            triangles[t2] = [dv, b, cv];
            touched[t1] = true;
            touched[t2] = true;
            flipped = true;
        }
        if !flipped {
            return;
        }
    }
}

/// Per-directed-edge pseudo-coordinates in `[0, 1]^dims`, row-major
/// `E x dims`, edge order as [`Graph::directed_edges`].
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCoords {
    pub dims: usize,
    pub values: Array2<f64>,
}

/// Graph-local normalization scale: the largest `|dx|` or `|dy|` over all
/// edges, or 1 when that is zero.
pub fn pseudo_scale(graph: &Graph) -> f64 {
    let r = graph
        .edge_attr()
        .iter()
        .fold(0.0f64, |acc, d| acc.max(d[0].abs()).max(d[1].abs()));
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Maps an offset to `[0, 1]`: `clamp(delta / (2R) + 0.5, 0, 1)`.
#[inline]
pub fn normalize_offset(delta: f64, scale: f64) -> f64 {
    (delta / (2.0 * scale) + 0.5).clamp(0.0, 1.0)
}

/// 2-D pseudo-coordinates, or 3-D when a per-node virtual coordinate `z` is
/// given. The scale comes from the 2-D offsets only.
pub fn pseudo_coords(graph: &Graph, z: Option<&[f64]>) -> Result<PseudoCoords, GeometryError> {
    if let Some(z) = z {
        if z.len() != graph.n_nodes() {
            return Err(GeometryError::Dimension(format!(
                "{} virtual coordinates for {} nodes",
                z.len(),
                graph.n_nodes()
            )));
        }
    }
    let scale = pseudo_scale(graph);
    let dims = if z.is_some() { 3 } else { 2 };
    let directed = graph.directed_edges();
    let attr = graph.edge_attr();
    let mut values = Array2::zeros((directed.len(), dims));
    for (e, ((v, w), d)) in directed.iter().zip(&attr).enumerate() {
        values[[e, 0]] = normalize_offset(d[0], scale);
        values[[e, 1]] = normalize_offset(d[1], scale);
        if let Some(z) = z {
            values[[e, 2]] = normalize_offset(z[*w] - z[*v], scale);
        }
    }
    Ok(PseudoCoords { dims, values })
}
