use std::sync::Arc;

/// Degree-1 B-spline (hat) basis on `knots` uniform knots over `[0, 1]`.
///
/// Returns the lower active knot index, the weights of the two active
/// functions `[B_lo(u), B_lo+1(u)]` and the slope magnitude `knots - 1`
/// (`dB_lo/du = -slope`, `dB_lo+1/du = +slope`). At interior knots the
/// interval to the right is chosen, giving right derivatives.
pub fn hat_basis(u: f64, knots: usize) -> (usize, [f64; 2], f64) {
    debug_assert!(knots >= 2);
    let slope = (knots - 1) as f64;
    let t = u.clamp(0.0, 1.0) * slope;
    let lo = (t.floor() as usize).min(knots - 2);
    let frac = t - lo as f64;
    (lo, [1.0 - frac, frac], slope)
}

/// Directed message edges for spline convolution.
///
/// Edge `(v, w)` sends the features of `w` to `v`; each receiver averages
/// over its incoming edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGeometry {
    pub(crate) n_nodes: usize,
    pub(crate) edges: Vec<(usize, usize)>,
    pub(crate) inv_degree: Vec<f64>,
}

impl SplineGeometry {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>) -> Arc<Self> {
        let mut degree = vec![0usize; n_nodes];
        for &(v, w) in &edges {
            assert!(v < n_nodes && w < n_nodes, "edge ({v}, {w}) out of range");
            degree[v] += 1;
        }
        let inv_degree = degree.iter().map(|&d| 1.0 / d.max(1) as f64).collect();
        Arc::new(Self {
            n_nodes,
            edges,
            inv_degree,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// One active kernel cell of one edge.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Corner {
    pub kernel: usize,
    pub weight: f64,
    /// Partial derivatives of `weight` with respect to each pseudo-coordinate.
    pub dweight: [f64; 3],
}

/// Active corners for a pseudo-coordinate row, `2^dims` of them.
pub(crate) fn corners(u: &[f64], knots: usize, out: &mut Vec<Corner>) {
    let dims = u.len();
    let mut lo = [0usize; 3];
    let mut w = [[0.0f64; 2]; 3];
    let mut slope = 0.0;
    for (d, &ud) in u.iter().enumerate() {
        let (l, wd, s) = hat_basis(ud, knots);
        lo[d] = l;
        w[d] = wd;
        slope = s;
    }
    for bits in 0..(1usize << dims) {
        let mut kernel = 0;
        let mut stride = 1;
        let mut weight = 1.0;
        for d in 0..dims {
            let b = (bits >> d) & 1;
            kernel += (lo[d] + b) * stride;
            stride *= knots;
            weight *= w[d][b];
        }
        let mut dweight = [0.0; 3];
        for (d, slot) in dweight.iter_mut().enumerate().take(dims) {
            let b = (bits >> d) & 1;
            let mut p = if b == 0 { -slope } else { slope };
            for (e, we) in w.iter().enumerate().take(dims) {
                if e != d {
                    p *= we[(bits >> e) & 1];
                }
            }
            *slot = p;
        }
        out.push(Corner {
            kernel,
            weight,
            dweight,
        });
    }
}
