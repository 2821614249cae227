use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{s, Axis};

use super::spline::{corners, Corner, SplineGeometry};
use super::{DiffError, Gradients, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    RowSoftmax(Var),
    Log { x: Var, floor: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Dropout(Var, Tensor),
    Transpose(Var),
    Spline(Box<SplineRecord>),
}

#[derive(Debug)]
struct SplineRecord {
    x: Var,
    kernel: Var,
    pseudo: Var,
    geometry: Arc<SplineGeometry>,
    corners: Vec<Corner>,
    /// Per kernel cell: indices into `corners` (corner `c` belongs to edge
    /// `c >> dims`).
    groups: Vec<Vec<usize>>,
    dims: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward pass. Not shared across threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.dim() != b.dim() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, DiffError> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, DiffError> {
        self.push(t, Op::Constant, "constant")
    }

    /// Leaf bound to a named parameter; repeated calls return the same var.
    pub fn param(&mut self, name: &str, store: &ParamStore) -> Result<Var, DiffError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = self.push(t, Op::Param, "param")?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", x.dim(), y.dim())));
        }
        let out = x.dot(y);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.ncols() {
            return Err(shape_err("matmul_nt", format!("{:?} x {:?}^T", x.dim(), y.dim())));
        }
        let out = x.dot(&y.t());
        self.push(out, Op::MatMulNt(a, b), "matmul_nt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.nrows() != 1 || r.ncols() != x.ncols() {
            return Err(shape_err("add_row", format!("{:?} + row {:?}", x.dim(), r.dim())));
        }
        let out = x + r;
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let out = self.value(a) + c;
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    /// Softmax of each row; the row maximum is subtracted first.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        self.push(out, Op::RowSoftmax(a), "row_softmax")
    }

    /// `ln(max(x, floor))`; zero gradient below the floor.
    pub fn log(&mut self, a: Var, floor: f64) -> Result<Var, DiffError> {
        let out = self.value(a).mapv(|x| x.max(floor).ln());
        self.push(out, Op::Log { x: a, floor }, "log")
    }

    /// Clamp into `[lo, hi]`; gradient passes only inside the closed interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, DiffError> {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp { x: a, lo, hi }, "clamp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let out = Tensor::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(out, Op::Mean(a), "mean")
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, DiffError> {
        let x = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= x.nrows()) {
            return Err(shape_err("gather_rows", format!("row {r} of {}", x.nrows())));
        }
        let out = x.select(Axis(0), rows);
        self.push(out, Op::GatherRows(a, rows.to_vec()), "gather_rows")
    }

    /// Concatenates along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| shape_err("concat_cols", e.to_string()))?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Inverted dropout with a pre-sampled keep mask (`true` = keep).
    /// Kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: Var, keep: &ndarray::Array2<bool>, rate: f64) -> Result<Var, DiffError> {
        let x = self.value(a);
        if keep.dim() != x.dim() {
            return Err(shape_err("dropout", format!("mask {:?} vs {:?}", keep.dim(), x.dim())));
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(shape_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let factor = 1.0 / (1.0 - rate);
        let mask = keep.mapv(|k| if k { factor } else { 0.0 });
        let out = x * &mask;
        self.push(out, Op::Dropout(a, mask), "dropout")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).t().as_standard_layout().into_owned();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Spline-kernel message aggregation:
    /// `out[v] = 1/max(1,|N(v)|) * sum_{(v,w)} K(u_vw) x[w]` where
    /// `K(u) = sum_g B_g(u) Theta_g` over a tensor-product hat basis.
    ///
    /// `kernel` stacks the `knots^dims` cell matrices `Theta_g`
    /// (`c_in x c_out` each) along rows, cell index with the first pseudo
    /// dimension varying fastest. `pseudo` is `E x dims`, one row per edge.
    pub fn spline_message(
        &mut self,
        x: Var,
        kernel: Var,
        pseudo: Var,
        geometry: &Arc<SplineGeometry>,
        knots: usize,
    ) -> Result<Var, DiffError> {
        let (xv, kv, pv) = (self.value(x), self.value(kernel), self.value(pseudo));
        let dims = pv.ncols();
        if !(1..=3).contains(&dims) || knots < 2 {
            return Err(shape_err("spline_message", format!("dims {dims}, knots {knots}")));
        }
        let cells = knots.pow(dims as u32);
        let c_in = xv.ncols();
        if xv.nrows() != geometry.n_nodes
            || pv.nrows() != geometry.edges.len()
            || kv.nrows() != cells * c_in
        {
            return Err(shape_err(
                "spline_message",
                format!(
                    "x {:?}, kernel {:?}, pseudo {:?} for {} nodes / {} edges / {cells} cells",
                    xv.dim(),
                    kv.dim(),
                    pv.dim(),
                    geometry.n_nodes,
                    geometry.edges.len()
                ),
            ));
        }
        let c_out = kv.ncols();

        let mut all = Vec::with_capacity(geometry.edges.len() << dims);
        let mut u = [0.0; 3];
        for row in pv.rows() {
            for (d, &val) in row.iter().enumerate() {
                u[d] = val;
            }
            corners(&u[..dims], knots, &mut all);
        }
        let mut groups = vec![Vec::new(); cells];
        for (ci, c) in all.iter().enumerate() {
            groups[c.kernel].push(ci);
        }

        let mut out = Tensor::zeros((geometry.n_nodes, c_out));
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let sources: Vec<usize> = members.iter().map(|&ci| geometry.edges[ci >> dims].1).collect();
            let theta = kv.slice(s![g * c_in..(g + 1) * c_in, ..]);
            let y = xv.select(Axis(0), &sources).dot(&theta);
            for (row, &ci) in members.iter().enumerate() {
                let v = geometry.edges[ci >> dims].0;
                let w = all[ci].weight * geometry.inv_degree[v];
                if w != 0.0 {
                    out.row_mut(v).scaled_add(w, &y.row(row));
                }
            }
        }
        let record = SplineRecord {
            x,
            kernel,
            pseudo,
            geometry: Arc::clone(geometry),
            corners: all,
            groups,
            dims,
        };
        self.push(out, Op::Spline(Box::new(record)), "spline_message")
    }

    /// Reverse pass from a `1 x 1` loss. Every parameter in `store` gets an
    /// entry; parameters not reached by the loss get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients, DiffError> {
        let (r, c) = self.value(loss).dim();
        if (r, c) != (1, 1) {
            return Err(DiffError::NonScalarLoss(r, c));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones((1, 1)));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| {
                        if x <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gi, &y| *gi *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.sum();
                        grow.zip_mut_with(&yrow, |gi, &yi| *gi -= yi * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Log { x, floor } => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*x), |gi, &xi| {
                        *gi = if xi >= *floor { *gi / xi } else { 0.0 }
                    });
                    acc(&mut grads, *x, ga);
                }
                Op::Clamp { x, lo, hi } => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*x), |gi, &xi| {
                        if xi < *lo || xi > *hi {
                            *gi = 0.0
                        }
                    });
                    acc(&mut grads, *x, ga);
                }
                Op::Sum(a) => {
                    let ga = Tensor::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let ga = Tensor::from_elem(x.dim(), g[[0, 0]] / x.len() as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Tensor::zeros(self.value(*a).dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Dropout(a, mask) => acc(&mut grads, *a, g * mask),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().as_standard_layout().into_owned()),
                Op::Spline(rec) => {
                    let (gx, gk, gp) = self.spline_backward(rec, &g);
                    acc(&mut grads, rec.x, gx);
                    acc(&mut grads, rec.kernel, gk);
                    acc(&mut grads, rec.pseudo, gp);
                }
            }
        }

        let mut out = Gradients::default();
        for (name, t) in store.iter() {
            let g = self
                .params
                .get(name)
                .and_then(|v| grads.get(v.0).and_then(|g| g.clone()))
                .unwrap_or_else(|| Tensor::zeros(t.dim()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn spline_backward(&self, rec: &SplineRecord, g: &Tensor) -> (Tensor, Tensor, Tensor) {
        let xv = self.value(rec.x);
        let kv = self.value(rec.kernel);
        let geo = &rec.geometry;
        let dims = rec.dims;
        let c_in = xv.ncols();
        let mut gx = Tensor::zeros(xv.dim());
        let mut gk = Tensor::zeros(kv.dim());
        let mut gp = Tensor::zeros((geo.edges.len(), dims));

        for (cell, members) in rec.groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let sources: Vec<usize> = members.iter().map(|&ci| geo.edges[ci >> dims].1).collect();
            let targets: Vec<usize> = members.iter().map(|&ci| geo.edges[ci >> dims].0).collect();
            let theta = kv.slice(s![cell * c_in..(cell + 1) * c_in, ..]);
            let p = xv.select(Axis(0), &sources);
            let y = p.dot(&theta);
            // q[row] = g[v] / deg(v)
            let mut q = g.select(Axis(0), &targets);
            for (mut qrow, &v) in q.rows_mut().into_iter().zip(&targets) {
                qrow *= geo.inv_degree[v];
            }
            for (row, &ci) in members.iter().enumerate() {
                let c = &rec.corners[ci];
                let dw = y.row(row).dot(&q.row(row));
                let edge = ci >> dims;
                for d in 0..dims {
                    gp[[edge, d]] += dw * c.dweight[d];
                }
            }
            let mut bq = q;
            for (mut row, &ci) in bq.rows_mut().into_iter().zip(members) {
                row *= rec.corners[ci].weight;
            }
            let mut gk_cell = gk.slice_mut(s![cell * c_in..(cell + 1) * c_in, ..]);
            gk_cell += &p.t().dot(&bq);
            let gp_rows = bq.dot(&theta.t());
            for (row, &w) in sources.iter().enumerate() {
                let mut dst = gx.row_mut(w);
                dst += &gp_rows.row(row);
            }
        }
        (gx, gk, gp)
    }
}

/// Compares reverse-mode gradients of `f` with central differences of step
/// `h` over every coordinate of every parameter. Returns the largest
/// `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`.
pub fn grad_check<F>(f: F, store: &ParamStore, h: f64) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss, store)?;

    let eval = |s: &ParamStore| -> Result<f64, DiffError> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.scalar(l))
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let (rows, cols) = store.get(&name)?.dim();
        let ad = grads
            .get(&name)
            .ok_or_else(|| DiffError::MissingGradient(name.clone()))?
            .clone();
        for idx in (0..rows).flat_map(|r| (0..cols).map(move |c| [r, c])) {
            let orig = store.get(&name)?[idx];
            probe.get_mut(&name)?[idx] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(&name)?[idx] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(&name)?[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = ad[idx];
            let err = (g - fd).abs() / 1f64.max(g.abs()).max(fd.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
