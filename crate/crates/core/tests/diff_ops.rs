use std::sync::Arc;

use ndarray::{arr2, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use univmatch::diff::{grad_check, DiffError, ParamStore, SplineGeometry, Tape, Tensor, Var};

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn store_of(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(*n, t.clone());
    }
    s
}

/// Contracts a tensor-valued output with fixed random weights so every
/// output coordinate contributes to the scalar.
fn contract(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, DiffError> {
    let (r, c) = tape.value(v).dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c))?;
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

const TOL: f64 = 1e-6;
const H: f64 = 1e-5;

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let z = t.constant(arr2(&[[0.0, 0.0, 0.0]])).unwrap();
    let s = t.row_softmax(z).unwrap();
    for v in t.value(s).iter() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let z = t.constant(arr2(&[[2f64.ln(), 0.0]])).unwrap();
    let s = t.row_softmax(z).unwrap();
    assert!((t.value(s)[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
    assert!((t.value(s)[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
    let z = t.constant(arr2(&[[1000.0, 0.0]])).unwrap();
    let s = t.row_softmax(z).unwrap();
    assert_eq!(t.value(s)[[0, 0]], 1.0);
    assert!(t.value(s)[[0, 1]] >= 0.0 && t.value(s)[[0, 1]] < 1e-300);
}

#[test]
fn square_sum_gradient() {
    let store = store_of(&[("x", arr2(&[[3.0]]))]);
    let mut t = Tape::new();
    let x = t.param("x", &store).unwrap();
    let sq = t.mul(x, x).unwrap();
    let l = t.sum(sq).unwrap();
    let g = t.backward(l, &store).unwrap();
    assert_eq!(g.get("x").unwrap()[[0, 0]], 6.0);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_target() {
    let z0 = arr2(&[[0.3, -1.2, 2.0, 0.1]]);
    let y = arr2(&[[0.0, 0.0, 1.0, 0.0]]);
    let store = store_of(&[("z", z0.clone())]);
    let mut t = Tape::new();
    let z = t.param("z", &store).unwrap();
    let s = t.row_softmax(z).unwrap();
    let ls = t.log(s, 1e-12).unwrap();
    let yc = t.constant(y.clone()).unwrap();
    let p = t.mul(ls, yc).unwrap();
    let sum = t.sum(p).unwrap();
    let loss = t.scale(sum, -1.0).unwrap();
    let g = t.backward(loss, &store).unwrap();
    let expect = t.value(s) - &y;
    for (a, b) in g.get("z").unwrap().iter().zip(expect.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn detached_and_unused_params_get_zero() {
    let store = store_of(&[("a", arr2(&[[2.0]])), ("unused", arr2(&[[1.0, 2.0]]))]);
    let mut t = Tape::new();
    let c = t.constant(store.get("a").unwrap().clone()).unwrap();
    let l = t.sum(c).unwrap();
    let g = t.backward(l, &store).unwrap();
    assert_eq!(g.get("a").unwrap()[[0, 0]], 0.0);
    assert_eq!(g.get("unused").unwrap(), &arr2(&[[0.0, 0.0]]));
}

#[test]
fn non_scalar_loss_rejected() {
    let store = ParamStore::new();
    let mut t = Tape::new();
    let c = t.constant(arr2(&[[1.0, 2.0]])).unwrap();
    assert!(matches!(t.backward(c, &store), Err(DiffError::NonScalarLoss(1, 2))));
}

#[test]
fn shape_and_nan_errors() {
    let mut t = Tape::new();
    let a = t.constant(arr2(&[[1.0, 2.0]])).unwrap();
    let b = t.constant(arr2(&[[1.0], [2.0], [3.0]])).unwrap();
    assert!(matches!(t.matmul(a, b), Err(DiffError::Shape { .. })));
    assert!(matches!(t.add(a, b), Err(DiffError::Shape { .. })));
    let z = t.constant(arr2(&[[0.0]])).unwrap();
    let big = t.constant(arr2(&[[f64::MAX]])).unwrap();
    assert!(matches!(t.scale(big, 10.0), Err(DiffError::NonFinite(_))));
    let _ = z;
}

#[test]
fn grad_check_quadratic_and_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let store = store_of(&[("x", random(&mut rng, 1, 10))]);
    let quad = |t: &mut Tape, s: &ParamStore| {
        let x = t.param("x", s)?;
        let sq = t.mul(x, x)?;
        let half = t.scale(sq, 0.5)?;
        let lin = t.add(half, x)?;
        t.sum(lin)
    };
    assert!(grad_check(quad, &store, 1e-5).unwrap() < 1e-8);
    let constant = |t: &mut Tape, _: &ParamStore| t.constant(arr2(&[[4.2]]));
    assert_eq!(grad_check(constant, &store, 1e-5).unwrap(), 0.0);
}

#[test]
fn every_primitive_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let store = store_of(&[
        ("a", random(&mut rng, 3, 4)),
        ("b", random(&mut rng, 4, 2)),
        ("c", random(&mut rng, 3, 4)),
        ("r", random(&mut rng, 1, 4)),
        ("p", random(&mut rng, 3, 4).mapv(|v| v.abs() + 0.1)),
    ]);
    type Case = fn(&mut Tape, &ParamStore) -> Result<Var, DiffError>;
    let cases: Vec<(&str, Case)> = vec![
        ("matmul", |t, s| {
            let (a, b) = (t.param("a", s)?, t.param("b", s)?);
            let v = t.matmul(a, b)?;
            contract(t, v, 1)
        }),
        ("matmul_nt", |t, s| {
            let (a, c) = (t.param("a", s)?, t.param("c", s)?);
            let v = t.matmul_nt(a, c)?;
            contract(t, v, 2)
        }),
        ("add_sub", |t, s| {
            let (a, c) = (t.param("a", s)?, t.param("c", s)?);
            let v = t.add(a, c)?;
            let w = t.sub(v, c)?;
            let w = t.sub(w, a)?;
            let w = t.add(w, c)?;
            contract(t, w, 3)
        }),
        ("add_row", |t, s| {
            let (a, r) = (t.param("a", s)?, t.param("r", s)?);
            let v = t.add_row(a, r)?;
            contract(t, v, 4)
        }),
        ("mul_scale_add_scalar", |t, s| {
            let (a, c) = (t.param("a", s)?, t.param("c", s)?);
            let v = t.mul(a, c)?;
            let v = t.scale(v, -1.7)?;
            let v = t.add_scalar(v, 0.3)?;
            contract(t, v, 5)
        }),
        ("relu", |t, s| {
            let a = t.param("a", s)?;
            let v = t.relu(a)?;
            contract(t, v, 6)
        }),
        ("tanh", |t, s| {
            let a = t.param("a", s)?;
            let v = t.tanh(a)?;
            contract(t, v, 7)
        }),
        ("row_softmax", |t, s| {
            let a = t.param("a", s)?;
            let v = t.row_softmax(a)?;
            contract(t, v, 8)
        }),
        ("log", |t, s| {
            let p = t.param("p", s)?;
            let v = t.log(p, 1e-12)?;
            contract(t, v, 9)
        }),
        ("clamp", |t, s| {
            let a = t.param("a", s)?;
            let v = t.clamp(a, -0.5, 0.5)?;
            contract(t, v, 10)
        }),
        ("sum_mean", |t, s| {
            let a = t.param("a", s)?;
            let sq = t.mul(a, a)?;
            let m = t.mean(sq)?;
            let su = t.sum(a)?;
            t.add(m, su)
        }),
        ("gather_rows", |t, s| {
            let a = t.param("a", s)?;
            let v = t.gather_rows(a, &[2, 0, 2, 1])?;
            contract(t, v, 11)
        }),
        ("concat_transpose", |t, s| {
            let (a, c) = (t.param("a", s)?, t.param("c", s)?);
            let v = t.concat_cols(&[a, c, a])?;
            let v = t.transpose(v)?;
            contract(t, v, 12)
        }),
        ("dropout", |t, s| {
            let a = t.param("a", s)?;
            let keep = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) % 3 != 0);
            let v = t.dropout(a, &keep, 0.35)?;
            contract(t, v, 13)
        }),
    ];
    for (name, f) in cases {
        let err = grad_check(f, &store, H).unwrap();
        assert!(err < TOL, "{name}: relative error {err}");
    }
}

fn spline_setup(dims: usize, knots: usize, seed: u64) -> (ParamStore, Arc<SplineGeometry>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = vec![(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0), (3, 0)];
    let geo = SplineGeometry::new(4, edges.clone());
    // Keep pseudo-coordinates away from knots so central differences stay
    // on one linear piece.
    let pseudo = Array2::from_shape_fn((edges.len(), dims), |_| {
        let cell = rng.random_range(0..knots - 1) as f64;
        (cell + rng.random_range(0.2..0.8)) / (knots - 1) as f64
    });
    let store = store_of(&[
        ("x", random(&mut rng, 4, 3)),
        ("k", random(&mut rng, knots.pow(dims as u32) * 3, 2)),
        ("u", pseudo),
    ]);
    (store, geo)
}

#[test]
fn spline_message_grad_check_2d_and_3d() {
    for (dims, knots) in [(2, 5), (3, 3), (1, 2)] {
        let (store, geo) = spline_setup(dims, knots, 11 + dims as u64);
        let f = move |t: &mut Tape, s: &ParamStore| {
            let x = t.param("x", s)?;
            let k = t.param("k", s)?;
            let u = t.param("u", s)?;
            let v = t.spline_message(x, k, u, &geo, knots)?;
            contract(t, v, 99)
        };
        let err = grad_check(f, &store, H).unwrap();
        assert!(err < TOL, "dims {dims}: relative error {err}");
    }
}

#[test]
fn spline_message_single_edge_values() {
    let geo = SplineGeometry::new(2, vec![(0, 1)]);
    let mut t = Tape::new();
    let x = t.constant(arr2(&[[0.0], [1.0]])).unwrap();
    // k = 2, dims = 2: four 1x1 cells, index = g0 + 2 g1.
    let kernel = t.constant(arr2(&[[2.0], [4.0], [0.0], [0.0]])).unwrap();
    let u = t.constant(arr2(&[[0.0, 0.0]])).unwrap();
    let out = t.spline_message(x, kernel, u, &geo, 2).unwrap();
    assert_eq!(t.value(out), &arr2(&[[2.0], [0.0]]));
    let u = t.constant(arr2(&[[0.5, 0.0]])).unwrap();
    let out = t.spline_message(x, kernel, u, &geo, 2).unwrap();
    assert_eq!(t.value(out), &arr2(&[[3.0], [0.0]]));
}

#[test]
fn spline_message_shape_errors() {
    let geo = SplineGeometry::new(2, vec![(0, 1)]);
    let mut t = Tape::new();
    let x = t.constant(arr2(&[[0.0], [1.0]])).unwrap();
    let kernel = t.constant(Array2::zeros((4, 1))).unwrap();
    let u3 = t.constant(arr2(&[[0.0, 0.0, 0.0]])).unwrap();
    assert!(t.spline_message(x, kernel, u3, &geo, 2).is_err());
    let u = t.constant(arr2(&[[0.0, 0.0], [0.0, 0.0]])).unwrap();
    assert!(t.spline_message(x, kernel, u, &geo, 2).is_err());
}

#[test]
fn softmax_rows_normalized_and_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let z = random(&mut rng, 5, 9).mapv(|v| v * 30.0);
        let mut t = Tape::new();
        let zv = t.constant(z).unwrap();
        let s = t.row_softmax(zv).unwrap();
        for row in t.value(s).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}
