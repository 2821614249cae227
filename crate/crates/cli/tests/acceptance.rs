//! End-to-end acceptance checks, run in sequence so the timings are not
//! distorted by other tests. Each criterion prints one PASS/FAIL line.

use std::io::Write;
use std::ops::ControlFlow;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use univmatch::assignment::{solve_lap_auction, solve_lap_exact, AuctionConfig, ScoreMatrix};
use univmatch::diff::{grad_check, load_checkpoint, DiffError, ParamStore, Tape};
use univmatch::geometry::{pseudo_scale, Graph};
use univmatch::matching::{check_cycle_consistency, MatchingCollection, UniverseMatching};
use univmatch::model::{centroid_universe, CentroidMode, EncoderConfig, ModelError, UrlModel, UNIVERSE};
use univmatch::synth::{collection_f1, generate_anchor, generate_dataset, label_matching, sample_graph, write_dataset, SynthConfig};
use univmatch_cli::commands::{cmd_sweep, cmd_train, save_dataset, with_suffix, SweepAxis};
use univmatch_cli::{evaluate, train_model, EvalReport, ExperimentConfig, Method};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, o: &Outcome) {
    // Written to the process stdout directly so the lines survive output
    // capture.
    let line = format!(
        "criterion {id:>2} {} {name}: {}\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn random_universe_matching(rng: &mut ChaCha8Rng, d: usize) -> UniverseMatching {
    let m = rng.random_range(0..=d);
    let mut cols: Vec<usize> = (0..d).collect();
    cols.shuffle(rng);
    cols.truncate(m);
    UniverseMatching::new(cols, d).unwrap()
}

fn c1_construction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0usize;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let d = rng.random_range(1..=12);
        let x: Vec<_> = (0..k).map(|_| random_universe_matching(&mut rng, d)).collect();
        let r = check_cycle_consistency(&MatchingCollection::from_universe(&x).unwrap()).unwrap();
        violations += r.identity_violations.len() + r.symmetry_violations.len() + r.transitivity_violations.len();
        violations += usize::from(!r.is_consistent);
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: violations == 0 && secs < 5.0,
        detail: format!("1000 collections (k<=6, d<=12), {violations} violations, {secs:.2} s (budget 5 s)"),
    }
}

fn c2_lap_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_gap, mut unique, mut mismatched) = (0.0f64, 0usize, 0usize);
    for n in 0..500 {
        let m = rng.random_range(1..=5);
        let d = rng.random_range(m..=7);
        let values: Vec<f64> = (0..m * d)
            .map(|_| {
                if n % 3 == 0 {
                    rng.random_range(0..4) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let s = ScoreMatrix::new(m, d, values).unwrap();
        let auction = solve_lap_auction(&s, &AuctionConfig::default()).unwrap();
        let exact = solve_lap_exact(&s).unwrap();
        worst_gap = worst_gap.max((auction.objective - exact.assignment.objective).abs());
        if exact.margin() > 1e-6 {
            unique += 1;
            if auction.matching != exact.assignment.matching {
                mismatched += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst_gap <= 1e-12 && mismatched == 0 && secs < 10.0,
        detail: format!(
            "500 matrices (m<=5, d<=7), max objective gap {worst_gap:.1e}, {mismatched}/{unique} unique optima differ, {secs:.2} s (budget 10 s)"
        ),
    }
}

fn random_graph(rng: &mut ChaCha8Rng, f: usize, d: usize) -> Graph {
    let m = rng.random_range(4..=8);
    let coords: Vec<[f64; 2]> = (0..m)
        .map(|_| [rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)])
        .collect();
    let features = Array2::from_shape_fn((m, f), |_| rng.random_range(-1.0..1.0));
    let mut labels: Vec<usize> = (0..d).collect();
    labels.shuffle(rng);
    labels.truncate(m);
    labels.sort_unstable();
    Graph::new(coords, features, Some(labels)).unwrap()
}

/// Smallest distance of any third pseudo-coordinate to a hat-basis knot or
/// to the clamp boundaries.
fn virtual_knot_distance(model: &UrlModel, store: &ParamStore, g: &Graph) -> f64 {
    let (_, z) = model.encode_eval(store, g).unwrap();
    let scale = pseudo_scale(g);
    let step = 1.0 / (model.config.knots - 1) as f64;
    let mut best = f64::INFINITY;
    for (v, w) in g.directed_edges() {
        let u = (z[w] - z[v]) / (2.0 * scale) + 0.5;
        let nearest = (u / step).round() * step;
        best = best.min((u - nearest).abs()).min(u.abs()).min((u - 1.0).abs());
    }
    best
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let model = UrlModel::new(EncoderConfig {
        input_dim: 8,
        hidden_dim: 6,
        spline_layers_2d: 2,
        spline_layers_3d: 1,
        knots: 5,
        mlp_z_hidden: 4,
        dropout_rate: 0.35,
        label_smoothing: 0.4,
        universe_size: 10,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut redrawn = 0;
    while checked < 10 {
        let store = model.init_params(&mut rng);
        let g = random_graph(&mut rng, 8, 10);
        if virtual_knot_distance(&model, &store, &g) < 1e-3 {
            redrawn += 1;
            continue;
        }
        let err = grad_check(
            |t: &mut Tape, s: &ParamStore| {
                // No dropout generator: the forward pass is deterministic.
                model.total_loss(t, s, &[&g], &mut None).map(|(l, _)| l).map_err(|e| match e {
                    ModelError::Diff(d) => d,
                    other => DiffError::Checkpoint(other.to_string()),
                })
            },
            &store,
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst < 1e-4 && secs < 120.0,
        detail: format!(
            "10 graphs of 4-8 nodes, {} parameters each, max rel err {worst:.2e} ({redrawn} draws near a knot skipped), {secs:.1} s (budget 120 s)",
            model.init_params(&mut rng).numel()
        ),
    }
}

fn c4_centroid_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let h = rng.random_range(1..=5);
        let x: Vec<UniverseMatching> = (0..k).map(|_| random_universe_matching(&mut rng, d)).collect();
        let f: Vec<Array2<f64>> = x
            .iter()
            .map(|xi| Array2::from_shape_fn((xi.n_rows(), h), |_| rng.random_range(-2.0..2.0)))
            .collect();
        let closed = centroid_universe(&f, &x, CentroidMode::Mean).unwrap();

        // X_i^T F_i as d x h targets.
        let targets: Vec<Array2<f64>> = x
            .iter()
            .zip(&f)
            .map(|(xi, fi)| {
                let mut t = Array2::zeros((d, h));
                for (r, &c) in xi.assignment().iter().enumerate() {
                    t.row_mut(c).assign(&fi.row(r));
                }
                t
            })
            .collect();
        let mut store = ParamStore::new();
        store.insert(UNIVERSE, Array2::zeros((d, h)));
        let lr = 0.25 / k as f64;
        for _ in 0..100_000 {
            let mut tape = Tape::new();
            let u = tape.param(UNIVERSE, &store).unwrap();
            let mut total = None;
            for t in &targets {
                let c = tape.constant(t.clone()).unwrap();
                let diff = tape.sub(c, u).unwrap();
                let sq = tape.mul(diff, diff).unwrap();
                let s = tape.sum(sq).unwrap();
                total = Some(match total {
                    None => s,
                    Some(acc) => tape.add(acc, s).unwrap(),
                });
            }
            let grads = tape.backward(total.unwrap(), &store).unwrap();
            let g = grads.get(UNIVERSE).unwrap();
            let u = store.get_mut(UNIVERSE).unwrap();
            u.scaled_add(-lr, g);
            if g.iter().all(|v| v.abs() < 1e-13) {
                break;
            }
        }
        let gd = store.get(UNIVERSE).unwrap();
        worst = worst.max((gd - &closed).iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-6 && secs < 30.0,
        detail: format!("20 instances, max |U_closed - U_gd| {worst:.1e}, {secs:.2} s (budget 30 s)"),
    }
}

fn test_f1(model: &UrlModel, store: &ParamStore, test: &[Graph], d: usize) -> f64 {
    let res = model.match_collection(store, test).unwrap();
    let gt: Vec<_> = test.iter().map(|g| label_matching(g, d).unwrap()).collect();
    let gt = MatchingCollection::from_universe(&gt).unwrap();
    collection_f1(&res.collection().unwrap(), &gt).unwrap().0.f1
}

fn c5_separable() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::parse(include_str!("../../../configs/noise_free.toml")).unwrap();
    assert_eq!(cfg.train.epochs, 200);
    let data = generate_dataset(&cfg.synth).unwrap();
    let mut reached = None;
    let mut last = 0.0;
    train_model(&cfg, &data, |log, model, store| {
        last = test_f1(model, store, &data.test, data.config.n_univ);
        if last == 1.0 {
            reached = Some(log.epoch);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: reached.is_some() && secs < 300.0,
        detail: match reached {
            Some(e) => format!("test F1 = 1.0 after epoch {e} of at most 200, {secs:.1} s (budget 300 s)"),
            None => format!("test F1 {last:.4} after 200 epochs, {secs:.1} s"),
        },
    }
}

fn c6_benchmark() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 60;
    cfg.eval.baseline = true;
    let data = generate_dataset(&cfg.synth).unwrap();
    let trained = train_model(&cfg, &data, |_, _, _| ControlFlow::Continue(())).unwrap();
    let reports = evaluate(&cfg, &data, &trained.best_store).unwrap();
    let pick = |m: Method| -> &EvalReport { reports.iter().find(|r| r.method == m).unwrap() };
    let (url, base) = (pick(Method::Url), pick(Method::Baseline));
    let (uf, bf) = (url.prf.unwrap().f1, base.prf.unwrap().f1);
    let (uv, bv) = (url.violation_rate.unwrap(), base.violation_rate.unwrap());
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: uf - bf >= 0.05 && uv == 0.0 && bv > 0.0 && secs < 900.0,
        detail: format!(
            "URL F1 {uf:.4} vs baseline {bf:.4} (+{:.1} pp), violation rate URL {uv} / baseline {bv:.3}, {secs:.1} s (budget 900 s)",
            100.0 * (uf - bf)
        ),
    }
}

fn sweep_config() -> ExperimentConfig {
    ExperimentConfig::parse(include_str!("../../../configs/sweep.toml")).unwrap()
}

fn c7_partiality() -> Outcome {
    let start = Instant::now();
    let rows = cmd_sweep(SweepAxis::Visibility, &[0.4, 1.0], &sweep_config(), &mut Vec::new(), &mut Vec::new()).unwrap();
    let (low, full) = (rows[0].f1, rows[1].f1);
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: low >= 0.75 * full && secs < 45.0 * 60.0,
        detail: format!(
            "F1 {low:.4} at p_vis 0.4 vs {full:.4} at 1.0 (ratio {:.3}, need >= 0.75), {secs:.1} s for 2 points (budget 2700 s for 5)",
            low / full
        ),
    }
}

fn c8_size() -> Outcome {
    let start = Instant::now();
    let rows = cmd_sweep(SweepAxis::Size, &[25.0, 200.0], &sweep_config(), &mut Vec::new(), &mut Vec::new()).unwrap();
    let (small, large) = (rows[0].f1, rows[1].f1);
    let sweep_secs = start.elapsed().as_secs_f64();

    let cfg = SynthConfig {
        n_univ: 1000,
        ..SynthConfig::default()
    };
    let anchor = generate_anchor(&cfg, cfg.seed);
    let g = sample_graph(&anchor, &cfg, cfg.seed, 0);
    let model = UrlModel::new(EncoderConfig {
        universe_size: 1000,
        ..EncoderConfig::default()
    })
    .unwrap();
    let store = model.init_params(&mut ChaCha8Rng::seed_from_u64(8));
    let universe = store.get(UNIVERSE).unwrap().clone();
    let t = Instant::now();
    let (_, hard, _) = model.match_graph(&store, &universe, &g).unwrap();
    let infer = t.elapsed().as_secs_f64();
    assert_eq!(hard.n_rows(), g.n_nodes());
    Outcome {
        pass: (small - large).abs() <= 0.10 && infer < 10.0 && sweep_secs < 2.0 * 3600.0,
        detail: format!(
            "F1 {small:.4} at N_univ 25 vs {large:.4} at 200 (gap {:.1} pp, limit 10), {} steps per point; inference on a {}-node graph at N_univ 1000 {infer:.2} s (limit 10 s); sweep {sweep_secs:.1} s",
            100.0 * (small - large),
            rows[1].steps,
            g.n_nodes()
        ),
    }
}

fn c9_equivariance() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig::default();
    let anchor = generate_anchor(&cfg, 9);
    let model = UrlModel::new(EncoderConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let store = model.init_params(&mut rng);
    let universe = store.get(UNIVERSE).unwrap().clone();
    let (mut worst, mut hard_mismatch) = (0.0f64, 0usize);
    for trial in 0..100 {
        let g = sample_graph(&anchor, &cfg, 9, trial);
        let mut perm: Vec<usize> = (0..g.n_nodes()).collect();
        perm.shuffle(&mut rng);
        let p = g.permuted(&perm);
        let (fg, zg) = model.encode_eval(&store, &g).unwrap();
        let (fp, zp) = model.encode_eval(&store, &p).unwrap();
        let (_, hg, _) = model.match_graph(&store, &universe, &g).unwrap();
        let (_, hp, _) = model.match_graph(&store, &universe, &p).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..fg.ncols() {
                worst = worst.max((fp[[new, c]] - fg[[old, c]]).abs());
            }
            worst = worst.max((zp[new] - zg[old]).abs());
            hard_mismatch += usize::from(hp.column_of(new) != hg.column_of(old));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-9 && hard_mismatch == 0,
        detail: format!(
            "100 permuted graphs, max feature deviation {worst:.1e}, {hard_mismatch} hard-assignment rows differ, {secs:.1} s"
        ),
    }
}

fn c10_determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();

    let bytes = |d: &univmatch::synth::Dataset| {
        let mut v = Vec::new();
        write_dataset(&mut v, d).unwrap();
        v
    };
    let first = generate_dataset(&cfg.synth).unwrap();
    let data_same = bytes(&first) == bytes(&generate_dataset(&cfg.synth).unwrap());

    let mut train_cfg = cfg.clone();
    train_cfg.train.epochs = 2;
    let data_path = dir.path().join("data.jsonl");
    save_dataset(&data_path, &first).unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    let trained = cmd_train(&data_path, &train_cfg, &a, &mut la).unwrap();
    cmd_train(&data_path, &train_cfg, &b, &mut lb).unwrap();
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let logs_same = la == lb && read(&with_suffix(&a, ".log")) == read(&with_suffix(&b, ".log"));
    let ckpt_same = read(&a) == read(&b) && read(&with_suffix(&a, ".best")) == read(&with_suffix(&b, ".best"));

    let strip = |mut r: Vec<EvalReport>| {
        r.iter_mut().for_each(|x| x.wall_time_ms = 0.0);
        r
    };
    let mut eval_cfg = train_cfg.clone();
    eval_cfg.eval.baseline = true;
    let in_memory = strip(evaluate(&eval_cfg, &first, &trained.final_store).unwrap());
    let loaded = strip(evaluate(&eval_cfg, &first, &load_checkpoint(&a).unwrap()).unwrap());
    let eval_same = in_memory == loaded;
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: data_same && logs_same && ckpt_same && eval_same,
        detail: format!(
            "dataset bytes {}, training logs {}, checkpoints {}, save/load/eval {} ({secs:.1} s)",
            if data_same { "identical" } else { "DIFFER" },
            if logs_same { "identical" } else { "DIFFER" },
            if ckpt_same { "identical" } else { "DIFFER" },
            if eval_same { "identical" } else { "DIFFER" },
        ),
    }
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("universe construction consistency", c1_construction),
        ("LAP oracle equivalence", c2_lap_oracle),
        ("gradient fidelity", c3_gradients),
        ("centroid oracle", c4_centroid_oracle),
        ("separable-instance convergence", c5_separable),
        ("default-noise benchmark", c6_benchmark),
        ("partiality robustness", c7_partiality),
        ("size robustness and scalability", c8_size),
        ("permutation equivariance", c9_equivariance),
        ("determinism and persistence", c10_determinism),
    ];
    let mut failed = Vec::new();
    for (n, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        report(n + 1, name, &o);
        if !o.pass {
            failed.push(n + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
