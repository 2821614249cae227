use ndarray::Array2;
use proptest::prelude::*;
use robust::{incircle, orient2d, Coord};
use univmatch::geometry::{delaunay_edges, pseudo_coords, Graph};

fn c(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

/// Brute force: an edge is Delaunay when it belongs to a triangle whose
/// circumcircle has no other point strictly inside.
fn brute_force_edges(pts: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let n = pts.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let o = orient2d(c(pts[i]), c(pts[j]), c(pts[k]));
                if o == 0.0 {
                    continue;
                }
                let (a, b) = if o > 0.0 { (j, k) } else { (k, j) };
                let empty = (0..n)
                    .filter(|&l| l != i && l != j && l != k)
                    .all(|l| incircle(c(pts[i]), c(pts[a]), c(pts[b]), c(pts[l])) <= 0.0);
                if empty {
                    edges.extend([(i, j), (j, k), (i, k)]);
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

#[test]
fn convex_quadrilateral_diagonal_matches_circumcircle_test() {
    // Not cocircular: the diagonal 0-2 is legal only if 3 lies outside the
    // circle through 0, 1, 2.
    let pts = [[0.0, 0.0], [4.0, 0.5], [5.0, 4.0], [0.5, 3.0]];
    let edges = delaunay_edges(&pts);
    assert_eq!(edges.len(), 5);
    assert_eq!(edges, brute_force_edges(&pts));
    let diag_02 = incircle(c(pts[0]), c(pts[1]), c(pts[2]), c(pts[3])) < 0.0;
    assert_eq!(edges.contains(&(0, 2)), diag_02);
    assert_eq!(edges.contains(&(1, 3)), !diag_02);
}

fn point_set() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..256.0, 0.0f64..256.0), 3..=12)
        .prop_map(|v| v.into_iter().map(|(x, y)| [x, y]).collect())
}

fn has_cocircular_or_collinear(pts: &[[f64; 2]]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                if orient2d(c(pts[i]), c(pts[j]), c(pts[k])) == 0.0 {
                    return true;
                }
                for l in (k + 1)..n {
                    if incircle(c(pts[i]), c(pts[j]), c(pts[k]), c(pts[l])) == 0.0 {
                        return true;
                    }
                }
            }
        }
    }
    false
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn delaunay_agrees_with_brute_force(pts in point_set()) {
        prop_assume!(!has_cocircular_or_collinear(&pts));
        let edges = delaunay_edges(&pts);
        prop_assert_eq!(&edges, &brute_force_edges(&pts));
        prop_assert!(edges.len() <= 3 * pts.len() - 6);
    }

    #[test]
    fn pseudo_coords_translation_invariant(pts in point_set(), dx in -500.0f64..500.0, dy in -500.0f64..500.0) {
        let m = pts.len();
        let g = Graph::new(pts.clone(), Array2::zeros((m, 1)), None).unwrap();
        let moved: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let h = Graph::with_edges(moved, Array2::zeros((m, 1)), None, g.edges().to_vec()).unwrap();
        let z: Vec<f64> = (0..m).map(|i| i as f64 * 3.7).collect();
        let a = pseudo_coords(&g, Some(&z)).unwrap();
        let b = pseudo_coords(&h, Some(&z)).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(x));
        }
    }
}

#[test]
fn large_random_set_is_planar_and_connected() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<[f64; 2]> = (0..1000)
        .map(|_| [rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)])
        .collect();
    let edges = delaunay_edges(&pts);
    assert!(edges.len() <= 3 * pts.len() - 6);
    let mut degree = vec![0; pts.len()];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    assert!(degree.iter().all(|&d| d >= 2));
}
