mod common;

use common::*;
use gwalk_core::graph::{
    build_knn_affinity, prune_and_scale, sinkhorn_scale, square_psd, symmetrize_geometric, AffinityMatrix,
    SinkhornOptions,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn knn_on_circle_matches_brute_force() {
    let mut r = rng(11);
    let pts: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let t: f64 = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            vec![t.cos(), t.sin()]
        })
        .collect();
    let k = build_knn_affinity(&pts, 5).unwrap();
    let n = pts.len();
    let mut expected = vec![0.0; n * n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let d = |j: usize| (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
        order.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
        for &j in &order[..5] {
            expected[i * n + j] = 1.0;
            expected[j * n + i] = 1.0;
        }
    }
    assert_eq!(k.to_dense(), expected);
    for i in 0..n {
        let deg = (0..n).filter(|&j| k.get(i, j) > 0.0).count();
        assert!((5..=10).contains(&deg), "row {i} has {deg} neighbours");
    }
}

/// Exact scalability oracle for tiny symmetric patterns: every nonzero must
/// lie on a positive permutation diagonal (total support).
fn has_total_support(pattern: &[Vec<bool>]) -> bool {
    let n = pattern.len();
    if n == 0 {
        return false;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut covered = vec![vec![false; n]; n];
    let mut any = false;
    permutations(&mut perm, 0, &mut |p| {
        if (0..n).all(|i| pattern[i][p[i]]) {
            any = true;
            for i in 0..n {
                covered[i][p[i]] = true;
            }
        }
    });
    any && (0..n).all(|i| (0..n).all(|j| !pattern[i][j] || covered[i][j]))
}

fn permutations(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for j in k..p.len() {
        p.swap(k, j);
        permutations(p, k + 1, f);
        p.swap(k, j);
    }
}

fn unit_graph(n: usize, edges: &[(usize, usize)]) -> AffinityMatrix {
    let entries = edges.iter().flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]);
    AffinityMatrix::new(n, entries, None).unwrap()
}

#[test]
fn small_graphs_prune_to_a_scalable_core() {
    let cases: Vec<(AffinityMatrix, usize)> = vec![
        // Triangle with a leaf hanging off node 1.
        (unit_graph(4, &[(0, 1), (1, 2), (0, 2), (1, 3)]), 1),
        // Path 0-1-2-3.
        (unit_graph(4, &[(0, 1), (1, 2), (2, 3)]), 2),
        // Star centred at 0.
        (unit_graph(4, &[(0, 1), (0, 2), (0, 3)]), 2),
        // Already scalable 4-cycle.
        (unit_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]), 0),
    ];
    for (k, expected_prunes) in cases {
        let full: Vec<Vec<bool>> = (0..4).map(|i| (0..4).map(|j| k.get(i, j) > 0.0).collect()).collect();
        let scaled = prune_and_scale(&k, SinkhornOptions::default()).unwrap();
        let pruned = &scaled.scaling().pruned_nodes;
        assert_eq!(pruned.len(), expected_prunes, "{:?}", k.entries());
        assert!(pruned.len() <= 2);
        assert_eq!(pruned.is_empty(), has_total_support(&full));

        let kept = scaled.original_index();
        let sub: Vec<Vec<bool>> = kept.iter().map(|&i| kept.iter().map(|&j| full[i][j]).collect()).collect();
        assert!(has_total_support(&sub), "retained {kept:?} is not scalable");

        let m = scaled.n();
        let w = scaled.to_dense();
        for i in 0..m {
            let s: f64 = w[i * m..(i + 1) * m].iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }

        // Each pruned node had the minimum degree among the nodes alive at
        // the time it was removed.
        let mut alive: Vec<usize> = (0..4).collect();
        for &p in pruned {
            let deg = |i: usize| alive.iter().filter(|&&j| full[i][j]).count();
            assert!(alive.iter().all(|&j| deg(p) <= deg(j)));
            alive.retain(|&j| j != p);
        }
    }
}

fn kl_objective(w: &[f64], k: &[f64]) -> f64 {
    w.iter()
        .zip(k)
        .filter(|(&wi, _)| wi > 0.0)
        .map(|(&wi, &ki)| wi * (wi / ki).ln())
        .sum()
}

#[test]
fn sinkhorn_is_kl_closest_symmetric_stochastic_matrix() {
    let n = 5;
    let mut r = rng(5);
    for _ in 0..20 {
        let dense: Vec<f64> = (0..n * n).map(|_| r.random_range(0.05..2.0)).collect();
        let k = AffinityMatrix::from_dense(n, &dense).unwrap();
        let w = sinkhorn_scale(&symmetrize_geometric(&k), SinkhornOptions::default()).unwrap().to_dense();
        let base = kl_objective(&w, &dense);
        // Feasible directions that keep W symmetric with unit row sums:
        // a four-cycle exchange and a diagonal/off-diagonal exchange.
        for _ in 0..200 {
            let mut idx: Vec<usize> = (0..n).collect();
            for a in 0..4 {
                let b = r.random_range(a..n);
                idx.swap(a, b);
            }
            let (i, j, kk, l) = (idx[0], idx[1], idx[2], idx[3]);
            let delta = r.random_range(1e-4..1e-2) * if r.random::<bool>() { 1.0 } else { -1.0 };
            let mut moved = w.clone();
            let mut add = |a: usize, b: usize, v: f64| {
                moved[a * n + b] += v;
                if a != b {
                    moved[b * n + a] += v;
                }
            };
            if r.random::<bool>() {
                add(i, j, delta);
                add(kk, l, delta);
                add(i, l, -delta);
                add(kk, j, -delta);
            } else {
                add(i, i, delta);
                add(j, j, delta);
                add(i, j, -delta);
            }
            if moved.iter().all(|&x| x > 0.0) {
                assert!(kl_objective(&moved, &dense) > base, "feasible move lowered the objective");
            }
        }
    }
}

fn bfs_components(w: &[f64], n: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut head = 0;
        while head < comp.len() {
            let u = comp[head];
            head += 1;
            for v in 0..n {
                if !seen[v] && w[u * n + v] != 0.0 {
                    seen[v] = true;
                    comp.push(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

#[test]
fn bipartite_cycle_splits_after_squaring() {
    // Even cycle without self loops: W~ is bipartite, W = W~^2 splits it.
    let k = unit_graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]);
    let scaled = prune_and_scale(&k, SinkhornOptions::default()).unwrap();
    let op = square_psd(&scaled).unwrap();
    let comps: Vec<Vec<usize>> = op.components().iter().map(|c| c.nodes.clone()).collect();
    assert_eq!(comps, vec![vec![0, 2, 4], vec![1, 3, 5]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_satisfies_invariants(seed in any::<u64>(), n in 2usize..30, density in 0.0f64..0.6) {
        let mut r = rng(seed);
        // Sparse, possibly disconnected, possibly unscalable kernels.
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if r.random::<f64>() < density {
                    entries.push((i, j, r.random_range(0.01..1.0)));
                }
            }
        }
        let k = AffinityMatrix::new(n, entries, None).unwrap();
        let Ok(scaled) = prune_and_scale(&symmetrize_geometric(&k), SinkhornOptions::default()) else {
            return Ok(());
        };
        let op = square_psd(&scaled).unwrap();
        let m = op.n();
        let w = op.to_dense();
        let (sym, stoch) = op.invariant_errors();
        prop_assert!(sym <= 1e-10 && stoch <= 1e-10);

        // Independent product and component search.
        let wt = scaled.to_dense();
        let product = matmul(&wt, &wt, m);
        for (a, b) in product.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let comps: Vec<Vec<usize>> = op.components().iter().map(|c| c.nodes.clone()).collect();
        prop_assert_eq!(comps, bfs_components(&product, m));

        // Spectra reconstruct W, so no eigenvalue was clamped by more than
        // roundoff.
        let spectra = gwalk_core::decompose(&op).unwrap();
        for (c, s) in op.components().iter().zip(&spectra) {
            let size = s.size();
            prop_assert!(s.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((s.values()[0] - 1.0).abs() <= 1e-8);
            for a in 0..size {
                for b in 0..size {
                    let rebuilt: f64 = (0..size).map(|k| s.vector(k, a) * s.values()[k] * s.vector(k, b)).sum();
                    prop_assert!((rebuilt - c.block[a * size + b]).abs() <= 1e-10);
                    let gram: f64 = (0..size).map(|k| s.vector(a, k) * s.vector(b, k)).sum();
                    prop_assert!((gram - f64::from(u8::from(a == b))).abs() <= 1e-8);
                }
                prop_assert!((s.vector(0, a) - 1.0 / (size as f64).sqrt()).abs() <= 1e-6);
            }
        }
    }
}
