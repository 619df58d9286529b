mod common;

use adr_core::graph::{normalize, SparseGraph};
use adr_core::linalg::{cross_accumulate, gram_accumulate, ridge_solve, spectral_sanity};
use adr_core::DenseMatrix;
use common::*;
use proptest::prelude::*;

fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-2.0f64..2.0, r * c).prop_map(move |v| DenseMatrix::from_vec(r, c, v).unwrap())
    })
}

/// Objective of the ridge problem evaluated from raw rows.
fn ridge_objective(x: &DenseMatrix, t: &DenseMatrix, w: &DenseMatrix, gamma: f64) -> f64 {
    let mut fit = 0.0;
    for r in 0..x.rows() {
        for c in 0..t.cols() {
            let pred: f64 = (0..x.cols()).map(|k| x.get(r, k) * w.get(k, c)).sum();
            fit += (t.get(r, c) - pred).powi(2);
        }
    }
    fit + gamma * w.data().iter().map(|v| v * v).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accumulation_commutes_with_stacking(
        x in matrix_strategy(30, 8),
        cuts in proptest::collection::vec(0usize..30, 0..4),
        tcols in 1usize..5,
        seed in any::<u64>(),
    ) {
        let n = x.rows();
        let d = x.cols();
        let t = random_matrix(n, tcols, &mut rng(seed));
        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % (n + 1)).collect();
        bounds.push(0);
        bounds.push(n);
        bounds.sort_unstable();
        bounds.dedup();

        let mut r = DenseMatrix::zeros(d, d);
        let mut q = DenseMatrix::zeros(d, tcols);
        for w in bounds.windows(2) {
            let rows: Vec<usize> = (w[0]..w[1]).collect();
            r = gram_accumulate(&r, &x.select_rows(&rows)).unwrap();
            q = cross_accumulate(&q, &x.select_rows(&rows), &t.select_rows(&rows)).unwrap();
        }
        let xr = to_rows(&x);
        let xt = naive_transpose(&xr, d);
        let r_oracle = from_rows(&naive_matmul(&xt, &xr), d);
        let q_oracle = from_rows(&naive_matmul(&xt, &to_rows(&t)), tcols);
        prop_assert!(rel_frobenius(&r, &r_oracle) < 1e-12);
        prop_assert!(rel_frobenius(&q, &q_oracle) < 1e-12);
        prop_assert_eq!(r.clone(), r.transpose());
    }

    #[test]
    fn ridge_solution_is_a_minimum(
        x in matrix_strategy(25, 6),
        gamma_exp in -3i32..=0,
        seed in any::<u64>(),
    ) {
        let gamma = 10f64.powi(gamma_exp);
        let mut g = rng(seed);
        let t = random_matrix(x.rows(), 3, &mut g);
        let r = gram_accumulate(&DenseMatrix::zeros(x.cols(), x.cols()), &x).unwrap();
        let q = cross_accumulate(&DenseMatrix::zeros(x.cols(), 3), &x, &t).unwrap();
        let w = ridge_solve(&r, &q, gamma).unwrap();
        let base = ridge_objective(&x, &t, &w, gamma);
        for eps in [1e-3, 1e-4] {
            for _ in 0..4 {
                let delta = random_matrix(w.rows(), w.cols(), &mut g);
                let moved = w.add(&delta.scale(eps)).unwrap();
                prop_assert!(ridge_objective(&x, &t, &moved, gamma) >= base - 1e-12 * base.max(1.0));
            }
        }
        prop_assert_eq!(ridge_solve(&r, &q, gamma).unwrap(), w);
    }

    #[test]
    fn gram_matrices_pass_spectral_check(x in matrix_strategy(20, 10)) {
        let r = gram_accumulate(&DenseMatrix::zeros(x.cols(), x.cols()), &x).unwrap();
        let rep = spectral_sanity(&r);
        prop_assert!(rep.max_asymmetry < 1e-12);
        prop_assert!(rep.psd);
    }

    #[test]
    fn propagate_is_linear_and_matches_dense(n in 1usize..50, p in 0.0f64..0.5, seed in any::<u64>()) {
        let mut g = rng(seed);
        let edges = random_edges(n, p, &mut g);
        let adj = normalize(&SparseGraph::new(n, edges.clone()).unwrap());
        let oracle = dense_normalized(n, &edges);
        for (i, row) in oracle.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                prop_assert!((adj.weight(i, j).unwrap_or(0.0) - v).abs() < 1e-15);
            }
        }
        let h1 = random_matrix(n, 3, &mut g);
        let h2 = random_matrix(n, 3, &mut g);
        let sum = adj.propagate(&h1.add(&h2).unwrap()).unwrap();
        let parts = adj.propagate(&h1).unwrap().add(&adj.propagate(&h2).unwrap()).unwrap();
        prop_assert!(sum.max_abs_diff(&parts) < 1e-12);
        let dense = from_rows(&naive_matmul(&oracle, &to_rows(&h1)), 3);
        prop_assert!(adj.propagate(&h1).unwrap().max_abs_diff(&dense) < 1e-12);
    }
}

#[test]
fn ridge_matches_gauss_jordan_on_full_rank_system() {
    let mut g = rng(11);
    let x = random_matrix(12, 6, &mut g);
    let t = random_matrix(12, 4, &mut g);
    let r = gram_accumulate(&DenseMatrix::zeros(6, 6), &x).unwrap();
    let q = cross_accumulate(&DenseMatrix::zeros(6, 4), &x, &t).unwrap();
    let w = ridge_solve(&r, &q, 0.0).unwrap();
    let oracle = stacked_ridge(&[x], &[t], 0.0);
    assert!(rel_frobenius(&w, &oracle) < 1e-9);
}

#[test]
fn matrix_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let m = random_matrix(7, 3, &mut rng(4));
    let path = dir.path().join("m.bin");
    m.save(&path).unwrap();
    assert_eq!(DenseMatrix::load(&path).unwrap(), m);
    std::fs::write(&path, &m.to_bytes()[..20]).unwrap();
    assert!(DenseMatrix::load(&path).is_err());
}
