//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! the library's solvers or propagation: these are plain-loop references.
#![allow(dead_code)]

use adr_core::config::ExperimentConfig;
use adr_core::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn to_rows(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn from_rows(rows: &Rows, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c])
}

pub fn naive_matmul(a: &Rows, b: &Rows) -> Rows {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn naive_transpose(a: &Rows, cols: usize) -> Rows {
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Solves `A X = B` by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_solve(a: &Rows, b: &Rows) -> Rows {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Rows = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().chain(rb).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "oracle hit a singular pivot");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = aug[col].clone();
        for (i, row) in aug.iter_mut().enumerate() {
            if i != col {
                let f = row[col];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..n + m].to_vec()).collect()
}

/// Ridge fit over explicitly stacked `(X_i, T_i)` pairs.
pub fn stacked_ridge(xs: &[DenseMatrix], ts: &[DenseMatrix], gamma: f64) -> DenseMatrix {
    let d = xs[0].cols();
    let c = ts[0].cols();
    let x: Rows = xs.iter().flat_map(to_rows).collect();
    let t: Rows = ts.iter().flat_map(to_rows).collect();
    let xt = naive_transpose(&x, d);
    let mut r = naive_matmul(&xt, &x);
    for (i, row) in r.iter_mut().enumerate() {
        row[i] += gamma;
    }
    let q = naive_matmul(&xt, &t);
    from_rows(&gauss_jordan_solve(&r, &q), c)
}

pub fn rel_frobenius(got: &DenseMatrix, want: &DenseMatrix) -> f64 {
    assert_eq!(got.shape(), want.shape());
    let num: f64 = got
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = want.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// `D̂^{-1/2}(A+I)D̂^{-1/2}` built densely from an undirected edge list.
pub fn dense_normalized(n: usize, edges: &[(usize, usize)]) -> Rows {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j) in edges {
        if i != j {
            a[i][j] = 1.0;
            a[j][i] = 1.0;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

/// Eval-mode GCN pass with dense loops: returns `(Ĥ_k, H_k)` per layer and
/// the final post-activation embeddings.
pub fn dense_gcn(adj: &Rows, x: &Rows, layers: &[DenseMatrix]) -> (Vec<Rows>, Vec<Rows>, Rows) {
    let mut input = x.clone();
    let mut aggs = Vec::new();
    let mut pres = Vec::new();
    for w in layers {
        let agg = naive_matmul(adj, &input);
        let pre = naive_matmul(&agg, &to_rows(w));
        input = pre.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
        aggs.push(agg);
        pres.push(pre);
    }
    (aggs, pres, input)
}

pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn scalar_avg_incremental(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut total = 0.0;
    for (t, row) in m.iter().enumerate() {
        let mut s = 0.0;
        for v in row.iter().take(t + 1) {
            s += v;
        }
        total += s / (t + 1) as f64;
    }
    total / n as f64
}

pub fn scalar_final(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut s = 0.0;
    for v in &m[n - 1] {
        s += v;
    }
    s / n as f64
}

pub fn scalar_learning(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut s = 0.0;
    for (t, row) in m.iter().enumerate() {
        s += row[t];
    }
    s / n as f64
}

pub fn random_lower_triangular(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|t| (0..=t).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Small, fast configuration over a separable SBM: `classes` blocks of
/// `block` nodes, two classes per task.
pub fn small_config(method: &str, classes: usize, block: usize, epochs: usize) -> ExperimentConfig {
    let blocks = vec![block; classes];
    let text = format!(
        r#"{{
            "method": "{method}",
            "hidden_dims": [16, 16],
            "lr_base": 0.01,
            "lr_incremental": 0.005,
            "epochs": {epochs},
            "dropout": 0.2,
            "gamma": 0.1,
            "dataset": {{"sbm": {{"blocks": {blocks:?}, "p_intra": 0.15, "p_inter": 0.01,
                                  "feature_dim": 8, "feature_shift": 2.5, "seed": 5}}}},
            "stream": {{"base_classes": 2}}
        }}"#
    );
    ExperimentConfig::from_json(&text).expect("fixture config is valid")
}

/// The drifted three-task SBM benchmark shipped in `configs/`.
pub fn benchmark_config() -> ExperimentConfig {
    ExperimentConfig::from_json(include_str!("../../../../configs/adr_sbm.json")).expect("benchmark config is valid")
}
