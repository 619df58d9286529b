//! Undirected graphs in compressed-row form, GCN normalization, per-task
//! subgraphs and the consolidated evaluation graph.

use serde::{Deserialize, Serialize};

use crate::datasets::RawDataset;
use crate::error::{AdrError, Result};
use crate::linalg::DenseMatrix;

/// Undirected simple graph. Edges are kept once as `(lo, hi)` pairs, sorted;
/// the neighbor lists hold both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl SparseGraph {
    /// Builds a graph from arbitrary pairs. Direction is discarded,
    /// duplicates collapse to one edge and self-loops are dropped (the
    /// normalization adds its own).
    pub fn new(num_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a >= num_nodes || b >= num_nodes {
                return Err(AdrError::shape(
                    "SparseGraph::new",
                    format!("edge ({a}, {b}) outside {num_nodes} nodes"),
                ));
            }
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut degree = vec![0usize; num_nodes];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for i in 0..num_nodes {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[num_nodes]];
        for &(a, b) in &edges {
            neighbors[fill[a]] = b;
            fill[a] += 1;
            neighbors[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..num_nodes {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Ok(SparseGraph {
            num_nodes,
            edges,
            offsets,
            neighbors,
        })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self::new(num_nodes, std::iter::empty()).expect("no edges")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Subgraph on `nodes` (dataset indices), relabeled to `0..nodes.len()`
    /// in the given order.
    pub fn induced(&self, nodes: &[usize]) -> SparseGraph {
        let mut local = vec![usize::MAX; self.num_nodes];
        for (i, &n) in nodes.iter().enumerate() {
            local[n] = i;
        }
        let pairs = self.edges.iter().filter_map(|&(a, b)| {
            let (la, lb) = (local[a], local[b]);
            (la != usize::MAX && lb != usize::MAX).then_some((la, lb))
        });
        SparseGraph::new(nodes.len(), pairs).expect("indices are local")
    }
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` in compressed-row form, self-loops included.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    num_nodes: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `(neighbor, weight)` pairs of a row, including the self-loop.
    pub fn row(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[node]..self.offsets[node + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn weight(&self, o: usize, j: usize) -> Option<f64> {
        self.row(o).find(|&(n, _)| n == j).map(|(_, w)| w)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.num_nodes, self.num_nodes);
        for o in 0..self.num_nodes {
            for (j, w) in self.row(o) {
                m.set(o, j, w);
            }
        }
        m
    }

    /// Row `o` of the result is `Σ_j ω_oj · h[j]`.
    pub fn propagate(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.rows() != self.num_nodes {
            return Err(AdrError::shape(
                "propagate",
                format!("{} feature rows for {} nodes", h.rows(), self.num_nodes),
            ));
        }
        let mut out = DenseMatrix::zeros(h.rows(), h.cols());
        for o in 0..self.num_nodes {
            let dst = out.row_mut(o);
            for k in self.offsets[o]..self.offsets[o + 1] {
                let w = self.weights[k];
                for (d, &s) in dst.iter_mut().zip(h.row(self.indices[k])) {
                    *d += w * s;
                }
            }
        }
        Ok(out)
    }
}

/// Symmetric GCN normalization with self-loops.
pub fn normalize(g: &SparseGraph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
    let w = |i: usize, j: usize| 1.0 / (deg[i] * deg[j]).sqrt();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(g.neighbors.len() + n);
    let mut weights = Vec::with_capacity(g.neighbors.len() + n);
    offsets.push(0);
    for o in 0..n {
        let mut inserted_self = false;
        for &j in g.neighbors(o) {
            if !inserted_self && j > o {
                indices.push(o);
                weights.push(1.0 / deg[o]);
                inserted_self = true;
            }
            indices.push(j);
            weights.push(w(o, j));
        }
        if !inserted_self {
            indices.push(o);
            weights.push(1.0 / deg[o]);
        }
        offsets.push(indices.len());
    }
    NormalizedAdjacency {
        num_nodes: n,
        offsets,
        indices,
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One task of the class-incremental stream. Nodes are relabeled locally;
/// `node_ids` maps back to dataset indices.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    pub task_id: usize,
    pub classes: Vec<usize>,
    pub node_ids: Vec<usize>,
    pub features: DenseMatrix,
    pub graph: SparseGraph,
    pub norm_adj: NormalizedAdjacency,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl TaskGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|&s| s == split).collect()
    }

    /// Local indices of nodes in `split`, ascending.
    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    /// Node count per class of this task, in `classes` order.
    pub fn class_counts(&self, split: Option<Split>) -> Vec<usize> {
        self.classes
            .iter()
            .map(|&c| {
                self.labels
                    .iter()
                    .zip(&self.splits)
                    .filter(|&(&l, &s)| l == c && split.is_none_or(|want| want == s))
                    .count()
            })
            .collect()
    }
}

/// Nodes of `class_set` with the edges among them only. `node_splits` is the
/// per-dataset-node split assignment.
pub fn induce_task_subgraph(
    ds: &RawDataset,
    class_set: &[usize],
    task_id: usize,
    node_splits: &[Split],
) -> Result<TaskGraph> {
    if class_set.is_empty() {
        return Err(AdrError::Config("empty class set for task".into()));
    }
    if node_splits.len() != ds.num_nodes() {
        return Err(AdrError::shape(
            "induce_task_subgraph",
            format!("{} splits for {} nodes", node_splits.len(), ds.num_nodes()),
        ));
    }
    let mut in_task = vec![false; ds.class_count];
    for &c in class_set {
        if c >= ds.class_count {
            return Err(AdrError::UnknownClass(c));
        }
        in_task[c] = true;
    }
    let node_ids: Vec<usize> = (0..ds.num_nodes())
        .filter(|&i| in_task[ds.labels[i]])
        .collect();
    let graph = ds.graph.induced(&node_ids);
    let norm_adj = normalize(&graph);
    let mut classes = class_set.to_vec();
    classes.sort_unstable();
    classes.dedup();
    Ok(TaskGraph {
        task_id,
        classes,
        features: ds.features.select_rows(&node_ids),
        labels: node_ids.iter().map(|&i| ds.labels[i]).collect(),
        splits: node_ids.iter().map(|&i| node_splits[i]).collect(),
        node_ids,
        graph,
        norm_adj,
    })
}

/// Union of the seen task graphs, with every dataset edge among their nodes
/// (inter-task edges included).
#[derive(Debug, Clone)]
pub struct GlobalTestGraph {
    pub node_ids: Vec<usize>,
    pub features: DenseMatrix,
    pub graph: SparseGraph,
    pub norm_adj: NormalizedAdjacency,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    /// Position in the task stream of the task each node came from.
    pub task_of_node: Vec<usize>,
}

impl GlobalTestGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn test_mask(&self) -> Vec<bool> {
        self.splits.iter().map(|&s| s == Split::Test).collect()
    }

    /// Local indices of `split` nodes that originate from task position `t`.
    pub fn nodes_of_task(&self, t: usize, split: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.task_of_node[i] == t && self.splits[i] == split)
            .collect()
    }
}

pub fn build_global_test_graph(ds: &RawDataset, tasks_seen: &[TaskGraph]) -> Result<GlobalTestGraph> {
    if tasks_seen.is_empty() {
        return Err(AdrError::Config("global test graph needs at least one task".into()));
    }
    let mut node_ids = Vec::new();
    let mut task_of_node = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for (pos, task) in tasks_seen.iter().enumerate() {
        node_ids.extend_from_slice(&task.node_ids);
        task_of_node.extend(std::iter::repeat_n(pos, task.num_nodes()));
        labels.extend_from_slice(&task.labels);
        splits.extend_from_slice(&task.splits);
    }
    let graph = ds.graph.induced(&node_ids);
    let norm_adj = normalize(&graph);
    Ok(GlobalTestGraph {
        features: ds.features.select_rows(&node_ids),
        node_ids,
        graph,
        norm_adj,
        labels,
        splits,
        task_of_node,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_oracle(g: &SparseGraph) -> DenseMatrix {
        let n = g.num_nodes();
        let mut a = DenseMatrix::identity(n);
        for &(x, y) in g.edges() {
            a.set(x, y, 1.0);
            a.set(y, x, 1.0);
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i] * deg[j]).sqrt())
    }

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> SparseGraph {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    pairs.push((i, j));
                }
            }
        }
        SparseGraph::new(n, pairs).unwrap()
    }

    #[test]
    fn construction_dedups_and_symmetrizes() {
        let g = SparseGraph::new(3, [(0, 1), (1, 0), (1, 2), (2, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert!(SparseGraph::new(2, [(0, 2)]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let one = normalize(&SparseGraph::empty(1));
        assert_eq!(one.to_dense(), DenseMatrix::from_rows(&[[1.0]]));

        let pair = normalize(&SparseGraph::new(2, [(0, 1)]).unwrap());
        assert_eq!(pair.to_dense(), DenseMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]));

        let tri = SparseGraph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let dense = normalize(&tri).to_dense();
        assert!(dense.max_abs_diff(&DenseMatrix::from_fn(3, 3, |_, _| 1.0 / 3.0)) < 1e-15);
        assert!(dense.max_abs_diff(&dense_oracle(&tri)) < 1e-15);
    }

    #[test]
    fn normalize_matches_dense_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 5, 20, 50] {
            let g = random_graph(n, 0.2, &mut rng);
            let adj = normalize(&g);
            assert!(adj.to_dense().max_abs_diff(&dense_oracle(&g)) < 1e-15);
            for o in 0..n {
                for (j, w) in adj.row(o) {
                    assert_eq!(Some(w), adj.weight(j, o));
                }
            }
        }
    }

    #[test]
    fn propagate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = DenseMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let iso = normalize(&SparseGraph::empty(4));
        assert_eq!(iso.propagate(&h).unwrap(), h);

        let pair = normalize(&SparseGraph::new(2, [(0, 1)]).unwrap());
        let out = pair.propagate(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(out, DenseMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]));

        assert!(pair.propagate(&h).is_err());
    }

    #[test]
    fn propagate_matches_dense_product_and_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_graph(30, 0.15, &mut rng);
        let adj = normalize(&g);
        let h1 = DenseMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let h2 = DenseMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let p1 = adj.propagate(&h1).unwrap();
        let oracle = adj.to_dense().matmul(&h1).unwrap();
        assert!(p1.sub(&oracle).unwrap().frobenius_norm() < 1e-12);
        let sum = adj.propagate(&h1.add(&h2).unwrap()).unwrap();
        let parts = p1.add(&adj.propagate(&h2).unwrap()).unwrap();
        assert!(sum.max_abs_diff(&parts) < 1e-12);
    }
}
