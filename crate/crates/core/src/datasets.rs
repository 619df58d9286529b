//! Dataset ingestion, synthetic block-model generation and the
//! class-incremental task stream.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AdrError, Result};
use crate::graph::{induce_task_subgraph, SparseGraph, Split, TaskGraph};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub graph: SparseGraph,
    pub class_count: usize,
}

impl RawDataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, graph: SparseGraph) -> Result<Self> {
        if labels.len() != features.rows() || graph.num_nodes() != features.rows() {
            return Err(AdrError::shape(
                "RawDataset::new",
                format!(
                    "{} feature rows, {} labels, {} graph nodes",
                    features.rows(),
                    labels.len(),
                    graph.num_nodes()
                ),
            ));
        }
        if !features.all_finite() {
            return Err(AdrError::NonFinite("dataset features"));
        }
        let class_count = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(RawDataset {
            features,
            labels,
            graph,
            class_count,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn nodes_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| AdrError::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> AdrError {
    AdrError::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads `features.tsv`, `labels.tsv` and `edges.tsv` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<RawDataset> {
    let dir = dir.as_ref();
    let fpath = dir.join("features.tsv");
    let lpath = dir.join("labels.tsv");
    let epath = dir.join("edges.tsv");

    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (ln, line) in read_lines(&fpath)? {
        let mut count = 0;
        for tok in line.split('\t') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(&fpath, ln, format!("invalid float {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(&fpath, ln, "non-finite feature"));
            }
            data.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(parse_err(
                    &fpath,
                    ln,
                    format!("ragged feature row: {count} values, expected {d}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let features = DenseMatrix::from_vec(rows, dim.unwrap_or(0), data)?;

    let mut labels = Vec::with_capacity(rows);
    for (ln, line) in read_lines(&lpath)? {
        let v: i64 = line
            .trim()
            .parse()
            .map_err(|_| parse_err(&lpath, ln, format!("invalid label {line:?}")))?;
        if v < 0 {
            return Err(parse_err(&lpath, ln, format!("label out of range: {v}")));
        }
        if labels.len() == rows {
            return Err(parse_err(
                &lpath,
                ln,
                format!("more labels than the {rows} feature rows"),
            ));
        }
        labels.push(v as usize);
    }
    if labels.len() != rows {
        return Err(parse_err(
            &lpath,
            labels.len() + 1,
            format!("{} labels for {rows} feature rows", labels.len()),
        ));
    }

    let mut pairs = Vec::new();
    for (ln, line) in read_lines(&epath)? {
        let toks: Vec<&str> = line.split('\t').map(str::trim).collect();
        if toks.len() != 2 {
            return Err(parse_err(&epath, ln, "expected two node indices"));
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&toks) {
            let v: i64 = tok
                .parse()
                .map_err(|_| parse_err(&epath, ln, format!("invalid node index {tok:?}")))?;
            if v < 0 || v as usize >= rows {
                return Err(parse_err(
                    &epath,
                    ln,
                    format!("node index out of range: {v} (nodes: {rows})"),
                ));
            }
            *slot = v as usize;
        }
        pairs.push((ends[0], ends[1]));
    }
    let graph = SparseGraph::new(rows, pairs)?;
    RawDataset::new(features, labels, graph)
}

/// Writes the three TSV files read by [`load_dataset`].
pub fn save_dataset(ds: &RawDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| AdrError::io(dir, e))?;
    let write = |name: &str, text: String| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| AdrError::io(&p, e))?;
        Ok(p)
    };

    let mut f = String::new();
    for r in 0..ds.features.rows() {
        let row = ds.features.row(r);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                f.push('\t');
            }
            write!(f, "{v:?}").unwrap();
        }
        f.push('\n');
    }
    write("features.tsv", f)?;

    let mut l = String::new();
    for &y in &ds.labels {
        writeln!(l, "{y}").unwrap();
    }
    write("labels.tsv", l)?;

    let mut e = String::new();
    for &(a, b) in ds.graph.edges() {
        writeln!(e, "{a}\t{b}").unwrap();
    }
    write("edges.tsv", e)?;
    Ok(())
}

/// Stochastic block model with one block per class and Gaussian features
/// centred on a class-specific axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub blocks: Vec<usize>,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_intra) || !prob(self.p_inter) {
            return Err(AdrError::Config("SBM probabilities must lie in [0, 1]".into()));
        }
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err(AdrError::Config("SBM blocks must be nonempty and each ≥ 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(AdrError::Config("SBM feature_dim must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Nodes are laid out block by block; node `i` of block `c` has label `c`.
/// Class `c` features have mean `feature_shift · e_{c mod d}` and unit variance.
pub fn generate_sbm(spec: &SbmSpec) -> Result<RawDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = spec
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let n = labels.len();
    let d = spec.feature_dim;

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                spec.p_intra
            } else {
                spec.p_inter
            };
            if rng.random_bool(p) {
                pairs.push((i, j));
            }
        }
    }

    let features = DenseMatrix::from_fn(n, d, |i, j| {
        let noise: f64 = rng.sample(StandardNormal);
        let mean = if j == labels[i] % d {
            spec.feature_shift
        } else {
            0.0
        };
        mean + noise
    });
    RawDataset::new(features, labels, SparseGraph::new(n, pairs)?)
}

/// Class-to-task layout and per-class split ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStreamSpec {
    pub base_classes: usize,
    #[serde(default = "default_increment")]
    pub increment_classes: usize,
    #[serde(default = "default_split")]
    pub split_ratio: [f64; 3],
    #[serde(default)]
    pub seed: u64,
    /// Shuffle class order with `seed` before assigning tasks.
    #[serde(default)]
    pub shuffle_classes: bool,
}

fn default_increment() -> usize {
    2
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl TaskStreamSpec {
    pub fn new(base_classes: usize, increment_classes: usize, seed: u64) -> Self {
        TaskStreamSpec {
            base_classes,
            increment_classes,
            split_ratio: default_split(),
            seed,
            shuffle_classes: false,
        }
    }

    pub fn num_tasks(&self, class_count: usize) -> Result<usize> {
        let bad = || {
            AdrError::Config(format!(
                "class count mismatch: {} classes cannot be split as {} + k×{}",
                class_count, self.base_classes, self.increment_classes
            ))
        };
        if self.base_classes == 0 || self.base_classes > class_count {
            return Err(bad());
        }
        let rest = class_count - self.base_classes;
        if rest == 0 {
            return Ok(1);
        }
        if self.increment_classes == 0 || rest % self.increment_classes != 0 {
            return Err(bad());
        }
        Ok(1 + rest / self.increment_classes)
    }

    fn validate_ratio(&self) -> Result<()> {
        let r = self.split_ratio;
        if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(AdrError::Config(format!(
                "split ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }

    /// Class ids per task, in stream order.
    pub fn class_partition(&self, class_count: usize) -> Result<Vec<Vec<usize>>> {
        let tasks = self.num_tasks(class_count)?;
        let mut order: Vec<usize> = (0..class_count).collect();
        if self.shuffle_classes {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_c1a5);
            order.shuffle(&mut rng);
        }
        let mut out = vec![order[..self.base_classes].to_vec()];
        for t in 1..tasks {
            let start = self.base_classes + (t - 1) * self.increment_classes;
            out.push(order[start..start + self.increment_classes].to_vec());
        }
        Ok(out)
    }
}

/// `(train, val, test)` node counts for a class of `n` nodes: train takes
/// `⌈r₀n⌉`, val `⌈r₁n⌉` capped by what is left, test the remainder.
pub fn split_counts(n: usize, ratio: [f64; 3]) -> (usize, usize, usize) {
    let up = |x: f64| (x - 1e-9).ceil().max(0.0) as usize;
    let train = up(ratio[0] * n as f64).min(n);
    let val = up(ratio[1] * n as f64).min(n - train);
    (train, val, n - train - val)
}

/// Per-dataset-node split assignment, shuffled within each class.
pub fn assign_splits(ds: &RawDataset, ratio: [f64; 3], seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Test; ds.num_nodes()];
    for c in 0..ds.class_count {
        let mut nodes = ds.nodes_of_class(c);
        nodes.shuffle(&mut rng);
        let (train, val, _) = split_counts(nodes.len(), ratio);
        for (k, &node) in nodes.iter().enumerate() {
            splits[node] = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    splits
}

pub fn build_task_stream(ds: &RawDataset, spec: &TaskStreamSpec) -> Result<Vec<TaskGraph>> {
    spec.validate_ratio()?;
    let partition = spec.class_partition(ds.class_count)?;
    let splits = assign_splits(ds, spec.split_ratio, spec.seed);
    let mut seen = vec![false; ds.class_count];
    let mut tasks = Vec::with_capacity(partition.len());
    for (t, classes) in partition.iter().enumerate() {
        for &c in classes {
            if std::mem::replace(&mut seen[c], true) {
                return Err(AdrError::ClassOverlap(c));
            }
        }
        tasks.push(induce_task_subgraph(ds, classes, t, &splits)?);
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block(p_intra: f64, p_inter: f64) -> SbmSpec {
        SbmSpec {
            blocks: vec![2, 2],
            p_intra,
            p_inter,
            feature_dim: 3,
            feature_shift: 2.0,
            seed: 11,
        }
    }

    #[test]
    fn sbm_cliques_and_empty() {
        let ds = generate_sbm(&two_block(1.0, 0.0)).unwrap();
        assert_eq!(ds.graph.edges(), &[(0, 1), (2, 3)]);
        assert_eq!(ds.labels, vec![0, 0, 1, 1]);
        assert_eq!(ds.class_count, 2);
        let ds = generate_sbm(&two_block(0.0, 0.0)).unwrap();
        assert_eq!(ds.graph.num_edges(), 0);
    }

    #[test]
    fn sbm_is_seeded() {
        let spec = SbmSpec {
            blocks: vec![10, 12, 9],
            p_intra: 0.3,
            p_inter: 0.05,
            feature_dim: 4,
            feature_shift: 1.5,
            seed: 3,
        };
        assert_eq!(generate_sbm(&spec).unwrap(), generate_sbm(&spec).unwrap());
        let other = SbmSpec { seed: 4, ..spec.clone() };
        assert_ne!(generate_sbm(&spec).unwrap(), generate_sbm(&other).unwrap());
    }

    #[test]
    fn sbm_rejects_bad_spec() {
        assert!(generate_sbm(&two_block(1.5, 0.0)).is_err());
        let mut s = two_block(0.5, 0.1);
        s.blocks = vec![3, 0];
        assert!(generate_sbm(&s).is_err());
    }

    #[test]
    fn split_rounding() {
        assert_eq!(split_counts(10, [0.6, 0.2, 0.2]), (6, 2, 2));
        assert_eq!(split_counts(5, [0.6, 0.2, 0.2]), (3, 1, 1));
        assert_eq!(split_counts(8, [0.6, 0.2, 0.2]), (5, 2, 1));
        assert_eq!(split_counts(1, [0.6, 0.2, 0.2]), (1, 0, 0));
    }

    #[test]
    fn stream_task_counts() {
        // 15 classes as 5 + 5×2, 70 as 30 + 20×2
        assert_eq!(TaskStreamSpec::new(5, 2, 0).num_tasks(15).unwrap(), 6);
        assert_eq!(TaskStreamSpec::new(30, 2, 0).num_tasks(70).unwrap(), 21);
        assert!(TaskStreamSpec::new(5, 2, 0).num_tasks(14).is_err());
        let p = TaskStreamSpec::new(2, 2, 0).class_partition(4).unwrap();
        assert_eq!(p, vec![vec![0, 1], vec![2, 3]]);
    }
}
