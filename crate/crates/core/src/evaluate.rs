//! Accuracy metrics over the lower-triangular performance matrix, class
//! skew, and embedding drift between encoder checkpoints.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoder::GcnEncoder;
use crate::error::{AdrError, Result};
use crate::graph::TaskGraph;

/// `M[t][i]`: accuracy on task `i` after training through task `t`, `i ≤ t`.
/// A row may be left empty when it was never evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    rows: Vec<Vec<f64>>,
}

impl PerformanceMatrix {
    pub fn new(num_tasks: usize) -> Self {
        PerformanceMatrix {
            rows: vec![Vec::new(); num_tasks],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (t, r) in rows.into_iter().enumerate() {
            if !r.is_empty() {
                m.set_row(t, r)?;
            }
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn set_row(&mut self, t: usize, values: Vec<f64>) -> Result<()> {
        if t >= self.rows.len() || values.len() != t + 1 {
            return Err(AdrError::shape(
                "PerformanceMatrix::set_row",
                format!("row {t} needs {} entries, got {}", t + 1, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AdrError::Config(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows[t] = values;
        Ok(())
    }

    pub fn row(&self, t: usize) -> Option<&[f64]> {
        self.rows.get(t).filter(|r| !r.is_empty()).map(Vec::as_slice)
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.row(t).and_then(|r| r.get(i).copied())
    }

    pub fn is_complete(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| !r.is_empty())
    }

    fn complete_rows(&self) -> Result<&[Vec<f64>]> {
        if self.is_complete() {
            Ok(&self.rows)
        } else {
            Err(AdrError::EmptyMatrix)
        }
    }

    /// CSV with a `task` corner cell and `t0..tN−1` headers; upper-triangle
    /// and missing cells are empty.
    pub fn to_csv(&self) -> String {
        let n = self.rows.len();
        let mut s = String::from("task");
        for i in 0..n {
            write!(s, ",t{i}").unwrap();
        }
        s.push('\n');
        for t in 0..n {
            write!(s, "t{t}").unwrap();
            for i in 0..n {
                s.push(',');
                if let Some(v) = self.get(t, i) {
                    write!(s, "{v}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| AdrError::Parse {
            file: "<matrix csv>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let n = header.split(',').count() - 1;
        let mut rows = Vec::with_capacity(n);
        for (t, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n + 1 {
                return Err(bad(t + 2, "wrong number of cells"));
            }
            let mut row = Vec::new();
            for cell in &cells[1..] {
                if !cell.trim().is_empty() {
                    row.push(cell.trim().parse::<f64>().map_err(|_| bad(t + 2, "invalid number"))?);
                }
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(bad(n + 1, "row count does not match header"));
        }
        Self::from_rows(rows)
    }
}

/// `𝒜_t = (Σ_{i≤t} M[t][i]) / (t + 1)` for every row.
pub fn per_task_accuracy(m: &PerformanceMatrix) -> Result<Vec<f64>> {
    Ok(m.complete_rows()?
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect())
}

/// Mean of `𝒜_t` over all tasks.
pub fn avg_incremental_accuracy(m: &PerformanceMatrix) -> Result<f64> {
    let a = per_task_accuracy(m)?;
    Ok(a.iter().sum::<f64>() / a.len() as f64)
}

/// Mean of the last row.
pub fn final_accuracy(m: &PerformanceMatrix) -> Result<f64> {
    let n = m.num_tasks();
    let last = m.row(n.wrapping_sub(1)).ok_or(AdrError::EmptyMatrix)?;
    Ok(last.iter().sum::<f64>() / n as f64)
}

/// Mean of the diagonal, i.e. accuracy on each task right after learning it.
pub fn learning_accuracy(m: &PerformanceMatrix) -> Result<f64> {
    let rows = m.complete_rows()?;
    Ok(rows.iter().enumerate().map(|(t, r)| r[t]).sum::<f64>() / rows.len() as f64)
}

/// Largest over smallest class size among the task's nodes.
pub fn class_skew(task: &TaskGraph) -> Result<f64> {
    let counts = task.class_counts(None);
    for (&c, &n) in task.classes.iter().zip(&counts) {
        if n == 0 {
            return Err(AdrError::UndefinedSkew(c));
        }
    }
    let max = counts.iter().copied().max().ok_or(AdrError::EmptyMask("task classes"))?;
    let min = counts.iter().copied().min().expect("nonempty");
    Ok(max as f64 / min as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub task: usize,
    pub checkpoint: usize,
    /// Mean per-node L2 distance between the two encoders' embeddings.
    pub mean_l2: f64,
    /// `mean_l2` divided by the mean embedding norm of the task-time encoder.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub entries: Vec<DriftEntry>,
}

impl DriftReport {
    /// Mean normalized drift over pairs with `checkpoint > task`; 0 when
    /// there are none.
    pub fn summary(&self) -> f64 {
        let off: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.checkpoint > e.task)
            .map(|e| e.normalized)
            .collect();
        if off.is_empty() {
            0.0
        } else {
            off.iter().sum::<f64>() / off.len() as f64
        }
    }
}

/// Compares the embeddings that the encoder at time `i` produced for task `i`
/// with those of every later checkpoint `t ≥ i` on the same graph.
pub fn measure_drift(checkpoints: &[GcnEncoder], task_graphs: &[TaskGraph]) -> Result<DriftReport> {
    let mut entries = Vec::new();
    for (i, task) in task_graphs.iter().enumerate() {
        let base_enc = checkpoints.get(i).ok_or(AdrError::MissingCheckpoint(i))?;
        let base = base_enc.embed(&task.norm_adj, &task.features)?;
        let n = base.rows().max(1) as f64;
        let base_norm = (0..base.rows())
            .map(|r| base.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / n;
        for (t, enc) in checkpoints.iter().enumerate().skip(i) {
            let mean_l2 = if t == i {
                0.0
            } else {
                let other = enc.embed(&task.norm_adj, &task.features)?;
                (0..base.rows())
                    .map(|r| {
                        base.row(r)
                            .iter()
                            .zip(other.row(r))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .sum::<f64>()
                    / n
            };
            entries.push(DriftEntry {
                task: i,
                checkpoint: t,
                mean_l2,
                normalized: if base_norm > 0.0 { mean_l2 / base_norm } else { mean_l2 },
            });
        }
    }
    Ok(DriftReport { entries })
}

/// The metrics file written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "A_avg")]
    pub a_avg: Option<f64>,
    #[serde(rename = "A_f")]
    pub a_f: f64,
    #[serde(rename = "A_l")]
    pub a_l: Option<f64>,
    #[serde(rename = "per_task_A_t")]
    pub per_task_a_t: Vec<f64>,
    pub rho_t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
}

impl MetricsReport {
    /// Uses whatever rows are present: a matrix holding only its last row
    /// yields `A_f` alone.
    pub fn from_matrix(m: &PerformanceMatrix, rho_t: Vec<f64>, drift: Option<f64>) -> Result<Self> {
        let complete = m.is_complete();
        Ok(MetricsReport {
            a_avg: complete.then(|| avg_incremental_accuracy(m)).transpose()?,
            a_f: final_accuracy(m)?,
            a_l: complete.then(|| learning_accuracy(m)).transpose()?,
            per_task_a_t: if complete { per_task_accuracy(m)? } else { Vec::new() },
            rho_t,
            drift,
        })
    }
}
