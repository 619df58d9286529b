//! Grid sweep over γ × α × seed, scored on the validation split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acr::ALPHA_GRID;
use crate::config::{gamma_on_grid, ExperimentConfig, Seeds};
use crate::continual::{run_with_observer, write_outputs};
use crate::error::{AdrError, Result};
use crate::graph::Split;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub gammas: Vec<f64>,
    pub alphas: Vec<usize>,
    /// Each seed expands to a full seed set via [`Seeds::from_base`].
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AdrError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.gammas.is_empty() || self.alphas.is_empty() || self.seeds.is_empty() {
            return Err(AdrError::Config("gammas, alphas and seeds must be nonempty".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !gamma_on_grid(**g)) {
            return Err(AdrError::Config(format!("gamma {g} is not on the grid 1e-3, 1e-2, 1e-1, 1")));
        }
        if let Some(a) = self.alphas.iter().find(|a| !ALPHA_GRID.contains(a)) {
            return Err(AdrError::Config(format!("alpha {a} is not a power of two in 1..=64")));
        }
        if self.workers == 0 {
            return Err(AdrError::Config("workers must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Grid points in table order: γ outermost, then α, then seed.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &gamma in &self.gammas {
            for &alpha in &self.alphas {
                for &seed in &self.seeds {
                    out.push(GridPoint { gamma, alpha, seed });
                }
            }
        }
        out
    }

    fn config_for(&self, p: &GridPoint) -> ExperimentConfig {
        let mut c = self.base.clone();
        c.gamma = p.gamma;
        c.alpha = p.alpha;
        c.seeds = Seeds::from_base(p.seed);
        c.eval_split = Split::Val;
        c.output_dir = None;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma: f64,
    pub alpha: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: GridPoint,
    pub a_avg_val: Option<f64>,
    pub a_f_val: Option<f64>,
    /// `ok`, or the error message of a failed run.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub gamma: f64,
    pub alpha: usize,
    pub runs: usize,
    pub mean_a_avg_val: f64,
    pub std_a_avg_val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gamma,alpha,seed,A_avg_val,A_f_val,status\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.point.gamma,
                r.point.alpha,
                r.point.seed,
                opt(r.a_avg_val),
                opt(r.a_f_val),
                r.status.replace([',', '\n'], ";")
            ));
        }
        s
    }

    /// Mean and population standard deviation of validation 𝒜_avg per
    /// (γ, α) cell, over the runs that succeeded. Cells keep table order.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut cells: Vec<(f64, usize, Vec<f64>)> = Vec::new();
        for r in &self.rows {
            let idx = match cells
                .iter()
                .position(|(g, a, _)| *g == r.point.gamma && *a == r.point.alpha)
            {
                Some(i) => i,
                None => {
                    cells.push((r.point.gamma, r.point.alpha, Vec::new()));
                    cells.len() - 1
                }
            };
            if let Some(v) = r.a_avg_val {
                cells[idx].2.push(v);
            }
        }
        cells
            .into_iter()
            .filter(|(_, _, v)| !v.is_empty())
            .map(|(gamma, alpha, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                CellSummary {
                    gamma,
                    alpha,
                    runs: v.len(),
                    mean_a_avg_val: mean,
                    std_a_avg_val: var.sqrt(),
                }
            })
            .collect()
    }

    /// Cell with the highest mean validation 𝒜_avg; the first such cell in
    /// table order wins ties.
    pub fn best(&self) -> Option<CellSummary> {
        self.summary().into_iter().fold(None, |best, c| match best {
            Some(b) if b.mean_a_avg_val >= c.mean_a_avg_val => Some(b),
            _ => Some(c),
        })
    }
}

fn run_point(cfg: &SweepConfig, p: &GridPoint, out_dir: Option<&Path>) -> SweepRow {
    let exp_cfg = cfg.config_for(p);
    let outcome = run_with_observer(&exp_cfg, &mut ()).map_err(|f| f.to_string()).and_then(|(record, _)| {
        if let Some(dir) = out_dir {
            let sub = dir.join(format!("gamma_{}_alpha_{}_seed_{}", p.gamma, p.alpha, p.seed));
            write_outputs(&record, &sub).map_err(|e| e.to_string())?;
        }
        Ok(record)
    });
    match outcome {
        Ok(record) => {
            let m = record.metrics.as_ref();
            SweepRow {
                point: *p,
                a_avg_val: m.and_then(|m| m.a_avg),
                a_f_val: m.map(|m| m.a_f),
                status: "ok".into(),
            }
        }
        Err(msg) => {
            log::warn!("grid point γ={} α={} seed={} failed: {msg}", p.gamma, p.alpha, p.seed);
            SweepRow {
                point: *p,
                a_avg_val: None,
                a_f_val: None,
                status: msg,
            }
        }
    }
}

/// Runs every grid point on a pool of `cfg.workers` threads. A failed point
/// is recorded in its row and does not stop the sweep. When `out_dir` is
/// given each point writes its outputs to its own subdirectory.
pub fn run_sweep(cfg: &SweepConfig, out_dir: Option<&Path>) -> Result<SweepTable> {
    use rayon::prelude::*;
    cfg.validate()?;
    let points = cfg.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| AdrError::Config(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| points.par_iter().map(|p| run_point(cfg, p, out_dir)).collect());
    Ok(SweepTable { rows })
}

pub fn write_sweep(table: &SweepTable, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| AdrError::io(dir, e))?;
    let csv = dir.join("sweep.csv");
    std::fs::write(&csv, table.to_csv()).map_err(|e| AdrError::io(&csv, e))?;
    let summary = serde_json::json!({
        "cells": table.summary(),
        "best": table.best(),
    });
    let path = dir.join("sweep_summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| AdrError::io(&path, e))?;
    Ok(())
}
