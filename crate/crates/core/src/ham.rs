//! Layer-wise analytic merging of task encoders.
//!
//! For each layer the bank keeps `R_k = Σ_i Ĥ_{i,k}ᵀĤ_{i,k}` and
//! `Q_k = Σ_i Ĥ_{i,k}ᵀH_{i,k}`, where `Ĥ` is the propagated layer input and
//! `H = ĤW` the pre-activation output of the encoder trained on task `i`.
//! The merged layer is the ridge solution `(R_k + γI)⁻¹Q_k`, which equals the
//! ridge fit over all tasks' stacked `(Ĥ, H)` pairs without keeping them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AdrError, Result};
use crate::encoder::{GcnEncoder, GcnModel};
use crate::graph::TaskGraph;
use crate::linalg::{accumulate_cross, accumulate_gram, ridge_solve, spectral_sanity, DenseMatrix, SpectralReport};

/// Per-layer `(Ĥ_k, H_k)` from one eval-mode pass of a task encoder.
#[derive(Debug, Clone)]
pub struct LayerStatistics {
    pub inputs: Vec<DenseMatrix>,
    pub targets: Vec<DenseMatrix>,
}

impl LayerStatistics {
    pub fn num_layers(&self) -> usize {
        self.inputs.len()
    }
}

/// Single eval-mode forward of the freshly adapted task encoder over every
/// node of its task graph. Dropout is off.
pub fn collect_layer_statistics(model: &GcnModel, task: &TaskGraph) -> Result<LayerStatistics> {
    collect_encoder_statistics(&model.encoder, task)
}

pub fn collect_encoder_statistics(encoder: &GcnEncoder, task: &TaskGraph) -> Result<LayerStatistics> {
    let (inputs, targets, _) = encoder.forward_tapped(&task.norm_adj, &task.features)?;
    Ok(LayerStatistics { inputs, targets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderMemoryBank {
    r: Vec<DenseMatrix>,
    q: Vec<DenseMatrix>,
    task_count: usize,
}

impl EncoderMemoryBank {
    /// Empty bank for layers of the given `(d_in, d_out)` shapes.
    pub fn new(layer_dims: &[(usize, usize)]) -> Self {
        EncoderMemoryBank {
            r: layer_dims.iter().map(|&(i, _)| DenseMatrix::zeros(i, i)).collect(),
            q: layer_dims.iter().map(|&(i, o)| DenseMatrix::zeros(i, o)).collect(),
            task_count: 0,
        }
    }

    pub fn for_encoder(encoder: &GcnEncoder) -> Self {
        Self::new(&encoder.layer_dims())
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn num_layers(&self) -> usize {
        self.r.len()
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.q.iter().map(DenseMatrix::shape).collect()
    }

    pub fn autocorrelation(&self, k: usize) -> &DenseMatrix {
        &self.r[k]
    }

    pub fn cross_correlation(&self, k: usize) -> &DenseMatrix {
        &self.q[k]
    }

    /// Adds one task's statistics: `R_k += ĤᵀĤ`, `Q_k += ĤᵀH`.
    pub fn update(&mut self, stats: &LayerStatistics) -> Result<()> {
        if stats.inputs.len() != self.r.len() || stats.targets.len() != self.r.len() {
            return Err(AdrError::shape(
                "update_bank",
                format!("{} layers of statistics for a {}-layer bank", stats.inputs.len(), self.r.len()),
            ));
        }
        for (k, (x, t)) in stats.inputs.iter().zip(&stats.targets).enumerate() {
            if x.cols() != self.r[k].rows() || t.cols() != self.q[k].cols() || x.rows() != t.rows() {
                return Err(AdrError::shape(
                    "update_bank",
                    format!("layer {k}: Ĥ {:?}, H {:?}, Q {:?}", x.shape(), t.shape(), self.q[k].shape()),
                ));
            }
        }
        for (k, (x, t)) in stats.inputs.iter().zip(&stats.targets).enumerate() {
            accumulate_gram(&mut self.r[k], x);
            accumulate_cross(&mut self.q[k], x, t);
        }
        self.task_count += 1;
        Ok(())
    }

    /// Closed-form merge of every layer.
    pub fn merge(&self, gamma: f64) -> Result<MergedEncoder> {
        if self.task_count == 0 {
            return Err(AdrError::Config("cannot merge an empty encoder bank".into()));
        }
        let layers = self
            .r
            .iter()
            .zip(&self.q)
            .map(|(r, q)| ridge_solve(r, q, gamma))
            .collect::<Result<Vec<_>>>()?;
        Ok(MergedEncoder {
            encoder: GcnEncoder::from_layers(layers)?,
            gamma,
            task_count: self.task_count,
        })
    }

    pub fn matrices(&self) -> impl Iterator<Item = (String, &DenseMatrix)> {
        let rs = self.r.iter().enumerate().map(|(k, m)| (format!("R_{k}"), m));
        let qs = self.q.iter().enumerate().map(|(k, m)| (format!("Q_{k}"), m));
        rs.chain(qs)
    }

    /// Total size of the serialized matrices, in bytes.
    pub fn serialized_bytes(&self) -> usize {
        self.matrices().map(|(_, m)| 16 + 8 * m.rows() * m.cols()).sum()
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (_, m) in self.matrices() {
            h.update(m.to_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: impl AsRef<Path>, gamma: f64) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| AdrError::io(dir, e))?;
        for (name, m) in self.matrices() {
            m.save(dir.join(format!("{name}.bin")))?;
        }
        let manifest = BankManifest {
            kind: BankKind::Encoder,
            num_layers: self.num_layers(),
            layer_dims: self.layer_dims(),
            task_count: self.task_count,
            gamma,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    /// Loads a bank and the γ recorded with it.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, f64)> {
        let dir = dir.as_ref();
        let manifest: BankManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.kind != BankKind::Encoder {
            return Err(AdrError::Config(format!("{} is not an encoder bank", dir.display())));
        }
        let mut bank = EncoderMemoryBank::new(&manifest.layer_dims);
        for k in 0..manifest.num_layers {
            let r = DenseMatrix::load(dir.join(format!("R_{k}.bin")))?;
            let q = DenseMatrix::load(dir.join(format!("Q_{k}.bin")))?;
            if r.shape() != bank.r[k].shape() || q.shape() != bank.q[k].shape() {
                return Err(AdrError::shape("EncoderMemoryBank::load", format!("layer {k} does not match manifest")));
            }
            bank.r[k] = r;
            bank.q[k] = q;
        }
        bank.task_count = manifest.task_count;
        Ok((bank, manifest.gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankKind {
    Encoder,
    Classifier,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankManifest {
    kind: BankKind,
    num_layers: usize,
    layer_dims: Vec<(usize, usize)>,
    task_count: usize,
    gamma: f64,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| AdrError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| AdrError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads the `kind` field of a bank manifest in `dir`.
pub fn bank_kind(dir: impl AsRef<Path>) -> Result<BankKind> {
    #[derive(Deserialize)]
    struct Probe {
        kind: BankKind,
    }
    let probe: Probe = read_json(&dir.as_ref().join("manifest.json"))?;
    Ok(probe.kind)
}

/// Result of checking one checkpointed bank matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCheck {
    pub name: String,
    pub shape: Option<(usize, usize)>,
    /// Set for autocorrelation matrices.
    pub spectral: Option<SpectralReport>,
    pub failure: Option<String>,
}

impl MatrixCheck {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Loads every matrix named by the manifest in `dir` and checks it: each R
/// must be symmetric PSD, every matrix must be finite. A matrix that cannot
/// be read is reported as a failure under its name. Errors only when the
/// manifest itself is missing or malformed.
pub fn check_bank_dir(dir: impl AsRef<Path>) -> Result<(BankKind, Vec<MatrixCheck>)> {
    let dir = dir.as_ref();
    let kind = bank_kind(dir)?;
    let names: Vec<(String, bool)> = match kind {
        BankKind::Encoder => {
            let manifest: BankManifest = read_json(&dir.join("manifest.json"))?;
            (0..manifest.num_layers)
                .flat_map(|k| [(format!("R_{k}"), true), (format!("Q_{k}"), false)])
                .collect()
        }
        BankKind::Classifier => vec![("R_phi".to_string(), true), ("Q_phi".to_string(), false)],
    };
    let checks = names
        .into_iter()
        .map(|(name, auto)| {
            let m = match DenseMatrix::load(dir.join(format!("{name}.bin"))) {
                Ok(m) => m,
                Err(e) => {
                    return MatrixCheck {
                        name,
                        shape: None,
                        spectral: None,
                        failure: Some(e.to_string()),
                    }
                }
            };
            let mut failure = None;
            if !m.all_finite() {
                failure = Some("non-finite entries".to_string());
            }
            let spectral = auto.then(|| spectral_sanity(&m));
            if let Some(rep) = &spectral {
                if failure.is_none() && !rep.passes(m.max_abs()) {
                    failure = Some(format!(
                        "not symmetric PSD (asymmetry {:.3e}, min pivot {:.3e})",
                        rep.max_asymmetry, rep.min_pivot
                    ));
                }
            }
            MatrixCheck {
                name,
                shape: Some(m.shape()),
                spectral,
                failure,
            }
        })
        .collect();
    Ok((kind, checks))
}

/// Encoder produced by the closed-form merge.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedEncoder {
    pub encoder: GcnEncoder,
    pub gamma: f64,
    pub task_count: usize,
}

/// Merges `bank` and checks the result against `template`'s architecture.
pub fn merge(bank: &EncoderMemoryBank, gamma: f64, template: &GcnEncoder) -> Result<MergedEncoder> {
    if bank.layer_dims() != template.layer_dims() {
        return Err(AdrError::shape(
            "merge",
            format!("bank dims {:?} vs template {:?}", bank.layer_dims(), template.layer_dims()),
        ));
    }
    bank.merge(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, SparseGraph, Split};

    fn task_on(graph: SparseGraph, features: DenseMatrix) -> TaskGraph {
        let n = graph.num_nodes();
        TaskGraph {
            task_id: 0,
            classes: vec![0],
            node_ids: (0..n).collect(),
            norm_adj: normalize(&graph),
            graph,
            features,
            labels: vec![0; n],
            splits: vec![Split::Train; n],
        }
    }

    #[test]
    fn identity_isolated_statistics() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.0, 1.0]]);
        let task = task_on(SparseGraph::empty(3), x.clone());
        let enc = GcnEncoder::from_layers(vec![DenseMatrix::identity(2)]).unwrap();
        let stats = collect_encoder_statistics(&enc, &task).unwrap();
        assert_eq!(stats.inputs[0], x);
        assert_eq!(stats.targets[0], x);
    }

    #[test]
    fn targets_are_inputs_times_weights() {
        let g = SparseGraph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let x = DenseMatrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let task = task_on(g, x);
        let enc = GcnEncoder::init(3, &[5, 2], 4).unwrap();
        let stats = collect_encoder_statistics(&enc, &task).unwrap();
        for k in 0..2 {
            assert_eq!(stats.targets[k], stats.inputs[k].matmul(&enc.layers()[k]).unwrap());
        }
    }

    #[test]
    fn empty_bank_plus_one_task() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]);
        let w = DenseMatrix::from_rows(&[[0.5], [2.0]]);
        let stats = LayerStatistics {
            inputs: vec![x.clone()],
            targets: vec![x.matmul(&w).unwrap()],
        };
        let mut bank = EncoderMemoryBank::new(&[(2, 1)]);
        bank.update(&stats).unwrap();
        assert_eq!(bank.autocorrelation(0), &x.t_matmul(&x).unwrap());
        assert_eq!(bank.task_count(), 1);
    }

    #[test]
    fn architecture_change_rejected() {
        let mut bank = EncoderMemoryBank::new(&[(2, 3)]);
        let stats = LayerStatistics {
            inputs: vec![DenseMatrix::zeros(4, 3)],
            targets: vec![DenseMatrix::zeros(4, 3)],
        };
        assert!(bank.update(&stats).is_err());
        assert!(bank.merge(1.0).is_err(), "empty bank must not merge");
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = EncoderMemoryBank::new(&[(2, 2)]);
        let x = DenseMatrix::from_rows(&[[1.0, 0.5], [0.25, 2.0]]);
        bank.update(&LayerStatistics { inputs: vec![x.clone()], targets: vec![x] }).unwrap();
        bank.save(dir.path(), 0.1).unwrap();
        let (back, gamma) = EncoderMemoryBank::load(dir.path()).unwrap();
        assert_eq!(back, bank);
        assert_eq!(gamma, 0.1);
        assert_eq!(bank_kind(dir.path()).unwrap(), BankKind::Encoder);
    }
}
