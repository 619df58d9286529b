//! Analytic classifier reconstruction: a frozen random feature buffer, the
//! classifier-side correlation bank, and the closed-form classifier solve.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{argmax_class, GcnEncoder};
use crate::error::{AdrError, Result};
use crate::ham::{read_json, write_json, BankKind};
use crate::linalg::{accumulate_cross, accumulate_gram, ridge_solve, DenseMatrix};

/// Expansion factors accepted in grid configurations.
pub const ALPHA_GRID: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// `H ↦ ReLU(H W_ψ)` with `W_ψ` drawn once and never updated. With `α = 1`
/// the buffer is the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBuffer {
    projection: Option<DenseMatrix>,
    input_dim: usize,
    alpha: usize,
    seed: u64,
}

impl FeatureBuffer {
    /// Gaussian entries with standard deviation `1/√input_dim`.
    pub fn new(input_dim: usize, alpha: usize, seed: u64) -> Result<Self> {
        if alpha == 0 {
            return Err(AdrError::Config("feature expansion factor must be ≥ 1".into()));
        }
        let projection = (alpha > 1).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let std = 1.0 / (input_dim.max(1) as f64).sqrt();
            DenseMatrix::from_fn(input_dim, alpha * input_dim, |_, _| {
                std * rng.sample::<f64, _>(StandardNormal)
            })
        });
        Ok(FeatureBuffer {
            projection,
            input_dim,
            alpha,
            seed,
        })
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.alpha * self.input_dim
    }

    pub fn projection(&self) -> Option<&DenseMatrix> {
        self.projection.as_ref()
    }

    pub fn expand(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.cols() != self.input_dim {
            return Err(AdrError::shape(
                "expand",
                format!("{} embedding columns, buffer expects {}", h.cols(), self.input_dim),
            ));
        }
        match &self.projection {
            None => Ok(h.clone()),
            Some(w) => Ok(h.matmul(w)?.relu()),
        }
    }
}

/// One-hot targets: row `i` has a 1 in the column of `classes` matching
/// `labels[i]`.
pub fn one_hot(labels: &[usize], classes: &[usize]) -> Result<DenseMatrix> {
    let mut y = DenseMatrix::zeros(labels.len(), classes.len());
    for (i, &l) in labels.iter().enumerate() {
        let c = classes
            .iter()
            .position(|&c| c == l)
            .ok_or(AdrError::UnknownClass(l))?;
        y.set(i, c, 1.0);
    }
    Ok(y)
}

/// `R_φ = Σ H_Bᵀ H_B` and `Q_φ = Σ H_Bᵀ Y` over all tasks so far. `Q_φ`
/// gains columns as classes arrive.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierMemoryBank {
    r: DenseMatrix,
    q: DenseMatrix,
    seen_classes: Vec<usize>,
    task_count: usize,
}

impl ClassifierMemoryBank {
    pub fn new(feature_dim: usize) -> Self {
        ClassifierMemoryBank {
            r: DenseMatrix::zeros(feature_dim, feature_dim),
            q: DenseMatrix::zeros(feature_dim, 0),
            seen_classes: Vec::new(),
            task_count: 0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.r.rows()
    }

    pub fn seen_classes(&self) -> &[usize] {
        &self.seen_classes
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn autocorrelation(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn cross_correlation(&self) -> &DenseMatrix {
        &self.q
    }

    /// Accumulates one task. `y` columns correspond to `new_classes`, none
    /// of which may have been seen before.
    pub fn update(&mut self, h_b: &DenseMatrix, y: &DenseMatrix, new_classes: &[usize]) -> Result<()> {
        if h_b.cols() != self.feature_dim() || h_b.rows() != y.rows() || y.cols() != new_classes.len() {
            return Err(AdrError::shape(
                "update_classifier_bank",
                format!("H_B {:?}, Y {:?}, {} new classes, bank dim {}", h_b.shape(), y.shape(), new_classes.len(), self.feature_dim()),
            ));
        }
        for (i, &c) in new_classes.iter().enumerate() {
            if self.seen_classes.contains(&c) || new_classes[..i].contains(&c) {
                return Err(AdrError::ClassOverlap(c));
            }
        }
        let old = self.q.cols();
        let mut q = self.q.pad_cols(new_classes.len());
        // Labels are disjoint across tasks, so only the new columns get mass.
        let mut y_full = DenseMatrix::zeros(y.rows(), old + y.cols());
        for r in 0..y.rows() {
            y_full.row_mut(r)[old..].copy_from_slice(y.row(r));
        }
        accumulate_cross(&mut q, h_b, &y_full);
        accumulate_gram(&mut self.r, h_b);
        self.q = q;
        self.seen_classes.extend_from_slice(new_classes);
        self.task_count += 1;
        Ok(())
    }

    /// `(R_φ + γI)⁻¹ Q_φ`; column `j` scores `seen_classes[j]`.
    pub fn reconstruct(&self, gamma: f64) -> Result<DenseMatrix> {
        if self.task_count == 0 {
            return Err(AdrError::Config("cannot reconstruct from an empty classifier bank".into()));
        }
        ridge_solve(&self.r, &self.q, gamma)
    }

    pub fn serialized_bytes(&self) -> usize {
        32 + 8 * (self.r.rows() * self.r.cols() + self.q.rows() * self.q.cols())
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.r.to_bytes());
        h.update(self.q.to_bytes());
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: impl AsRef<Path>, buffer: &FeatureBuffer, gamma: f64) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| AdrError::io(dir, e))?;
        self.r.save(dir.join("R_phi.bin"))?;
        self.q.save(dir.join("Q_phi.bin"))?;
        let manifest = ClassifierBankManifest {
            kind: BankKind::Classifier,
            seen_classes: self.seen_classes.clone(),
            task_count: self.task_count,
            alpha: buffer.alpha,
            buffer_input_dim: buffer.input_dim,
            buffer_seed: buffer.seed,
            gamma,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    /// Loads the bank and rebuilds its feature buffer from the recorded seed.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, FeatureBuffer, f64)> {
        let dir = dir.as_ref();
        let m: ClassifierBankManifest = read_json(&dir.join("manifest.json"))?;
        if m.kind != BankKind::Classifier {
            return Err(AdrError::Config(format!("{} is not a classifier bank", dir.display())));
        }
        let r = DenseMatrix::load(dir.join("R_phi.bin"))?;
        let q = DenseMatrix::load(dir.join("Q_phi.bin"))?;
        let buffer = FeatureBuffer::new(m.buffer_input_dim, m.alpha, m.buffer_seed)?;
        if !r.is_square() || r.rows() != q.rows() || q.cols() != m.seen_classes.len() || r.rows() != buffer.output_dim() {
            return Err(AdrError::shape("ClassifierMemoryBank::load", "matrices do not match manifest"));
        }
        Ok((
            ClassifierMemoryBank {
                r,
                q,
                seen_classes: m.seen_classes,
                task_count: m.task_count,
            },
            buffer,
            m.gamma,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierBankManifest {
    kind: BankKind,
    seen_classes: Vec<usize>,
    task_count: usize,
    alpha: usize,
    buffer_input_dim: usize,
    buffer_seed: u64,
    gamma: f64,
}

pub fn reconstruct_classifier(bank: &ClassifierMemoryBank, gamma: f64) -> Result<DenseMatrix> {
    bank.reconstruct(gamma)
}

/// Class scores `expand(embeddings) · W_φ`.
pub fn class_scores(buffer: &FeatureBuffer, classifier: &DenseMatrix, embeddings: &DenseMatrix) -> Result<DenseMatrix> {
    buffer.expand(embeddings)?.matmul(classifier)
}

/// Predicted class id per row of `embeddings`; ties go to the lowest id.
pub fn predict_from_embeddings(
    buffer: &FeatureBuffer,
    classifier: &DenseMatrix,
    classes: &[usize],
    embeddings: &DenseMatrix,
) -> Result<Vec<usize>> {
    if classifier.cols() != classes.len() {
        return Err(AdrError::shape("predict", "classifier width vs class list"));
    }
    let scores = class_scores(buffer, classifier, embeddings)?;
    Ok((0..scores.rows())
        .map(|r| argmax_class(scores.row(r), classes))
        .collect())
}

/// Full prediction: encoder forward, buffer expansion, linear classifier.
pub fn predict(
    encoder: &GcnEncoder,
    buffer: &FeatureBuffer,
    classifier: &DenseMatrix,
    classes: &[usize],
    adj: &crate::graph::NormalizedAdjacency,
    features: &DenseMatrix,
) -> Result<Vec<usize>> {
    let h = encoder.embed(adj, features)?;
    predict_from_embeddings(buffer, classifier, classes, &h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_one_is_identity() {
        let b = FeatureBuffer::new(3, 1, 9).unwrap();
        let h = DenseMatrix::from_rows(&[[-1.0, 2.0, 0.5]]);
        assert_eq!(b.expand(&h).unwrap(), h);
        assert!(b.projection().is_none());
    }

    #[test]
    fn zero_in_zero_out() {
        let b = FeatureBuffer::new(4, 8, 1).unwrap();
        let out = b.expand(&DenseMatrix::zeros(5, 4)).unwrap();
        assert_eq!(out, DenseMatrix::zeros(5, 32));
        assert!(b.expand(&DenseMatrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn buffer_is_seeded() {
        let a = FeatureBuffer::new(6, 4, 42).unwrap();
        let b = FeatureBuffer::new(6, 4, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, FeatureBuffer::new(6, 4, 43).unwrap());
    }

    #[test]
    fn orthonormal_update() {
        let mut bank = ClassifierMemoryBank::new(3);
        let i3 = DenseMatrix::identity(3);
        bank.update(&i3, &i3, &[0, 1, 2]).unwrap();
        assert_eq!(bank.autocorrelation(), &i3);
        assert_eq!(bank.cross_correlation(), &i3);
        assert_eq!(bank.reconstruct(0.0).unwrap(), i3);
    }

    #[test]
    fn overlapping_classes_rejected() {
        let mut bank = ClassifierMemoryBank::new(2);
        let h = DenseMatrix::identity(2);
        bank.update(&h, &DenseMatrix::identity(2), &[0, 1]).unwrap();
        let y = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(bank.update(&h, &y, &[1, 2]), Err(AdrError::ClassOverlap(1))));
    }

    #[test]
    fn single_class_bank_predicts_that_class() {
        let mut bank = ClassifierMemoryBank::new(2);
        let h = DenseMatrix::from_rows(&[[1.0, 0.2], [0.3, 1.0], [0.5, 0.5]]);
        bank.update(&h, &one_hot(&[7, 7, 7], &[7]).unwrap(), &[7]).unwrap();
        let w = bank.reconstruct(0.1).unwrap();
        let buf = FeatureBuffer::new(2, 1, 0).unwrap();
        let pred = predict_from_embeddings(&buf, &w, bank.seen_classes(), &h).unwrap();
        assert_eq!(pred, vec![7, 7, 7]);
    }

    #[test]
    fn orthogonal_embeddings_recovered() {
        let mut bank = ClassifierMemoryBank::new(2);
        let h = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0]]);
        let labels = [4, 9, 4, 9];
        bank.update(&h, &one_hot(&labels, &[4, 9]).unwrap(), &[4, 9]).unwrap();
        let w = bank.reconstruct(0.01).unwrap();
        let buf = FeatureBuffer::new(2, 1, 0).unwrap();
        assert_eq!(predict_from_embeddings(&buf, &w, bank.seen_classes(), &h).unwrap(), labels);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let buf = FeatureBuffer::new(2, 2, 5).unwrap();
        let mut bank = ClassifierMemoryBank::new(4);
        let h = buf.expand(&DenseMatrix::from_rows(&[[1.0, -0.5], [0.2, 0.9]])).unwrap();
        bank.update(&h, &one_hot(&[3, 1], &[1, 3]).unwrap(), &[1, 3]).unwrap();
        bank.save(dir.path(), &buf, 0.5).unwrap();
        let (b2, buf2, gamma) = ClassifierMemoryBank::load(dir.path()).unwrap();
        assert_eq!(b2, bank);
        assert_eq!(buf2, buf);
        assert_eq!(gamma, 0.5);
    }
}
