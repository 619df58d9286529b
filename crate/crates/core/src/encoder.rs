//! K-layer GCN encoder with a linear classifier head, trained per task with
//! cross-entropy and Adam.
//!
//! Layer `k` computes `Ĥ_k = Â·Z_{k−1}` (with `Z_{−1} = X`), the
//! pre-activation `H_k = Ĥ_k W_k`, and `Z_k = dropout(ReLU(H_k))`. The
//! classifier maps the final embeddings `Z_{K−1}` to logits. There are no
//! bias terms anywhere.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdrError, Result};
use crate::graph::{NormalizedAdjacency, Split, TaskGraph};
use crate::linalg::DenseMatrix;

/// The message-passing part of the model: one weight matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnEncoder {
    layers: Vec<DenseMatrix>,
}

impl GcnEncoder {
    pub fn from_layers(layers: Vec<DenseMatrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(AdrError::Config("encoder needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(AdrError::shape(
                    "GcnEncoder",
                    format!("layer dims do not chain: {:?} then {:?}", w[0].shape(), w[1].shape()),
                ));
            }
        }
        Ok(GcnEncoder { layers })
    }

    /// Uniform weights with variance `1/d_in` per layer.
    pub fn init(in_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d_in = in_dim;
        for &d_out in hidden {
            let limit = (3.0 / d_in.max(1) as f64).sqrt();
            layers.push(DenseMatrix::from_fn(d_in, d_out, |_, _| {
                rng.random_range(-limit..limit)
            }));
            d_in = d_out;
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseMatrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].cols()
    }

    /// `(d_in, d_out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(DenseMatrix::shape).collect()
    }

    /// Eval-mode forward returning the per-layer `(Ĥ_k, H_k)` pairs and the
    /// final post-activation embeddings.
    pub fn forward_tapped(
        &self,
        adj: &NormalizedAdjacency,
        features: &DenseMatrix,
    ) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>, DenseMatrix)> {
        let pass = run_layers(&self.layers, adj, features, None, 0.0)?;
        let embeddings = pass.hidden.last().cloned().expect("≥ 1 layer");
        Ok((pass.agg_inputs, pass.pre_acts, embeddings))
    }

    /// Final post-activation embeddings, eval mode.
    pub fn embed(&self, adj: &NormalizedAdjacency, features: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_tapped(adj, features)?.2)
    }
}

/// Encoder plus classifier. Classifier column `j` scores `classes[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub encoder: GcnEncoder,
    pub classifier: DenseMatrix,
    pub classes: Vec<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl GcnModel {
    pub fn new(in_dim: usize, hidden: &[usize], dropout: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(AdrError::Config(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let encoder = GcnEncoder::init(in_dim, hidden, seed)?;
        let width = encoder.out_dim();
        Ok(GcnModel {
            encoder,
            classifier: DenseMatrix::zeros(width, 0),
            classes: Vec::new(),
            dropout,
            seed,
        })
    }

    /// Appends a zero-initialized classifier column for each class not yet
    /// present.
    pub fn ensure_classes(&mut self, classes: &[usize]) {
        let fresh: Vec<usize> = classes
            .iter()
            .copied()
            .filter(|c| !self.classes.contains(c))
            .collect();
        if !fresh.is_empty() {
            self.classifier = self.classifier.pad_cols(fresh.len());
            self.classes.extend(fresh);
        }
    }

    pub fn column_of(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn num_params(&self) -> usize {
        self.encoder
            .layers
            .iter()
            .chain(std::iter::once(&self.classifier))
            .map(|m| m.rows() * m.cols())
            .sum()
    }

    /// Writes `layer_<k>.bin`, `classifier.bin` and `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| AdrError::io(dir, e))?;
        for (k, w) in self.encoder.layers.iter().enumerate() {
            w.save(dir.join(format!("layer_{k}.bin")))?;
        }
        self.classifier.save(dir.join("classifier.bin"))?;
        let manifest = ModelManifest {
            layer_dims: self.encoder.layer_dims(),
            activation: "relu".into(),
            dropout: self.dropout,
            seed: self.seed,
            classes: self.classes.clone(),
        };
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| AdrError::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("manifest.json");
        let text = fs::read_to_string(&p).map_err(|e| AdrError::io(&p, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text)?;
        let mut layers = Vec::new();
        for (k, &dims) in manifest.layer_dims.iter().enumerate() {
            let w = DenseMatrix::load(dir.join(format!("layer_{k}.bin")))?;
            if w.shape() != dims {
                return Err(AdrError::shape("GcnModel::load", format!("layer {k} is {:?}, manifest says {dims:?}", w.shape())));
            }
            layers.push(w);
        }
        let encoder = GcnEncoder::from_layers(layers)?;
        let classifier = DenseMatrix::load(dir.join("classifier.bin"))?;
        if classifier.shape() != (encoder.out_dim(), manifest.classes.len()) {
            return Err(AdrError::shape("GcnModel::load", "classifier does not match manifest"));
        }
        Ok(GcnModel {
            encoder,
            classifier,
            classes: manifest.classes,
            dropout: manifest.dropout,
            seed: manifest.seed,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    layer_dims: Vec<(usize, usize)>,
    activation: String,
    dropout: f64,
    seed: u64,
    classes: Vec<usize>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct TappedForward {
    /// `Ĥ_k`, the propagated layer inputs.
    pub agg_inputs: Vec<DenseMatrix>,
    /// `H_k = Ĥ_k W_k`.
    pub pre_acts: Vec<DenseMatrix>,
    /// `Z_k`, post-activation (and post-dropout in train mode).
    pub hidden: Vec<DenseMatrix>,
    /// Inverted-dropout multipliers per layer; `None` for eval passes.
    pub dropout_masks: Option<Vec<DenseMatrix>>,
    pub logits: DenseMatrix,
}

impl TappedForward {
    pub fn embeddings(&self) -> &DenseMatrix {
        self.hidden.last().expect("≥ 1 layer")
    }
}

pub enum ForwardMode<'a> {
    Eval,
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut ChaCha8Rng),
}

struct LayerPass {
    agg_inputs: Vec<DenseMatrix>,
    pre_acts: Vec<DenseMatrix>,
    hidden: Vec<DenseMatrix>,
    masks: Option<Vec<DenseMatrix>>,
}

fn run_layers(
    layers: &[DenseMatrix],
    adj: &NormalizedAdjacency,
    features: &DenseMatrix,
    mut rng: Option<&mut ChaCha8Rng>,
    dropout: f64,
) -> Result<LayerPass> {
    if features.cols() != layers[0].rows() {
        return Err(AdrError::shape(
            "forward",
            format!("features have {} columns, first layer expects {}", features.cols(), layers[0].rows()),
        ));
    }
    let mut pass = LayerPass {
        agg_inputs: Vec::with_capacity(layers.len()),
        pre_acts: Vec::with_capacity(layers.len()),
        hidden: Vec::with_capacity(layers.len()),
        masks: rng.as_ref().map(|_| Vec::with_capacity(layers.len())),
    };
    for w in layers {
        let input = pass.hidden.last().unwrap_or(features);
        let agg = adj.propagate(input)?;
        let pre = agg.matmul(w)?;
        let mut z = pre.relu();
        if let (Some(rng), Some(masks)) = (rng.as_deref_mut(), pass.masks.as_mut()) {
            let keep = 1.0 - dropout;
            let mask = DenseMatrix::from_fn(z.rows(), z.cols(), |_, _| {
                if dropout == 0.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            for (v, m) in z.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
            masks.push(mask);
        }
        pass.agg_inputs.push(agg);
        pass.pre_acts.push(pre);
        pass.hidden.push(z);
    }
    Ok(pass)
}

pub fn forward_tapped(
    model: &GcnModel,
    adj: &NormalizedAdjacency,
    features: &DenseMatrix,
    mode: ForwardMode<'_>,
) -> Result<TappedForward> {
    let rng = match mode {
        ForwardMode::Eval => None,
        ForwardMode::Train(rng) => Some(rng),
    };
    let pass = run_layers(&model.encoder.layers, adj, features, rng, model.dropout)?;
    let logits = pass.hidden.last().expect("≥ 1 layer").matmul(&model.classifier)?;
    Ok(TappedForward {
        agg_inputs: pass.agg_inputs,
        pre_acts: pass.pre_acts,
        hidden: pass.hidden,
        dropout_masks: pass.masks,
        logits,
    })
}

/// Which rows and columns of the logits a loss looks at.
///
/// `targets[i]` indexes into `columns` and is the true class of node
/// `nodes[i]`; softmax runs over `columns` only.
#[derive(Debug, Clone)]
pub struct LossSelection<'a> {
    pub nodes: &'a [usize],
    pub targets: &'a [usize],
    pub columns: &'a [usize],
}

impl LossSelection<'_> {
    fn check(&self, logits: &DenseMatrix) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(AdrError::EmptyMask("loss node set"));
        }
        if self.nodes.len() != self.targets.len() {
            return Err(AdrError::shape("cross_entropy", "nodes and targets differ in length"));
        }
        if self.columns.is_empty()
            || self.columns.iter().any(|&c| c >= logits.cols())
            || self.nodes.iter().any(|&n| n >= logits.rows())
            || self.targets.iter().any(|&t| t >= self.columns.len())
        {
            return Err(AdrError::shape("cross_entropy", "selection out of range"));
        }
        Ok(())
    }
}

/// Mean `−log softmax` of the true class, plus `∂loss/∂logits`.
pub fn cross_entropy_with_grad(logits: &DenseMatrix, sel: &LossSelection<'_>) -> Result<(f64, DenseMatrix)> {
    sel.check(logits)?;
    let b = sel.nodes.len() as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    let mut probs = vec![0.0; sel.columns.len()];
    for (&n, &t) in sel.nodes.iter().zip(sel.targets) {
        let row = logits.row(n);
        let max = sel.columns.iter().map(|&c| row[c]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &c) in probs.iter_mut().zip(sel.columns) {
            *p = (row[c] - max).exp();
            z += *p;
        }
        total += z.ln() + max - row[sel.columns[t]];
        let g = grad.row_mut(n);
        for (j, (&p, &c)) in probs.iter().zip(sel.columns).enumerate() {
            let onehot = if j == t { 1.0 } else { 0.0 };
            g[c] += (p / z - onehot) / b;
        }
    }
    let loss = total / b;
    if !loss.is_finite() {
        return Err(AdrError::NonFinite("cross_entropy"));
    }
    Ok((loss, grad))
}

pub fn cross_entropy_loss(logits: &DenseMatrix, sel: &LossSelection<'_>) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, sel)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseMatrix>,
    pub classifier: DenseMatrix,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .chain(std::iter::once(&self.classifier))
            .map(|g| g.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact gradients of the selected cross-entropy with respect to every
/// layer and the classifier. Requires a train-mode `tapped`.
pub fn backward(
    model: &GcnModel,
    adj: &NormalizedAdjacency,
    tapped: &TappedForward,
    sel: &LossSelection<'_>,
) -> Result<Gradients> {
    let masks = tapped
        .dropout_masks
        .as_ref()
        .ok_or(AdrError::MissingDropoutMasks)?;
    let (_, dlogits) = cross_entropy_with_grad(&tapped.logits, sel)?;
    let k = model.encoder.num_layers();

    let classifier = tapped.embeddings().t_matmul(&dlogits)?;
    // gradient w.r.t. Z_{K-1}
    let mut dz = dlogits.matmul_t(&model.classifier)?;
    let mut layers = vec![DenseMatrix::zeros(0, 0); k];
    for l in (0..k).rev() {
        let pre = &tapped.pre_acts[l];
        let mask = &masks[l];
        let mut dpre = dz;
        for ((g, &p), &m) in dpre.data_mut().iter_mut().zip(pre.data()).zip(mask.data()) {
            *g = if p > 0.0 { *g * m } else { 0.0 };
        }
        layers[l] = tapped.agg_inputs[l].t_matmul(&dpre)?;
        if l > 0 {
            let dagg = dpre.matmul_t(&model.encoder.layers[l])?;
            // Â is symmetric, so Âᵀ·g = propagate(g)
            dz = adj.propagate(&dagg)?;
        } else {
            break;
        }
    }
    Ok(Gradients { layers, classifier })
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(lr: f64, model: &GcnModel) -> Self {
        let zeros: Vec<DenseMatrix> = model
            .encoder
            .layers
            .iter()
            .chain(std::iter::once(&model.classifier))
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut GcnModel, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != model.encoder.num_layers() {
            return Err(AdrError::shape("Adam::step", "gradient count"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let params = model
            .encoder
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut model.classifier));
        let grads = grads.layers.iter().chain(std::iter::once(&grads.classifier));
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(AdrError::shape("Adam::step", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let update = (*mv / bc1) / ((*vv / bc2).sqrt() + self.eps);
                *pv -= self.lr * update;
                if !pv.is_finite() {
                    return Err(AdrError::NonFinite("Adam update"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdaptConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives batch shuffling and dropout masks.
    pub seed: u64,
}

/// Labeled training data for one adaptation run.
pub struct TrainingView<'a> {
    pub adj: &'a NormalizedAdjacency,
    pub features: &'a DenseMatrix,
    pub labels: &'a [usize],
    pub train_nodes: &'a [usize],
    /// Classes the loss is restricted to.
    pub classes: &'a [usize],
}

/// Trains `model` in place with Adam on mini-batches of the training nodes.
/// The forward pass always covers the whole graph; only the loss is batched.
pub fn adapt(model: &mut GcnModel, view: &TrainingView<'_>, cfg: &AdaptConfig) -> Result<()> {
    if view.train_nodes.is_empty() {
        return Err(AdrError::EmptyMask("training nodes"));
    }
    if cfg.batch_size == 0 {
        return Err(AdrError::Config("batch_size must be ≥ 1".into()));
    }
    model.ensure_classes(view.classes);
    let columns: Vec<usize> = view
        .classes
        .iter()
        .map(|&c| model.column_of(c).expect("ensured"))
        .collect();
    let mut targets_of = vec![usize::MAX; view.labels.len()];
    for &n in view.train_nodes {
        targets_of[n] = view
            .classes
            .iter()
            .position(|&c| c == view.labels[n])
            .ok_or(AdrError::UnknownClass(view.labels[n]))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr, model);
    let mut order = view.train_nodes.to_vec();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let targets: Vec<usize> = batch.iter().map(|&n| targets_of[n]).collect();
            let sel = LossSelection {
                nodes: batch,
                targets: &targets,
                columns: &columns,
            };
            let tapped = forward_tapped(model, view.adj, view.features, ForwardMode::Train(&mut rng))?;
            let grads = backward(model, view.adj, &tapped, &sel)?;
            adam.step(model, &grads)?;
        }
    }
    Ok(())
}

/// Incremental task adaptation on one task's training nodes.
pub fn adapt_task(model: &mut GcnModel, task: &TaskGraph, cfg: &AdaptConfig) -> Result<()> {
    let train = task.nodes_in(Split::Train);
    adapt(
        model,
        &TrainingView {
            adj: &task.norm_adj,
            features: &task.features,
            labels: &task.labels,
            train_nodes: &train,
            classes: &task.classes,
        },
        cfg,
    )
}

/// Argmax over the logits restricted to `model.classes`, lowest class id on ties.
pub fn predict_logits(logits: &DenseMatrix, classes: &[usize]) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| argmax_class(logits.row(r), classes))
        .collect()
}

pub(crate) fn argmax_class(scores: &[f64], classes: &[usize]) -> usize {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (&s, &c) in scores.iter().zip(classes) {
        if s > best.0 || (s == best.0 && c < best.1) {
            best = (s, c);
        }
    }
    best.1
}
