//! Runs a method over the task stream and fills the performance matrix.
//!
//! Per task, ADR adapts the model with cross-entropy, folds the adapted
//! encoder's layer statistics into the encoder bank, merges, embeds the
//! task's training nodes with the merged encoder, folds them into the
//! classifier bank, and reconstructs the classifier. Bare, Joint and
//! Frozen-Analytic are the reference baselines.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acr::{one_hot, predict_from_embeddings, ClassifierMemoryBank, FeatureBuffer};
use crate::config::{DatasetSource, ExperimentConfig, Method};
use crate::datasets::{build_task_stream, generate_sbm, load_dataset, RawDataset};
use crate::encoder::{adapt, adapt_task, forward_tapped, predict_logits, AdaptConfig, ForwardMode, GcnEncoder, GcnModel, TrainingView};
use crate::error::{AdrError, Result};
use crate::evaluate::{class_skew, measure_drift, DriftReport, MetricsReport, PerformanceMatrix};
use crate::graph::{build_global_test_graph, GlobalTestGraph, Split, TaskGraph};
use crate::ham::{collect_layer_statistics, EncoderMemoryBank, MergedEncoder};
use crate::linalg::DenseMatrix;

/// Dataset and task stream for one configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: RawDataset,
    pub tasks: Vec<TaskGraph>,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = match &config.dataset {
            DatasetSource::Files { dir } => load_dataset(dir)?,
            DatasetSource::Sbm(spec) => generate_sbm(spec)?,
        };
        let tasks = build_task_stream(&dataset, &config.stream_spec())?;
        Ok(Experiment {
            config: config.clone(),
            dataset,
            tasks,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn adapt_config(&self, t: usize) -> AdaptConfig {
        let c = &self.config;
        AdaptConfig {
            lr: if t == 0 { c.lr_base } else { c.lr_incremental },
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seeds.dropout.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(t as u64),
        }
    }

    fn fresh_model(&self) -> Result<GcnModel> {
        GcnModel::new(
            self.dataset.feature_dim(),
            &self.config.hidden_dims,
            self.config.dropout,
            self.config.seeds.model,
        )
    }

    fn global_graph(&self, t: usize) -> Result<GlobalTestGraph> {
        build_global_test_graph(&self.dataset, &self.tasks[..=t])
    }
}

/// Accuracy on each seen task's evaluation nodes, computed on the global graph.
pub fn task_accuracies(global: &GlobalTestGraph, predictions: &[usize], tasks_seen: usize, split: Split) -> Vec<f64> {
    (0..tasks_seen)
        .map(|i| {
            let nodes = global.nodes_of_task(i, split);
            if nodes.is_empty() {
                log::warn!("task {i} has no {split:?} nodes; reporting accuracy 0");
                return 0.0;
            }
            let hits = nodes
                .iter()
                .filter(|&&n| predictions[n] == global.labels[n])
                .count();
            hits as f64 / nodes.len() as f64
        })
        .collect()
}

/// What the ADR learner carries from one task to the next: the two banks,
/// the frozen buffer, and the merged/reconstructed model.
#[derive(Debug, Clone)]
pub struct AdrLearner {
    pub encoder_bank: EncoderMemoryBank,
    pub classifier_bank: ClassifierMemoryBank,
    pub buffer: FeatureBuffer,
    pub merged: Option<MergedEncoder>,
    pub classifier: Option<DenseMatrix>,
    pub gamma: f64,
}

impl AdrLearner {
    pub fn new(template: &GcnEncoder, alpha: usize, buffer_seed: u64, gamma: f64) -> Result<Self> {
        let buffer = FeatureBuffer::new(template.out_dim(), alpha, buffer_seed)?;
        Ok(AdrLearner {
            encoder_bank: EncoderMemoryBank::for_encoder(template),
            classifier_bank: ClassifierMemoryBank::new(buffer.output_dim()),
            buffer,
            merged: None,
            classifier: None,
            gamma,
        })
    }

    /// Merge and reconstruct after `adapted` has been trained on `task`.
    pub fn absorb(&mut self, adapted: &GcnModel, task: &TaskGraph) -> Result<()> {
        let stats = collect_layer_statistics(adapted, task)?;
        self.encoder_bank.update(&stats)?;
        drop(stats);
        let merged = crate::ham::merge(&self.encoder_bank, self.gamma, &adapted.encoder)?;
        self.absorb_classifier(&merged.encoder, task)?;
        self.merged = Some(merged);
        Ok(())
    }

    /// Classifier-side step only: embed the task's training nodes with
    /// `encoder`, accumulate and reconstruct.
    pub fn absorb_classifier(&mut self, encoder: &GcnEncoder, task: &TaskGraph) -> Result<()> {
        let train = task.nodes_in(Split::Train);
        let h = encoder.embed(&task.norm_adj, &task.features)?.select_rows(&train);
        let h_b = self.buffer.expand(&h)?;
        let labels: Vec<usize> = train.iter().map(|&n| task.labels[n]).collect();
        let y = one_hot(&labels, &task.classes)?;
        self.classifier_bank.update(&h_b, &y, &task.classes)?;
        self.classifier = Some(self.classifier_bank.reconstruct(self.gamma)?);
        Ok(())
    }

    pub fn predict(&self, encoder: &GcnEncoder, global: &GlobalTestGraph) -> Result<Vec<usize>> {
        let classifier = self
            .classifier
            .as_ref()
            .ok_or_else(|| AdrError::Config("learner has not absorbed any task".into()))?;
        let h = encoder.embed(&global.norm_adj, &global.features)?;
        predict_from_embeddings(&self.buffer, classifier, self.classifier_bank.seen_classes(), &h)
    }

    pub fn inventory(&self) -> Vec<RetainedTensor> {
        let mut out: Vec<RetainedTensor> = self
            .encoder_bank
            .matrices()
            .map(|(name, m)| RetainedTensor::new(TensorKind::EncoderBank, format!("encoder_bank.{name}"), m))
            .collect();
        out.push(RetainedTensor::new(TensorKind::ClassifierBank, "classifier_bank.R_phi".into(), self.classifier_bank.autocorrelation()));
        out.push(RetainedTensor::new(TensorKind::ClassifierBank, "classifier_bank.Q_phi".into(), self.classifier_bank.cross_correlation()));
        if let Some(p) = self.buffer.projection() {
            out.push(RetainedTensor::new(TensorKind::Weights, "buffer.W_psi".into(), p));
        }
        if let Some(m) = &self.merged {
            for (k, w) in m.encoder.layers().iter().enumerate() {
                out.push(RetainedTensor::new(TensorKind::Weights, format!("merged.W_{k}"), w));
            }
        }
        if let Some(c) = &self.classifier {
            out.push(RetainedTensor::new(TensorKind::Weights, "classifier.W_phi".into(), c));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    EncoderBank,
    ClassifierBank,
    Weights,
}

/// One matrix a method keeps alive between tasks.
#[derive(Debug, Clone, Serialize)]
pub struct RetainedTensor {
    pub kind: TensorKind,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl RetainedTensor {
    fn new(kind: TensorKind, name: String, m: &DenseMatrix) -> Self {
        RetainedTensor {
            kind,
            name,
            rows: m.rows(),
            cols: m.cols(),
        }
    }
}

fn model_inventory(prefix: &str, model: &GcnModel) -> Vec<RetainedTensor> {
    let mut out: Vec<RetainedTensor> = model
        .encoder
        .layers()
        .iter()
        .enumerate()
        .map(|(k, w)| RetainedTensor::new(TensorKind::Weights, format!("{prefix}.W_{k}"), w))
        .collect();
    out.push(RetainedTensor::new(TensorKind::Weights, format!("{prefix}.classifier"), &model.classifier));
    out
}

/// Reported after each task.
#[derive(Debug)]
pub struct TaskEvent<'a> {
    pub task: usize,
    /// Node counts of tasks `0..=task`.
    pub node_counts: &'a [usize],
    /// Everything the method carries into the next task.
    pub retained: Vec<RetainedTensor>,
}

pub trait RunObserver {
    fn task_completed(&mut self, event: &TaskEvent<'_>);
}

impl RunObserver for () {
    fn task_completed(&mut self, _: &TaskEvent<'_>) {}
}

/// Checks that nothing retained after a task could be a per-node tensor of
/// an earlier task: every tensor must be a bank or weight matrix, and none
/// may have a prior task's node count as its first dimension.
#[derive(Debug, Default)]
pub struct NonExemplarAudit {
    pub tasks_checked: usize,
    pub violations: Vec<String>,
}

impl RunObserver for NonExemplarAudit {
    fn task_completed(&mut self, event: &TaskEvent<'_>) {
        self.tasks_checked += 1;
        for t in &event.retained {
            for (i, &n) in event.node_counts[..event.task].iter().enumerate() {
                if t.rows == n {
                    self.violations.push(format!(
                        "after task {}: {} has {} rows, the node count of task {i}",
                        event.task, t.name, t.rows
                    ));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankChecksums {
    pub task: usize,
    pub encoder_bank: Option<String>,
    pub classifier_bank: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub num_tasks: usize,
    pub matrix: PerformanceMatrix,
    pub metrics: Option<MetricsReport>,
    pub drift: Option<DriftReport>,
    pub task_wall_ms: Vec<f64>,
    pub bank_checksums: Vec<BankChecksums>,
    pub config: ExperimentConfig,
}

#[derive(Debug, thiserror::Error)]
#[error("run failed after {completed} task(s): {source}")]
pub struct RunFailure {
    pub completed: usize,
    #[source]
    pub source: AdrError,
    pub partial: Box<RunRecord>,
}

/// Final artifacts a run can checkpoint.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub model: Option<GcnModel>,
    pub learner: Option<AdrLearner>,
    /// Encoder in use after each task, for drift measurement.
    pub encoder_checkpoints: Vec<GcnEncoder>,
}

struct Progress {
    record: RunRecord,
    artifacts: RunArtifacts,
}

impl Progress {
    fn new(exp: &Experiment) -> Self {
        Progress {
            record: RunRecord {
                method: exp.config.method,
                num_tasks: exp.num_tasks(),
                matrix: PerformanceMatrix::new(exp.num_tasks()),
                metrics: None,
                drift: None,
                task_wall_ms: Vec::new(),
                bank_checksums: Vec::new(),
                config: exp.config.clone(),
            },
            artifacts: RunArtifacts::default(),
        }
    }

    fn fail(self, source: AdrError) -> RunFailure {
        RunFailure {
            completed: self.record.task_wall_ms.len(),
            source,
            partial: Box::new(self.record),
        }
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunRecord, RunFailure> {
    run_with_observer(config, &mut ()).map(|(r, _)| r)
}

pub fn run_adr(config: &ExperimentConfig) -> Result<RunRecord, RunFailure> {
    run_method(config, Method::Adr)
}

pub fn run_bare(config: &ExperimentConfig) -> Result<RunRecord, RunFailure> {
    run_method(config, Method::Bare)
}

pub fn run_joint(config: &ExperimentConfig) -> Result<RunRecord, RunFailure> {
    run_method(config, Method::Joint)
}

pub fn run_frozen_analytic(config: &ExperimentConfig) -> Result<RunRecord, RunFailure> {
    run_method(config, Method::FrozenAnalytic)
}

fn run_method(config: &ExperimentConfig, method: Method) -> Result<RunRecord, RunFailure> {
    let mut c = config.clone();
    c.method = method;
    run(&c)
}

/// Runs the configured method, reporting each completed task to `observer`.
pub fn run_with_observer(
    config: &ExperimentConfig,
    observer: &mut dyn RunObserver,
) -> Result<(RunRecord, RunArtifacts), RunFailure> {
    let exp = match Experiment::prepare(config) {
        Ok(e) => e,
        Err(source) => {
            return Err(RunFailure {
                completed: 0,
                source,
                partial: Box::new(RunRecord {
                    method: config.method,
                    num_tasks: 0,
                    matrix: PerformanceMatrix::new(0),
                    metrics: None,
                    drift: None,
                    task_wall_ms: Vec::new(),
                    bank_checksums: Vec::new(),
                    config: config.clone(),
                }),
            })
        }
    };
    run_experiment(&exp, observer)
}

pub fn run_experiment(
    exp: &Experiment,
    observer: &mut dyn RunObserver,
) -> Result<(RunRecord, RunArtifacts), RunFailure> {
    let mut progress = Progress::new(exp);
    #[cfg(debug_assertions)]
    let mut audit = NonExemplarAudit::default();
    let outcome = {
        #[cfg(debug_assertions)]
        let mut tee = Tee(observer, &mut audit);
        #[cfg(debug_assertions)]
        let obs: &mut dyn RunObserver = &mut tee;
        #[cfg(not(debug_assertions))]
        let obs = observer;
        match exp.config.method {
            Method::Adr => drive_adr(exp, &mut progress, obs),
            Method::Bare => drive_bare(exp, &mut progress, obs),
            Method::FrozenAnalytic => drive_frozen(exp, &mut progress, obs),
            Method::Joint => drive_joint(exp, &mut progress),
        }
    };
    #[cfg(debug_assertions)]
    for v in &audit.violations {
        log::warn!("non-exemplar audit: {v}");
    }
    if let Err(e) = outcome {
        return Err(progress.fail(e));
    }
    if let Err(e) = finish(exp, &mut progress) {
        return Err(progress.fail(e));
    }
    Ok((progress.record, progress.artifacts))
}

#[cfg(debug_assertions)]
struct Tee<'a>(&'a mut dyn RunObserver, &'a mut NonExemplarAudit);

#[cfg(debug_assertions)]
impl RunObserver for Tee<'_> {
    fn task_completed(&mut self, event: &TaskEvent<'_>) {
        self.0.task_completed(event);
        self.1.task_completed(event);
    }
}

fn finish(exp: &Experiment, progress: &mut Progress) -> Result<()> {
    let rho = exp.tasks.iter().map(class_skew).collect::<Result<Vec<_>>>()?;
    let drift = if progress.artifacts.encoder_checkpoints.len() == exp.num_tasks() {
        Some(measure_drift(&progress.artifacts.encoder_checkpoints, &exp.tasks)?)
    } else {
        None
    };
    progress.record.metrics = Some(MetricsReport::from_matrix(
        &progress.record.matrix,
        rho,
        drift.as_ref().map(DriftReport::summary),
    )?);
    progress.record.drift = drift;
    Ok(())
}

fn node_counts(exp: &Experiment, t: usize) -> Vec<usize> {
    exp.tasks[..=t].iter().map(TaskGraph::num_nodes).collect()
}

fn drive_adr(exp: &Experiment, p: &mut Progress, observer: &mut dyn RunObserver) -> Result<()> {
    let mut model = exp.fresh_model()?;
    let mut learner = AdrLearner::new(&model.encoder, exp.config.alpha, exp.config.seeds.buffer, exp.config.gamma)?;
    for (t, task) in exp.tasks.iter().enumerate() {
        let start = Instant::now();
        adapt_task(&mut model, task, &exp.adapt_config(t))?;
        learner.absorb(&model, task)?;
        let merged = learner.merged.as_ref().expect("absorbed").encoder.clone();

        let global = exp.global_graph(t)?;
        let pred = learner.predict(&merged, &global)?;
        p.record
            .matrix
            .set_row(t, task_accuracies(&global, &pred, t + 1, exp.config.eval_split))?;
        p.record.task_wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        p.record.bank_checksums.push(BankChecksums {
            task: t,
            encoder_bank: Some(learner.encoder_bank.checksum()),
            classifier_bank: Some(learner.classifier_bank.checksum()),
        });
        p.artifacts.encoder_checkpoints.push(merged);

        let mut retained = learner.inventory();
        retained.extend(model_inventory("adapted", &model));
        observer.task_completed(&TaskEvent {
            task: t,
            node_counts: &node_counts(exp, t),
            retained,
        });
    }
    p.artifacts.model = Some(model);
    p.artifacts.learner = Some(learner);
    Ok(())
}

fn drive_bare(exp: &Experiment, p: &mut Progress, observer: &mut dyn RunObserver) -> Result<()> {
    let mut model = exp.fresh_model()?;
    for (t, task) in exp.tasks.iter().enumerate() {
        let start = Instant::now();
        if exp.config.epochs > 0 {
            adapt_task(&mut model, task, &exp.adapt_config(t))?;
        } else {
            model.ensure_classes(&task.classes);
        }
        let global = exp.global_graph(t)?;
        let tapped = forward_tapped(&model, &global.norm_adj, &global.features, ForwardMode::Eval)?;
        let pred = predict_logits(&tapped.logits, &model.classes);
        p.record
            .matrix
            .set_row(t, task_accuracies(&global, &pred, t + 1, exp.config.eval_split))?;
        p.record.task_wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        p.artifacts.encoder_checkpoints.push(model.encoder.clone());
        observer.task_completed(&TaskEvent {
            task: t,
            node_counts: &node_counts(exp, t),
            retained: model_inventory("model", &model),
        });
    }
    p.artifacts.model = Some(model);
    Ok(())
}

fn drive_frozen(exp: &Experiment, p: &mut Progress, observer: &mut dyn RunObserver) -> Result<()> {
    let mut model = exp.fresh_model()?;
    let mut learner = AdrLearner::new(&model.encoder, exp.config.alpha, exp.config.seeds.buffer, exp.config.gamma)?;
    for (t, task) in exp.tasks.iter().enumerate() {
        let start = Instant::now();
        if t == 0 {
            adapt_task(&mut model, task, &exp.adapt_config(0))?;
        }
        learner.absorb_classifier(&model.encoder, task)?;
        let global = exp.global_graph(t)?;
        let pred = learner.predict(&model.encoder, &global)?;
        p.record
            .matrix
            .set_row(t, task_accuracies(&global, &pred, t + 1, exp.config.eval_split))?;
        p.record.task_wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        p.record.bank_checksums.push(BankChecksums {
            task: t,
            encoder_bank: None,
            classifier_bank: Some(learner.classifier_bank.checksum()),
        });
        p.artifacts.encoder_checkpoints.push(model.encoder.clone());
        let mut retained = learner.inventory();
        retained.extend(model_inventory("frozen", &model));
        observer.task_completed(&TaskEvent {
            task: t,
            node_counts: &node_counts(exp, t),
            retained,
        });
    }
    p.artifacts.model = Some(model);
    p.artifacts.learner = Some(learner);
    Ok(())
}

/// One model trained on every task's training nodes over the consolidated
/// graph. Only the last row of the matrix is filled.
fn drive_joint(exp: &Experiment, p: &mut Progress) -> Result<()> {
    let start = Instant::now();
    let last = exp.num_tasks() - 1;
    let global = exp.global_graph(last)?;
    let train = (0..global.labels.len())
        .filter(|&i| global.splits[i] == Split::Train)
        .collect::<Vec<_>>();
    let classes: Vec<usize> = exp.tasks.iter().flat_map(|t| t.classes.iter().copied()).collect();
    let mut model = exp.fresh_model()?;
    adapt(
        &mut model,
        &TrainingView {
            adj: &global.norm_adj,
            features: &global.features,
            labels: &global.labels,
            train_nodes: &train,
            classes: &classes,
        },
        &exp.adapt_config(0),
    )?;
    let tapped = forward_tapped(&model, &global.norm_adj, &global.features, ForwardMode::Eval)?;
    let pred = predict_logits(&tapped.logits, &model.classes);
    p.record
        .matrix
        .set_row(last, task_accuracies(&global, &pred, last + 1, exp.config.eval_split))?;
    p.record.task_wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
    p.artifacts.model = Some(model);
    Ok(())
}

/// Writes `metrics.json`, `matrix.csv` and `run_record.json` into `dir`.
pub fn write_outputs(record: &RunRecord, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| AdrError::io(dir, e))?;
    let put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| AdrError::io(&p, e))
    };
    if let Some(m) = &record.metrics {
        put("metrics.json", serde_json::to_string_pretty(m)?)?;
    }
    put("matrix.csv", record.matrix.to_csv())?;
    put("run_record.json", serde_json::to_string_pretty(record)?)?;
    Ok(())
}

/// Saves whichever of model, encoder bank and classifier bank the run produced.
pub fn write_checkpoints(artifacts: &RunArtifacts, gamma: f64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if let Some(model) = &artifacts.model {
        model.save(dir.join("model"))?;
    }
    if let Some(l) = &artifacts.learner {
        if l.encoder_bank.task_count() > 0 {
            l.encoder_bank.save(dir.join("encoder_bank"), gamma)?;
        }
        if l.classifier_bank.task_count() > 0 {
            l.classifier_bank.save(dir.join("classifier_bank"), &l.buffer, gamma)?;
        }
    }
    Ok(())
}
