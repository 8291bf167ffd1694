//! Training loop, evaluation and the target-only baseline.
//!
//! Epoch `e` draws its mini-batches and walk seeds from stream `e` of the
//! run seed, so a run resumed at an epoch boundary repeats the
//! uninterrupted run exactly.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::Array1;
use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Datasets, Domain, Instance};
use crate::error::{Error, Result};
use crate::graph::{cosine_matrix, BatchGraph, GraphNode};
use crate::losses::{objective, BatchView, LossReport, LossWeights};
use crate::nets::{binary_cross_entropy, Architecture, ParameterSet};
use crate::optim::{sgd_nesterov_step, OptimizerState};
use crate::paths::PathRecord;
use crate::rng;
use crate::walker::{eta_schedule_from, sample_batch_walks, Direction, WalkSequence, ETA_BASE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSizes {
    pub source: usize,
    pub target: usize,
    pub auxiliary: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        Self { source: 10, target: 8, auxiliary: 110 }
    }
}

impl BatchSizes {
    pub fn total(&self) -> usize {
        self.source + self.target + self.auxiliary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_feature: f64,
    pub lr_classifier: f64,
    pub momentum: f64,
    pub batch: BatchSizes,
    pub theta: usize,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta_base: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablate_lstm: bool,
    pub labeled_target_per_class: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_feature: 1e-4,
            lr_classifier: 1e-3,
            momentum: 0.9,
            batch: BatchSizes::default(),
            theta: 10,
            alpha: 3.0,
            lambda1: 1.0,
            lambda2: 1.0,
            eta_base: ETA_BASE,
            epochs: 20,
            seed: 0,
            ablate_lstm: false,
            labeled_target_per_class: 10,
            embed_dim: Architecture::EMBED_DIM,
            lstm_hidden: Architecture::LSTM_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_feature > 0.0 && self.lr_classifier > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative".into());
        }
        if self.eta_base.is_nan() || self.eta_base <= 0.0 {
            return bad(format!("eta_base must be positive, got {}", self.eta_base));
        }
        if self.theta < 2 {
            return bad(format!("theta must be at least 2, got {}", self.theta));
        }
        if self.batch.source == 0 || self.batch.target == 0 || self.batch.auxiliary == 0 {
            return bad("every batch quota must be positive".into());
        }
        if self.labeled_target_per_class == 0 {
            return bad("labeled_target_per_class must be positive".into());
        }
        if self.embed_dim == 0 || self.lstm_hidden == 0 {
            return bad("network sizes must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self, d_in: usize) -> Architecture {
        Architecture { d_in, embed_dim: self.embed_dim, lstm_hidden: self.lstm_hidden }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            lambda1: if self.ablate_lstm { 0.0 } else { self.lambda1 },
            lambda2: self.lambda2,
        }
    }

    /// Mini-batches per epoch: enough to cover the source pool once.
    pub fn steps_per_epoch(&self, ds: &Datasets) -> usize {
        ds.source.len().div_ceil(self.batch.source).max(1)
    }
}

/// Draws `quota` members of `pool`: without replacement when the pool is
/// large enough, with replacement otherwise.
fn draw<'a, R: Rng + ?Sized>(pool: &'a [Instance], quota: usize, rng: &mut R, what: &str) -> Result<Vec<&'a Instance>> {
    if quota == 0 {
        return Ok(Vec::new());
    }
    if pool.is_empty() {
        return Err(Error::Data(format!("the {what} pool is empty")));
    }
    Ok(if pool.len() >= quota {
        index::sample(rng, pool.len(), quota).into_iter().map(|i| &pool[i]).collect()
    } else {
        (0..quota).map(|_| &pool[rng.random_range(0..pool.len())]).collect()
    })
}

/// Batch members ordered source, target, auxiliary.
pub fn make_minibatch<'a, R: Rng + ?Sized>(ds: &'a Datasets, sizes: BatchSizes, rng: &mut R) -> Result<Vec<&'a Instance>> {
    let mut batch = draw(&ds.source, sizes.source, rng, "source")?;
    batch.extend(draw(&ds.target_train, sizes.target, rng, "labeled target")?);
    batch.extend(draw(&ds.auxiliary, sizes.auxiliary, rng, "auxiliary")?);
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub objective: f64,
    pub walks_reached_s2t: usize,
    pub walks_reached_t2s: usize,
    /// Filled on the last step of each epoch.
    pub target_test_acc: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,step,l1,l2,l3,objective,walks_reached_s2t,walks_reached_t2s,target_test_acc";

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        let acc = r.target_test_acc.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, r.step, r.l1, r.l2, r.l3, r.objective, r.walks_reached_s2t, r.walks_reached_t2s, acc
        )?;
    }
    Ok(())
}

/// Parameters, optimizer state and the number of completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
    pub epoch: usize,
}

impl TrainState {
    pub fn initial(cfg: &TrainConfig, d_in: usize) -> Result<Self> {
        let params = ParameterSet::init_with(cfg.architecture(d_in), cfg.seed)?;
        let optimizer = OptimizerState::new(&params);
        Ok(Self { params, optimizer, epoch: 0 })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: TrainState,
    pub history: Vec<MetricsRow>,
    /// Every walk of the last epoch trained.
    pub paths: Vec<PathRecord>,
    /// Ids of every instance that entered a loss.
    pub touched_ids: BTreeSet<u64>,
}

/// Result of one optimization step on one mini-batch.
pub struct StepOutcome {
    pub report: LossReport,
    pub paths: Vec<PathRecord>,
}

fn graph_nodes(batch: &[&Instance]) -> Vec<GraphNode> {
    batch.iter().map(|inst| GraphNode { instance_id: inst.id, domain: inst.domain }).collect()
}

/// The graph walks of `direction` use at `epoch`.
pub fn batch_graph(cfg: &TrainConfig, batch: &[&Instance], values: &[Array1<f64>], epoch: usize, direction: Direction) -> Result<BatchGraph> {
    let (eta1, eta2) = direction.etas(eta_schedule_from(cfg.eta_base, epoch));
    BatchGraph::build(&graph_nodes(batch), values, eta1, eta2)
}

/// Walks of both directions over one batch, given its embeddings.
fn sample_batch(
    cfg: &TrainConfig,
    batch: &[&Instance],
    values: &[Array1<f64>],
    epoch: usize,
    walk_seeds: (u64, u64),
) -> Result<(Vec<WalkSequence>, Vec<PathRecord>)> {
    let nodes = graph_nodes(batch);
    let meta: Vec<Option<f64>> = batch.iter().map(|i| i.meta).collect();
    let eta = eta_schedule_from(cfg.eta_base, epoch);
    let cosines = cosine_matrix(values)?;
    let mut walks = Vec::new();
    let mut paths = Vec::new();
    for (direction, seed) in [(Direction::SourceToTarget, walk_seeds.0), (Direction::TargetToSource, walk_seeds.1)] {
        let (eta1, eta2) = direction.etas(eta);
        let g = BatchGraph::from_cosines(&nodes, cosines.clone(), eta1, eta2)?;
        let sampled = sample_batch_walks(&g, direction, cfg.theta, seed)?;
        for w in &sampled {
            paths.push(PathRecord::from_walk(w, &g, &meta, epoch)?);
        }
        walks.extend(sampled);
    }
    Ok((walks, paths))
}

fn plain_embeddings(params: &ParameterSet, batch: &[&Instance]) -> Result<Vec<Array1<f64>>> {
    batch.iter().map(|inst| params.embed(&inst.features)).collect()
}

/// Walks that epoch `epoch` would sample with fixed `params`, without
/// training.
pub fn sample_paths(cfg: &TrainConfig, ds: &Datasets, params: &ParameterSet, epoch: usize) -> Result<Vec<PathRecord>> {
    let mut epoch_rng = rng::stream(cfg.seed, epoch as u64);
    let mut paths = Vec::new();
    for _ in 0..cfg.steps_per_epoch(ds) {
        let batch = make_minibatch(ds, cfg.batch, &mut epoch_rng)?;
        let seeds = (epoch_rng.next_u64(), epoch_rng.next_u64());
        let values = plain_embeddings(params, &batch)?;
        paths.extend(sample_batch(cfg, &batch, &values, epoch, seeds)?.1);
    }
    Ok(paths)
}

/// Source-to-target graph of the first batch of `epoch` under `params`.
pub fn first_batch_graph(cfg: &TrainConfig, ds: &Datasets, params: &ParameterSet, epoch: usize) -> Result<BatchGraph> {
    let mut epoch_rng = rng::stream(cfg.seed, epoch as u64);
    let batch = make_minibatch(ds, cfg.batch, &mut epoch_rng)?;
    batch_graph(cfg, &batch, &plain_embeddings(params, &batch)?, epoch, Direction::SourceToTarget)
}

/// Runs one DERWENT step on `batch` and updates `state` in place.
pub fn train_step(cfg: &TrainConfig, state: &mut TrainState, batch: &[&Instance], epoch: usize, walk_seeds: (u64, u64)) -> Result<StepOutcome> {
    let tape = Tape::new();
    let bound = state.params.bind(&tape)?;
    let embeddings = batch
        .iter()
        .map(|inst| bound.feature_extract(&tape, &inst.features))
        .collect::<Result<Vec<Var>>>()?;
    let values: Vec<Array1<f64>> = embeddings.iter().map(|v| v.value().row(0).to_owned()).collect();
    let domains: Vec<Domain> = batch.iter().map(|i| i.domain).collect();
    let labels: Vec<Option<u8>> = batch.iter().map(|i| i.label).collect();
    let (walks, paths) = sample_batch(cfg, batch, &values, epoch, walk_seeds)?;

    let view = BatchView { embeddings: &embeddings, domains: &domains, labels: &labels };
    let (total, report) = objective(&tape, &view, &walks, &bound, cfg.loss_weights(), !cfg.ablate_lstm)?;
    tape.backward(total)?;
    let grads = bound.gradients();
    sgd_nesterov_step(&mut state.params, &grads, &mut state.optimizer, cfg.lr_feature, cfg.lr_classifier, cfg.momentum)?;
    if !state.params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(StepOutcome { report, paths })
}

pub fn train(cfg: &TrainConfig, ds: &Datasets) -> Result<TrainOutput> {
    cfg.validate()?;
    train_from(cfg, ds, TrainState::initial(cfg, ds.d_in)?)
}

/// Continues training from `state` until `cfg.epochs` epochs are complete.
pub fn train_from(cfg: &TrainConfig, ds: &Datasets, mut state: TrainState) -> Result<TrainOutput> {
    cfg.validate()?;
    if state.params.arch.d_in != ds.d_in {
        return Err(Error::Config(format!(
            "parameters expect d_in {}, data has {}",
            state.params.arch.d_in, ds.d_in
        )));
    }
    let test_ids = ds.test_ids();
    let steps = cfg.steps_per_epoch(ds);
    let mut history = Vec::new();
    let mut paths = Vec::new();
    let mut touched_ids = BTreeSet::new();

    for epoch in state.epoch..cfg.epochs {
        let mut epoch_rng = rng::stream(cfg.seed, epoch as u64);
        let last_epoch = epoch + 1 == cfg.epochs;
        for step in 0..steps {
            let global = epoch * steps + step;
            let batch = make_minibatch(ds, cfg.batch, &mut epoch_rng)?;
            if let Some(leak) = batch.iter().find(|i| test_ids.contains(&i.id)) {
                return Err(Error::Data(format!("test instance {} drawn into a training batch", leak.id)));
            }
            touched_ids.extend(batch.iter().map(|i| i.id));
            let seeds = (epoch_rng.next_u64(), epoch_rng.next_u64());
            let outcome = train_step(cfg, &mut state, &batch, epoch, seeds)
                .map_err(|e| Error::Step { step: global, source: Box::new(e) })?;
            if last_epoch {
                paths.extend(outcome.paths);
            }
            let r = outcome.report;
            history.push(MetricsRow {
                epoch,
                step: global,
                l1: r.l1_total,
                l2: r.l2_total,
                l3: r.l3_total,
                objective: r.objective,
                walks_reached_s2t: r.walks_reached_s2t,
                walks_reached_t2s: r.walks_reached_t2s,
                target_test_acc: None,
            });
        }
        if !ds.target_test.is_empty() {
            let acc = evaluate(&state.params, &ds.target_test)?;
            if let Some(row) = history.last_mut() {
                row.target_test_acc = Some(acc);
            }
        }
        state.epoch = epoch + 1;
    }
    Ok(TrainOutput { state, history, paths, touched_ids })
}

/// Fraction of `instances` whose predicted probability falls on the side
/// of 0.5 given by the label.
pub fn evaluate(params: &ParameterSet, instances: &[Instance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty set".into()));
    }
    let mut correct = 0usize;
    for inst in instances {
        let label = inst
            .label
            .ok_or_else(|| Error::Data(format!("instance {} has no label", inst.id)))?;
        let predicted = u8::from(params.predict_proba(&inst.features)? >= 0.5);
        correct += usize::from(predicted == label);
    }
    Ok(correct as f64 / instances.len() as f64)
}

#[derive(Debug, Clone)]
pub struct BaselineReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub params: ParameterSet,
    pub source_used: usize,
    pub auxiliary_used: usize,
    pub target_used: usize,
}

/// Feature extractor and classifier trained with cross-entropy on the
/// labeled target instances alone, for as many steps as `train` takes.
pub fn baseline_dnn(cfg: &TrainConfig, ds: &Datasets) -> Result<BaselineReport> {
    cfg.validate()?;
    let mut params = ParameterSet::init_with(cfg.architecture(ds.d_in), cfg.seed)?;
    let mut optimizer = OptimizerState::new(&params);
    let steps = cfg.steps_per_epoch(ds);
    let mut used = BTreeSet::new();
    for epoch in 0..cfg.epochs {
        let mut epoch_rng = rng::stream(cfg.seed, rng::BASELINE_STREAM + epoch as u64);
        for step in 0..steps {
            let batch = draw(&ds.target_train, cfg.batch.target, &mut epoch_rng, "labeled target")?;
            used.extend(batch.iter().map(|i| i.id));
            let mut run = || -> Result<()> {
                let tape = Tape::new();
                let bound = params.bind(&tape)?;
                let terms = batch
                    .iter()
                    .map(|inst| {
                        let e = bound.feature_extract(&tape, &inst.features)?;
                        binary_cross_entropy(bound.classify(e)?, inst.label.unwrap_or(0))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let loss = tape.sum_scalars(&terms)?;
                tape.backward(loss)?;
                let grads = bound.gradients();
                sgd_nesterov_step(&mut params, &grads, &mut optimizer, cfg.lr_feature, cfg.lr_classifier, cfg.momentum)
            };
            run().map_err(|e| Error::Step { step: epoch * steps + step, source: Box::new(e) })?;
        }
    }
    let count = |pool: &[Instance]| pool.iter().filter(|i| used.contains(&i.id)).count();
    Ok(BaselineReport {
        accuracy: evaluate(&params, &ds.target_test)?,
        train_accuracy: evaluate(&params, &ds.target_train)?,
        source_used: count(&ds.source),
        auxiliary_used: count(&ds.auxiliary),
        target_used: count(&ds.target_train),
        params,
    })
}
