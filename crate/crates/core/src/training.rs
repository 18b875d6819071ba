//! Staged training: per-group Adam, early stopping on validation loss with
//! best-weight restoration, and the stage schedule of the distributed
//! network.
//!
//! Schedule (each stage is one [`train_loop`] call):
//!
//! 1. local classifiers, each on its own node's channel
//! 2. ClassFuse end to end (fusion MLP fresh, local classifiers fine-tuned)
//! 3. optional auto-encoder pre-training of compressors/reconstructors (MSE)
//! 4. CompressFuse end to end
//! 5. the whole network through the FullFuse MLP (MLP fresh, rest fine-tuned)

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use bwnet_tensor::{AdamState, GradPolicy, Mode, ParamGroup, ParamStore, RngState, Session, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::EpochedDataset;
use crate::distributed::{names, DistributedArch, DistributedModel, WireAudit};
use crate::error::{CoreError, Result};
use crate::msfbcnn::MsfbcnnModel;

/// Samples per eval-mode forward when scoring a whole split.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_fresh: f32,
    pub lr_finetune: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_fresh: 1e-3,
            lr_finetune: 1e-4,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_finetune > 0.0 && self.lr_finetune < self.lr_fresh) {
            return Err(CoreError::InvalidConfig(format!(
                "need 0 < lr_finetune ({}) < lr_fresh ({})",
                self.lr_finetune, self.lr_fresh
            )));
        }
        if self.patience >= self.max_epochs {
            return Err(CoreError::InvalidConfig(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Local,
    ClassFuse,
    AutoEncoder,
    CompressFuse,
    FullFuse,
    Scratch,
    FineTune,
    Central,
}

impl Stage {
    fn stream(self) -> u64 {
        self as u64 + 1
    }

    /// Checkpoint index for the four schedule stages.
    pub fn checkpoint_index(self) -> Option<usize> {
        match self {
            Stage::Local => Some(1),
            Stage::ClassFuse => Some(2),
            Stage::CompressFuse => Some(3),
            Stage::FullFuse => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Local => "1-local",
            Stage::ClassFuse => "2-classfuse",
            Stage::AutoEncoder => "AE",
            Stage::CompressFuse => "3-compressfuse",
            Stage::FullFuse => "4-fullfuse",
            Stage::Scratch => "scratch",
            Stage::FineTune => "fine-tune",
            Stage::Central => "central",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAudit {
    pub label: String,
    pub lr: f32,
    pub params: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_losses: Vec<f64>,
    /// `None` for reconstruction stages.
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub groups: Vec<GroupAudit>,
    pub frozen_params: usize,
    pub wall_time_s: f64,
}

/// Wall time is measurement noise, not outcome.
impl PartialEq for StageReport {
    fn eq(&self, other: &Self) -> bool {
        self.stage == other.stage
            && self.epochs_run == other.epochs_run
            && self.best_epoch == other.best_epoch
            && self.best_val_loss.to_bits() == other.best_val_loss.to_bits()
            && self.val_losses == other.val_losses
            && self.train_accuracy == other.train_accuracy
            && self.val_accuracy == other.val_accuracy
            && self.test_accuracy == other.test_accuracy
            && self.groups == other.groups
            && self.frozen_params == other.frozen_params
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Worse,
    Stop,
}

/// Patience counter over per-epoch validation losses. A loss counts as an
/// improvement only when strictly below the best so far.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.bad_epochs = 0;
            Verdict::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Worse
            }
        }
    }
}

/// Train / validation (/ test) partition of a dataset.
#[derive(Clone, Debug)]
pub struct DataSplit {
    pub train: EpochedDataset,
    pub val: EpochedDataset,
    pub test: Option<EpochedDataset>,
}

impl DataSplit {
    /// Per subject, a seed-fixed shuffle of that subject's trials with the
    /// last `fraction` of them held out for validation.
    pub fn new(dataset: &EpochedDataset, fraction: f64, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(CoreError::EmptyDataset(""));
        }
        let subjects: BTreeSet<u16> = dataset.subjects.iter().copied().collect();
        let mut rng = RngState::new(seed).fork(0x5b11);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for subject in subjects {
            let mut idx = dataset.subject_indices(subject);
            rng.shuffle(&mut idx);
            let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len().saturating_sub(1).max(1));
            let cut = idx.len() - n_val;
            train.extend_from_slice(&idx[..cut]);
            val.extend_from_slice(&idx[cut..]);
        }
        if train.is_empty() {
            return Err(CoreError::EmptyDataset(" after holding out validation trials"));
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok(DataSplit {
            train: dataset.subset(&train)?,
            val: dataset.subset(&val)?,
            test: None,
        })
    }

    pub fn with_test(mut self, test: EpochedDataset) -> Self {
        self.test = Some(test);
        self
    }
}

/// What a stage's forward pass produces and how it is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Log-probabilities `[k·B, N_C]` scored with cross-entropy against the
    /// batch labels repeated `k` times (k > 1 stacks several classifiers).
    Classify,
    /// A tensor of the input's shape scored with MSE against the input.
    Reconstruct,
}

fn stage_loss(s: &mut Session, objective: Objective, out: Var, x: Var, labels: &[usize]) -> Result<Var> {
    match objective {
        Objective::Classify => {
            let rows = s.value(out).dim(0);
            let tiled: Vec<usize> = labels.iter().copied().cycle().take(rows).collect();
            Ok(s.tape.cross_entropy(out, &tiled)?)
        }
        Objective::Reconstruct => Ok(s.tape.mse(out, x)?),
    }
}

/// Eval-mode mean loss and accuracy over a whole dataset.
pub fn evaluate<F>(store: &ParamStore, objective: Objective, forward: &F, data: &EpochedDataset) -> Result<(f64, Option<f64>)>
where
    F: Fn(&mut Session, Var) -> Result<Var>,
{
    if data.is_empty() {
        return Err(CoreError::EmptyDataset(""));
    }
    let (mut loss_sum, mut correct, mut rows_total) = (0.0f64, 0usize, 0usize);
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = data.x.select_rows(chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let mut s = Session::inference(store);
        let xv = s.input(x);
        let out = forward(&mut s, xv)?;
        let loss = stage_loss(&mut s, objective, out, xv, &labels)?;
        loss_sum += s.value(loss).data()[0] as f64 * chunk.len() as f64;
        if objective == Objective::Classify {
            let pred = s.value(out).argmax_rows()?;
            correct += pred
                .iter()
                .zip(labels.iter().cycle())
                .filter(|(p, l)| p == l)
                .count();
            rows_total += pred.len();
        }
    }
    let loss = loss_sum / data.len() as f64;
    let acc = (objective == Objective::Classify).then(|| correct as f64 / rows_total as f64);
    Ok((loss, acc))
}

fn check_groups(store: &ParamStore, groups: &[ParamGroup]) -> Result<BTreeSet<String>> {
    if groups.iter().all(|g| g.names.is_empty()) {
        return Err(CoreError::NoParamGroups);
    }
    let mut seen = BTreeSet::new();
    for g in groups {
        for name in &g.names {
            if !store.contains(name) {
                return Err(CoreError::InvalidArgument(format!("group {} names unknown parameter {name}", g.label)));
            }
            if !seen.insert(name.clone()) {
                return Err(CoreError::InvalidArgument(format!("parameter {name} is in more than one group")));
            }
        }
    }
    Ok(seen)
}

/// Adam over `groups` (everything else in `store` stays frozen) until the
/// validation loss stops improving for `patience` epochs or `max_epochs`
/// pass; the best-validation weights (and batch-norm buffers) are restored
/// before returning.
pub fn train_loop<F>(
    stage: Stage,
    store: &mut ParamStore,
    groups: &[ParamGroup],
    objective: Objective,
    forward: F,
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<StageReport>
where
    F: Fn(&mut Session, Var) -> Result<Var>,
{
    config.validate()?;
    let trainable = check_groups(store, groups)?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(CoreError::EmptyDataset(" (train or validation split)"));
    }
    let started = Instant::now();
    let mut rng = RngState::new(config.seed).fork(stage.stream());
    let mut adam = AdamState::new();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = store.clone();
    let mut val_losses = Vec::new();
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let x = split.train.x.select_rows(batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| split.train.labels[i]).collect();
            let grads = {
                let mut s = Session::new(store, &mut rng, Mode::Train, GradPolicy::Only(trainable.clone()));
                let xv = s.input(x);
                let out = forward(&mut s, xv)?;
                let loss = stage_loss(&mut s, objective, out, xv, &labels)?;
                s.backward(loss)?
            };
            adam.step(store, &grads, groups)?;
        }
        let (val_loss, _) = evaluate(store, objective, &forward, &split.val)?;
        val_losses.push(val_loss);
        let verdict = stopper.observe(val_loss);
        log::debug!("{stage} epoch {epoch}: val loss {val_loss:.5} ({verdict:?})");
        match verdict {
            Verdict::Improved => best.clone_from(store),
            Verdict::Worse => {}
            Verdict::Stop => break,
        }
    }
    *store = best;

    let (_, train_accuracy) = evaluate(store, objective, &forward, &split.train)?;
    let (val_loss, val_accuracy) = evaluate(store, objective, &forward, &split.val)?;
    debug_assert_eq!(val_loss.to_bits(), stopper.best.to_bits());
    let test_accuracy = match &split.test {
        Some(t) => evaluate(store, objective, &forward, t)?.1,
        None => None,
    };
    let groups_audit: Vec<GroupAudit> = groups
        .iter()
        .map(|g| GroupAudit {
            label: g.label.clone(),
            lr: g.lr,
            params: g.names.len(),
        })
        .collect();
    let report = StageReport {
        stage,
        epochs_run: val_losses.len(),
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best,
        val_losses,
        train_accuracy,
        val_accuracy,
        test_accuracy,
        frozen_params: store.len() - trainable.len(),
        groups: groups_audit,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    log::info!(
        "{stage}: {} epochs, best val loss {:.4} at epoch {}",
        report.epochs_run,
        report.best_val_loss,
        report.best_epoch
    );
    Ok(report)
}

fn group(label: &str, names: Vec<String>, lr: f32) -> ParamGroup {
    ParamGroup::new(label, names, lr)
}

/// Stacks the M local classifiers' outputs as `[M·B, N_C]`; each node sees
/// only its own channel.
fn locals_forward(arch: &DistributedArch, s: &mut Session, x: Var) -> Result<Var> {
    let mut outs = Vec::with_capacity(arch.nodes());
    for i in 0..arch.nodes() {
        let xi = s.tape.slice(x, 1, i, 1)?;
        outs.push(arch.local_logprobs(s, xi, i)?);
    }
    Ok(s.tape.concat(&outs, 0)?)
}

pub fn train_local_classifiers(model: &mut DistributedModel, split: &DataSplit, config: &TrainConfig) -> Result<StageReport> {
    let groups = [group("local", model.local_params(), config.lr_fresh)];
    let DistributedModel { arch, store } = model;
    train_loop(
        Stage::Local,
        store,
        &groups,
        Objective::Classify,
        |s, x| locals_forward(arch, s, x),
        split,
        config,
    )
}

pub fn train_classfuse(model: &mut DistributedModel, split: &DataSplit, config: &TrainConfig) -> Result<StageReport> {
    let groups = [
        group("classfuse-mlp", model.prefixed_params(names::CLASSFUSE), config.lr_fresh),
        group("local", model.local_params(), config.lr_finetune),
    ];
    let DistributedModel { arch, store } = model;
    train_loop(
        Stage::ClassFuse,
        store,
        &groups,
        Objective::Classify,
        |s, x| arch.classfuse(s, x, &mut WireAudit::default()),
        split,
        config,
    )
}

pub fn pretrain_autoencoder(model: &mut DistributedModel, split: &DataSplit, config: &TrainConfig) -> Result<StageReport> {
    let groups = [group("compression", model.compression_params(), config.lr_fresh)];
    let DistributedModel { arch, store } = model;
    train_loop(
        Stage::AutoEncoder,
        store,
        &groups,
        Objective::Reconstruct,
        |s, x| arch.reconstruction(s, x, &mut WireAudit::default()),
        split,
        config,
    )
}

/// CompressFuse end to end on classification loss. Compression layers that
/// were already pre-trained as an auto-encoder move to the fine-tune rate.
pub fn train_compressfuse(
    model: &mut DistributedModel,
    split: &DataSplit,
    config: &TrainConfig,
    compression_pretrained: bool,
) -> Result<StageReport> {
    let compression_lr = if compression_pretrained {
        config.lr_finetune
    } else {
        config.lr_fresh
    };
    let groups = [
        group("compression", model.compression_params(), compression_lr),
        group("central", model.central_params(), config.lr_fresh),
    ];
    let DistributedModel { arch, store } = model;
    train_loop(
        Stage::CompressFuse,
        store,
        &groups,
        Objective::Classify,
        |s, x| Ok(arch.compressfuse(s, x, &mut WireAudit::default())?.0),
        split,
        config,
    )
}

fn fullfuse_output(arch: &DistributedArch, s: &mut Session, x: Var) -> Result<Var> {
    Ok(arch.fullfuse(s, x, &mut WireAudit::default())?.fullfuse)
}

fn all_but_fullfuse(model: &DistributedModel) -> Vec<String> {
    model
        .store
        .names()
        .filter(|n| !n.starts_with(names::FULLFUSE))
        .map(String::from)
        .collect()
}

pub fn train_fullfuse(model: &mut DistributedModel, split: &DataSplit, config: &TrainConfig) -> Result<StageReport> {
    let groups = [
        group("fullfuse-mlp", model.prefixed_params(names::FULLFUSE), config.lr_fresh),
        group("pretrained", all_but_fullfuse(model), config.lr_finetune),
    ];
    let DistributedModel { arch, store } = model;
    train_loop(
        Stage::FullFuse,
        store,
        &groups,
        Objective::Classify,
        |s, x| fullfuse_output(arch, s, x),
        split,
        config,
    )
}

/// The ablation: one end-to-end stage on the FullFuse loss, every parameter
/// at the fresh rate.
pub fn train_from_scratch(model: &mut DistributedModel, split: &DataSplit, config: &TrainConfig) -> Result<StageReport> {
    let all: Vec<String> = model.store.names().map(String::from).collect();
    let groups = [group("all", all, config.lr_fresh)];
    let DistributedModel { arch, store } = model;
    train_loop(
        Stage::Scratch,
        store,
        &groups,
        Objective::Classify,
        |s, x| fullfuse_output(arch, s, x),
        split,
        config,
    )
}

/// End-to-end adaptation on one subject's trials at the fine-tune rate.
/// The base model is left untouched; the adapted copy is returned.
pub fn fine_tune_subject(
    model: &DistributedModel,
    dataset: &EpochedDataset,
    subject: u16,
    config: &TrainConfig,
) -> Result<(DistributedModel, StageReport)> {
    let idx = dataset.subject_indices(subject);
    if idx.is_empty() {
        return Err(CoreError::UnknownSubject(subject));
    }
    let split = DataSplit::new(&dataset.subset(&idx)?, config.validation_fraction, config.seed)?;
    let mut tuned = model.clone();
    let all: Vec<String> = tuned.store.names().map(String::from).collect();
    let groups = [group("all", all, config.lr_finetune)];
    let DistributedModel { arch, store } = &mut tuned;
    let report = train_loop(
        Stage::FineTune,
        store,
        &groups,
        Objective::Classify,
        |s, x| fullfuse_output(arch, s, x),
        &split,
        config,
    )?;
    Ok((tuned, report))
}

/// Trains a standalone (centralized) classifier on all channels.
pub fn train_central(model: &mut MsfbcnnModel, split: &DataSplit, config: &TrainConfig) -> Result<StageReport> {
    let all: Vec<String> = model.store.names().map(String::from).collect();
    let groups = [group("central", all, config.lr_fresh)];
    let MsfbcnnModel { arch, store } = model;
    train_loop(
        Stage::Central,
        store,
        &groups,
        Objective::Classify,
        |s, x| arch.forward(s, x),
        split,
        config,
    )
}

/// Drives the stage schedule in order, refusing out-of-order stages.
pub struct Pipeline<'a> {
    model: &'a mut DistributedModel,
    plan: Vec<Stage>,
    next: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(model: &'a mut DistributedModel, ae_pretrain: bool) -> Self {
        let mut plan = vec![Stage::Local, Stage::ClassFuse];
        if ae_pretrain {
            plan.push(Stage::AutoEncoder);
        }
        plan.extend([Stage::CompressFuse, Stage::FullFuse]);
        Pipeline { model, plan, next: 0 }
    }

    pub fn plan(&self) -> &[Stage] {
        &self.plan
    }

    pub fn next_stage(&self) -> Option<Stage> {
        self.plan.get(self.next).copied()
    }

    pub fn model(&self) -> &DistributedModel {
        self.model
    }

    pub fn run_stage(&mut self, stage: Stage, split: &DataSplit, config: &TrainConfig) -> Result<StageReport> {
        let expected = self.next_stage();
        if expected != Some(stage) {
            return Err(CoreError::StageOrder {
                requested: stage.to_string(),
                expected: expected.map_or_else(|| "none (schedule complete)".into(), |s| s.to_string()),
            });
        }
        let report = match stage {
            Stage::Local => train_local_classifiers(self.model, split, config)?,
            Stage::ClassFuse => train_classfuse(self.model, split, config)?,
            Stage::AutoEncoder => pretrain_autoencoder(self.model, split, config)?,
            Stage::CompressFuse => {
                let pretrained = self.plan.contains(&Stage::AutoEncoder);
                train_compressfuse(self.model, split, config, pretrained)?
            }
            Stage::FullFuse => train_fullfuse(self.model, split, config)?,
            other => unreachable!("{other} is never planned"),
        };
        self.next += 1;
        Ok(report)
    }
}

/// Runs the whole schedule, calling `after_stage` once per finished stage
/// (checkpointing hooks in here).
pub fn run_pipeline_with(
    model: &mut DistributedModel,
    split: &DataSplit,
    config: &TrainConfig,
    ae_pretrain: bool,
    mut after_stage: impl FnMut(&StageReport, &DistributedModel) -> Result<()>,
) -> Result<Vec<StageReport>> {
    let mut pipeline = Pipeline::new(model, ae_pretrain);
    let mut reports = Vec::new();
    while let Some(stage) = pipeline.next_stage() {
        let report = pipeline.run_stage(stage, split, config)?;
        after_stage(&report, pipeline.model())?;
        reports.push(report);
    }
    Ok(reports)
}

pub fn run_pipeline(
    model: &mut DistributedModel,
    split: &DataSplit,
    config: &TrainConfig,
    ae_pretrain: bool,
) -> Result<Vec<StageReport>> {
    run_pipeline_with(model, split, config, ae_pretrain, |_, _| Ok(()))
}

/// Eval-mode log-probabilities of a standalone classifier over a dataset.
pub fn predict(model: &MsfbcnnModel, data: &EpochedDataset) -> Result<Tensor> {
    let mut parts = Vec::new();
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        parts.push(model.predict_logprobs(&data.x.select_rows(chunk)?)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(Tensor::stack_rows(&refs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_trace() {
        let mut es = EarlyStopping::new(5);
        let verdicts: Vec<Verdict> = [1.0, 1.1, 1.1, 1.1, 1.1, 1.1].iter().map(|&l| es.observe(l)).collect();
        assert_eq!(verdicts[0], Verdict::Improved);
        assert!(verdicts[1..5].iter().all(|&v| v == Verdict::Worse));
        assert_eq!(verdicts[5], Verdict::Stop);
        assert_eq!(es.best_epoch, 1);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut es = EarlyStopping::new(2);
        es.observe(0.5);
        assert_eq!(es.observe(0.5), Verdict::Worse);
        assert_eq!(es.observe(0.5), Verdict::Stop);
    }

    #[test]
    fn strictly_decreasing_never_stops() {
        let mut es = EarlyStopping::new(5);
        assert!((0..50).all(|e| es.observe(10.0 - e as f64) == Verdict::Improved));
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad_lr = TrainConfig {
            lr_finetune: 1e-2,
            ..Default::default()
        };
        assert!(bad_lr.validate().is_err());
        let bad_patience = TrainConfig {
            patience: 50,
            ..Default::default()
        };
        assert!(bad_patience.validate().is_err());
    }

    #[test]
    fn stage_labels() {
        assert_eq!(Stage::AutoEncoder.to_string(), "AE");
        assert_eq!(Stage::FullFuse.checkpoint_index(), Some(4));
        assert_eq!(Stage::Scratch.checkpoint_index(), None);
    }
}
