//! Entropy-gated early exit and the bandwidth model.
//!
//! The fusion center always runs ClassFuse. A sample whose normalized
//! ClassFuse entropy is at most the exit threshold keeps that answer;
//! otherwise the nodes are asked for their compressed frames and FullFuse
//! decides. Per node and per sample, the relative bandwidth is
//!
//! ```text
//! B = (|C| + (1 − λ) · L / D) / L
//! ```
//!
//! with λ the fraction of samples that exit early.

use bwnet_tensor::{Session, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::EpochedDataset;
use crate::distributed::{DistributedModel, WireAudit};
use crate::error::{CoreError, Result};

/// Samples per forward when evaluating a dataset.
const CHUNK: usize = 256;

/// Shannon entropy of `p` divided by `ln |C|`, with `0 · ln 0 = 0`. The
/// vector is renormalized first so rounding in its sum does not matter.
pub fn normalized_entropy(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(CoreError::InvalidArgument(format!(
            "normalized entropy needs at least 2 classes, got {}",
            p.len()
        )));
    }
    if p.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(CoreError::InvalidArgument("probabilities must be finite and nonnegative".into()));
    }
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(CoreError::InvalidArgument("probabilities sum to zero".into()));
    }
    let h: f64 = p
        .iter()
        .map(|&v| v / total)
        .filter(|&v| v > 0.0)
        .map(|v| -v * v.ln())
        .sum();
    Ok((h / (p.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Normalized entropy of one row of log-probabilities.
pub fn logprob_entropy(row: &[f32]) -> Result<f64> {
    let p: Vec<f64> = row.iter().map(|&v| (v as f64).exp()).collect();
    normalized_entropy(&p)
}

/// Scalars sent per node per sample, relative to the window length, with
/// the nominal `L / D` samples per compressed frame.
pub fn relative_bandwidth(window_len: usize, num_classes: usize, factor: usize, lambda: f64) -> Result<f64> {
    if window_len == 0 {
        return Err(CoreError::InvalidArgument("window length must be at least 1".into()));
    }
    if factor == 0 {
        return Err(CoreError::InvalidArgument("compression factor must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    let l = window_len as f64;
    Ok((num_classes as f64 + (1.0 - lambda) * l / factor as f64) / l)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitPolicy {
    pub threshold: f64,
}

impl ExitPolicy {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(CoreError::InvalidArgument(format!("exit threshold {threshold} outside [0, 1]")));
        }
        Ok(ExitPolicy { threshold })
    }

    pub fn exits(&self, entropy: f64) -> bool {
        entropy <= self.threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub entropy: f64,
    pub exited: bool,
    pub prediction: usize,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub entries: Vec<TraceEntry>,
}

impl InferenceTrace {
    pub fn lambda(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.exited).count() as f64 / self.entries.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct ExitOutcome {
    pub predictions: Vec<usize>,
    pub trace: InferenceTrace,
    /// Samples that went through the central classifier.
    pub central_invocations: usize,
    pub audit: WireAudit,
}

/// Eval-mode inference with early exit. CompressFuse (compression,
/// reconstruction, central classifier) runs only on the samples that do not
/// exit.
pub fn infer_with_exit(
    model: &DistributedModel,
    x: &Tensor,
    labels: Option<&[usize]>,
    policy: ExitPolicy,
) -> Result<ExitOutcome> {
    let mut audit = WireAudit::default();
    let classfuse = {
        let mut s = Session::inference(&model.store);
        let xv = s.input(x.clone());
        let out = model.arch.classfuse(&mut s, xv, &mut audit)?;
        s.value(out).clone()
    };
    let n = classfuse.dim(0);
    let k = classfuse.dim(1);
    let mut predictions = classfuse.argmax_rows()?;
    let mut entries = Vec::with_capacity(n);
    let mut escalate = Vec::new();
    for (i, row) in classfuse.data().chunks(k).enumerate() {
        let entropy = logprob_entropy(row)?;
        let exited = policy.exits(entropy);
        if !exited {
            escalate.push(i);
        }
        entries.push(TraceEntry {
            entropy,
            exited,
            prediction: 0,
            label: labels.map(|l| l[i]),
        });
    }

    let mut central_invocations = 0;
    if !escalate.is_empty() {
        let mut s = Session::inference(&model.store);
        let xv = s.input(x.select_rows(&escalate)?);
        // the class vectors are already at the fusion center; only frames move
        let cf = s.input(classfuse.select_rows(&escalate)?);
        let (cpf, _) = model.arch.compressfuse(&mut s, xv, &mut audit)?;
        central_invocations += s.value(cpf).dim(0);
        let full = model.arch.fuse_branches(&mut s, cf, cpf)?;
        for (&i, p) in escalate.iter().zip(s.value(full).argmax_rows()?) {
            predictions[i] = p;
        }
    }
    for (e, &p) in entries.iter_mut().zip(&predictions) {
        e.prediction = p;
    }
    Ok(ExitOutcome {
        predictions,
        trace: InferenceTrace { entries },
        central_invocations,
        audit,
    })
}

/// Per-sample outputs of every branch, computed once so any number of
/// thresholds can be applied afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchEval {
    pub entropies: Vec<f64>,
    pub classfuse: Vec<usize>,
    pub compressfuse: Vec<usize>,
    pub fullfuse: Vec<usize>,
    pub labels: Vec<usize>,
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

impl BranchEval {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classfuse_accuracy(&self) -> f64 {
        accuracy(&self.classfuse, &self.labels)
    }

    pub fn compressfuse_accuracy(&self) -> f64 {
        accuracy(&self.compressfuse, &self.labels)
    }

    pub fn fullfuse_accuracy(&self) -> f64 {
        accuracy(&self.fullfuse, &self.labels)
    }

    /// Predictions under `policy`: ClassFuse for exited samples, FullFuse
    /// for the rest.
    pub fn exit_predictions(&self, policy: ExitPolicy) -> Vec<usize> {
        (0..self.len())
            .map(|i| {
                if policy.exits(self.entropies[i]) {
                    self.classfuse[i]
                } else {
                    self.fullfuse[i]
                }
            })
            .collect()
    }

    pub fn lambda(&self, policy: ExitPolicy) -> f64 {
        self.entropies.iter().filter(|&&h| policy.exits(h)).count() as f64 / self.len() as f64
    }
}

pub fn evaluate_branches(model: &DistributedModel, data: &EpochedDataset) -> Result<BranchEval> {
    if data.is_empty() {
        return Err(CoreError::EmptyDataset(""));
    }
    let mut eval = BranchEval {
        entropies: Vec::with_capacity(data.len()),
        classfuse: Vec::with_capacity(data.len()),
        compressfuse: Vec::with_capacity(data.len()),
        fullfuse: Vec::with_capacity(data.len()),
        labels: data.labels.clone(),
    };
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let mut s = Session::inference(&model.store);
        let xv = s.input(data.x.select_rows(chunk)?);
        let v = model.arch.fullfuse(&mut s, xv, &mut WireAudit::default())?;
        let cf = s.value(v.classfuse);
        for row in cf.data().chunks(cf.dim(1)) {
            eval.entropies.push(logprob_entropy(row)?);
        }
        eval.classfuse.extend(cf.argmax_rows()?);
        eval.compressfuse.extend(s.value(v.compressfuse).argmax_rows()?);
        eval.fullfuse.extend(s.value(v.fullfuse).argmax_rows()?);
    }
    Ok(eval)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub lambda: f64,
    pub bandwidth: f64,
    pub accuracy: f64,
}

/// `0, step, 2·step, …, 1`; `step` must divide 1.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CoreError::InvalidArgument(format!("threshold step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidArgument(format!("threshold step {step} does not divide 1")));
    }
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Sweep with λ and accuracy both measured on `eval`.
pub fn sweep_from_eval(
    eval: &BranchEval,
    window_len: usize,
    num_classes: usize,
    factor: usize,
    step: f64,
) -> Result<Vec<SweepPoint>> {
    sweep_calibrated(eval, eval, window_len, num_classes, factor, step)
}

/// Sweep with λ (and so bandwidth) measured on `calibration` and accuracy
/// on `eval`.
pub fn sweep_calibrated(
    eval: &BranchEval,
    calibration: &BranchEval,
    window_len: usize,
    num_classes: usize,
    factor: usize,
    step: f64,
) -> Result<Vec<SweepPoint>> {
    if eval.is_empty() || calibration.is_empty() {
        return Err(CoreError::EmptyDataset(""));
    }
    threshold_grid(step)?
        .into_iter()
        .map(|threshold| {
            let policy = ExitPolicy::new(threshold)?;
            let lambda = calibration.lambda(policy);
            Ok(SweepPoint {
                threshold,
                lambda,
                bandwidth: relative_bandwidth(window_len, num_classes, factor, lambda)?,
                accuracy: accuracy(&eval.exit_predictions(policy), &eval.labels),
            })
        })
        .collect()
}

pub fn sweep_thresholds(model: &DistributedModel, data: &EpochedDataset, step: f64) -> Result<Vec<SweepPoint>> {
    let eval = evaluate_branches(model, data)?;
    let cfg = model.config();
    sweep_from_eval(&eval, cfg.window_len(), cfg.num_classes(), cfg.compressor.factor, step)
}

fn dominates(a: &SweepPoint, b: &SweepPoint) -> bool {
    a.bandwidth <= b.bandwidth && a.accuracy >= b.accuracy && (a.bandwidth < b.bandwidth || a.accuracy > b.accuracy)
}

/// Points no other point beats on both bandwidth (lower) and accuracy
/// (higher), ordered by bandwidth; ties keep their input order.
pub fn pareto_front(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let mut front: Vec<SweepPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .copied()
        .collect();
    front.sort_by(|a, b| a.bandwidth.total_cmp(&b.bandwidth));
    front
}
