//! Learned node selection: `M` Gumbel-softmax rows over the candidate
//! nodes, trained jointly with a central classifier that sees only the
//! selected channels.
//!
//! By default the classifier sees the relaxed mix `Σ_k y_k x_k` with
//! `y = softmax((logits + gumbel) / t)`; the straight-through variant
//! (one-hot forward, softmax gradient backward) is available too. With a
//! power-based classifier the straight-through gradient toward an unselected
//! candidate is first order in that candidate and averages out, so it rarely
//! finds a planted channel. The temperature decays geometrically from
//! `t_start` to `t_end` over all optimizer steps; duplicate picks are
//! resolved after training.

use bwnet_tensor::{
    Activation, AdamState, GradPolicy, Mode, ParamGroup, ParamStore, RngState, Session, Tensor, Var,
};
use serde::{Deserialize, Serialize};

use crate::dataset::EpochedDataset;
use crate::error::{CoreError, Result};
use crate::msfbcnn::{MsfbcnnArch, MsfbcnnConfig};
use crate::training::TrainConfig;

pub const LOGITS: &str = "select.logits";
const CLASSIFIER_PREFIX: &str = "select.central.";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    #[default]
    Relaxed,
    StraightThrough,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub estimator: Estimator,
    pub t_start: f64,
    pub t_end: f64,
    /// Fixed epoch count: the temperature schedule needs a known length,
    /// so there is no early stopping.
    pub epochs: usize,
    /// The logits move faster than the classifier weights.
    pub logits_lr: f32,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            estimator: Estimator::Relaxed,
            t_start: 2.0,
            t_end: 0.1,
            epochs: 20,
            logits_lr: 0.05,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_start > 0.0 && self.t_end > 0.0 && self.t_end <= self.t_start) {
            return Err(CoreError::InvalidConfig(format!(
                "temperatures must satisfy 0 < t_end ≤ t_start, got {} → {}",
                self.t_start, self.t_end
            )));
        }
        if self.epochs == 0 || self.logits_lr.is_nan() || self.logits_lr <= 0.0 {
            return Err(CoreError::InvalidConfig("selection needs ≥ 1 epoch and a positive logits lr".into()));
        }
        Ok(())
    }

    /// Temperature at optimizer step `step` of `total`.
    pub fn temperature(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.t_end;
        }
        let frac = step as f64 / (total - 1) as f64;
        self.t_start * (self.t_end / self.t_start).powf(frac)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Candidate index per row, all distinct.
    pub nodes: Vec<usize>,
    /// Temperatures of the first and last optimizer step.
    pub temperature_first: f64,
    pub temperature_last: f64,
    /// Learned logits, row-major `[M, K]`.
    pub logits: Vec<Vec<f32>>,
    /// Largest softmax weight per row at the final temperature.
    pub row_confidence: Vec<f64>,
}

fn softmax(row: &[f32], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = row.iter().map(|&v| ((v as f64 - max) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Picks one distinct candidate per row. Rows are served in order of their
/// peak logit; a row whose favorite is taken falls back to its next-best.
pub fn dedupe_rows(logits: &[Vec<f32>]) -> Vec<usize> {
    let peak = |r: &Vec<f32>| r.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| peak(&logits[b]).total_cmp(&peak(&logits[a])).then(a.cmp(&b)));
    let mut taken = vec![false; logits.first().map_or(0, Vec::len)];
    let mut picks = vec![0; logits.len()];
    for r in order {
        let mut ranked: Vec<usize> = (0..logits[r].len()).collect();
        ranked.sort_by(|&a, &b| logits[r][b].total_cmp(&logits[r][a]).then(a.cmp(&b)));
        let pick = ranked.into_iter().find(|&k| !taken[k]).expect("M ≤ K leaves a free candidate");
        taken[pick] = true;
        picks[r] = pick;
    }
    picks
}

fn mixed_forward(
    s: &mut Session,
    central: &MsfbcnnArch,
    estimator: Estimator,
    x: Var,
    noise: &Tensor,
    temperature: f64,
) -> Result<Var> {
    let logits = s.param(LOGITS)?;
    let g = s.input(noise.clone());
    let z = s.tape.add(logits, g)?;
    let z = s.tape.scale(z, (1.0 / temperature) as f32)?;
    let soft = s.tape.activation(Activation::Softmax, z)?;
    let weights = match estimator {
        Estimator::Relaxed => soft,
        Estimator::StraightThrough => s.tape.straight_through_onehot(soft)?,
    };
    let mixed = s.tape.channel_mix(x, weights)?;
    central.forward(s, mixed)
}

/// Trains the selection layer with a fresh central classifier on
/// `candidates` (`[N, K, L, 1]`, one channel per candidate node) and
/// returns `nodes` distinct candidate indices.
pub fn gumbel_select_nodes(
    candidates: &EpochedDataset,
    central: &MsfbcnnConfig,
    nodes: usize,
    selection: &SelectionConfig,
    train: &TrainConfig,
) -> Result<SelectionOutcome> {
    selection.validate()?;
    train.validate()?;
    let k = candidates.channels();
    if nodes == 0 || nodes > k {
        return Err(CoreError::InvalidArgument(format!("cannot select {nodes} of {k} candidates")));
    }
    if candidates.is_empty() {
        return Err(CoreError::EmptyDataset(" (selection candidates)"));
    }
    let arch = MsfbcnnArch::new(central.with_channels(nodes), CLASSIFIER_PREFIX)?;
    let root = RngState::new(train.seed).fork(0x5e1ec7);
    let mut init_rng = root.fork(0);
    let mut store = ParamStore::new();
    arch.init(&mut store, &mut init_rng)?;
    // zero logits: the first picks come from the noise alone
    store.insert(LOGITS, Tensor::zeros(&[nodes, k])?);

    let groups = [
        ParamGroup::new("selection", [LOGITS.to_string()], selection.logits_lr),
        ParamGroup::new("central", arch.param_names(), train.lr_fresh),
    ];
    let mut adam = AdamState::new();
    let mut rng = root.fork(1);
    let mut noise_rng = root.fork(2);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let total = selection.epochs * order.len().div_ceil(train.batch_size);
    let mut step = 0;
    let mut first = None;
    let mut last = selection.t_start;

    for epoch in 0..selection.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train.batch_size) {
            let temperature = selection.temperature(step, total);
            first.get_or_insert(temperature);
            last = temperature;
            let noise = Tensor::from_fn(&[nodes, k], |_| noise_rng.gumbel())?;
            let x = candidates.x.select_rows(batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| candidates.labels[i]).collect();
            let grads = {
                let mut s = Session::new(&mut store, &mut rng, Mode::Train, GradPolicy::All);
                let xv = s.input(x);
                let out = mixed_forward(&mut s, &arch, selection.estimator, xv, &noise, temperature)?;
                let loss = s.tape.cross_entropy(out, &labels)?;
                loss_sum += s.value(loss).data()[0] as f64 * batch.len() as f64;
                s.backward(loss)?
            };
            adam.step(&mut store, &grads, &groups)?;
            step += 1;
        }
        log::debug!(
            "selection epoch {}: loss {:.4}, temperature {last:.3}",
            epoch + 1,
            loss_sum / candidates.len() as f64
        );
    }

    let logits: Vec<Vec<f32>> = store.get(LOGITS)?.data().chunks(k).map(<[f32]>::to_vec).collect();
    let row_confidence = logits
        .iter()
        .map(|r| softmax(r, selection.t_end).into_iter().fold(0.0, f64::max))
        .collect();
    let outcome = SelectionOutcome {
        nodes: dedupe_rows(&logits),
        temperature_first: first.unwrap_or(selection.t_start),
        temperature_last: last,
        logits,
        row_confidence,
    };
    log::info!(
        "selected nodes {:?} (temperature {} → {})",
        outcome.nodes,
        outcome.temperature_first,
        outcome.temperature_last
    );
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = SelectionConfig::default();
        assert!((c.temperature(0, 50) - 2.0).abs() < 1e-12);
        assert!((c.temperature(49, 50) - 0.1).abs() < 1e-12);
        let mid = c.temperature(1, 3);
        assert!((mid - (0.2f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn duplicates_fall_back_to_next_best() {
        let logits = vec![vec![3.0, 2.0, 0.0], vec![5.0, 1.0, 4.0], vec![1.0, 0.5, 0.2]];
        // row 1 (peak 5) takes 0, row 0 falls back to 1, row 2 gets 2
        assert_eq!(dedupe_rows(&logits), vec![1, 0, 2]);
    }

    #[test]
    fn selecting_every_candidate_returns_a_permutation() {
        let logits = vec![vec![1.0, 0.0, 0.0]; 3];
        let mut picks = dedupe_rows(&logits);
        picks.sort();
        assert_eq!(picks, vec![0, 1, 2]);
    }
}
