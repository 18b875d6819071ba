//! Bias-corrected Adam with per-group learning rates.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// A set of parameter names sharing one learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub label: String,
    pub names: BTreeSet<String>,
    pub lr: f32,
}

impl ParamGroup {
    pub fn new(label: impl Into<String>, names: impl IntoIterator<Item = String>, lr: f32) -> Self {
        ParamGroup {
            label: label.into(),
            names: names.into_iter().collect(),
            lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }

    /// One optimizer step over every parameter in `groups`. A parameter
    /// without an entry in `grads` is treated as having a zero gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        groups: &[ParamGroup],
    ) -> Result<()> {
        let mut lr_of: BTreeMap<&str, f32> = BTreeMap::new();
        for g in groups {
            for n in &g.names {
                if lr_of.insert(n.as_str(), g.lr).is_some() {
                    return Err(TensorError::InvalidArgument(format!(
                        "parameter `{n}` appears in more than one group"
                    )));
                }
            }
        }
        for (name, g) in grads {
            if !lr_of.contains_key(name.as_str()) {
                return Err(TensorError::UngroupedParam(name.clone()));
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        for (name, lr) in lr_of {
            let p = params.get_mut(name)?;
            let grad = grads.get(name);
            if let Some(g) = grad {
                if g.shape() != p.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam",
                        detail: format!("`{name}`: grad {:?} vs param {:?}", g.shape(), p.shape()),
                    });
                }
            }
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| p.zeros_like());
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| p.zeros_like());
            let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon as f64);
            for i in 0..p.len() {
                let gi = grad.map_or(0.0, |g| g.data()[i]);
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi as f64 / bc1;
                let vhat = vi as f64 / bc2;
                p.data_mut()[i] -= (lr as f64 * mhat / (vhat.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    groups: &[ParamGroup],
) -> Result<()> {
    state.step(params, grads, groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[(&str, Vec<f32>)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, v) in vals {
            s.insert(*n, Tensor::new(&[v.len()], v.clone()).unwrap());
        }
        s
    }

    fn grads(vals: &[(&str, Vec<f32>)]) -> BTreeMap<String, Tensor> {
        vals.iter()
            .map(|(n, v)| (n.to_string(), Tensor::new(&[v.len()], v.clone()).unwrap()))
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = store(&[("w", vec![1.0, -2.0])]);
        let before = p.clone();
        let mut s = AdamState::new();
        let g = grads(&[("w", vec![0.0, 0.0])]);
        s.step(&mut p, &g, &[ParamGroup::new("all", ["w".to_string()], 1e-3)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let mut p = store(&[("w", vec![0.0, 0.0, 0.0])]);
        let mut s = AdamState::new();
        let g = grads(&[("w", vec![3.0, -0.02, 1e-3])]);
        s.step(&mut p, &g, &[ParamGroup::new("all", ["w".to_string()], 1e-3)]).unwrap();
        // closed form: m̂ = g, v̂ = g², update = lr·g/(|g| + eps)
        for (&v, &gi) in p.get("w").unwrap().data().iter().zip(&[3.0f64, -0.02, 1e-3]) {
            let expected = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((v as f64 - expected).abs() < 1e-9, "{v} vs {expected}");
        }
    }

    #[test]
    fn groups_scale_updates_by_their_rate() {
        let mut p = store(&[("a", vec![0.0]), ("b", vec![0.0])]);
        let mut s = AdamState::new();
        let g = grads(&[("a", vec![0.5]), ("b", vec![0.5])]);
        let groups = [
            ParamGroup::new("fresh", ["a".to_string()], 1e-3),
            ParamGroup::new("finetune", ["b".to_string()], 1e-4),
        ];
        s.step(&mut p, &g, &groups).unwrap();
        let ratio = p.get("a").unwrap().data()[0] / p.get("b").unwrap().data()[0];
        assert!((ratio - 10.0).abs() < 1e-4);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = store(&[("enc.w", vec![0.0])]);
        let mut s = AdamState::new();
        let g = grads(&[("enc.w", vec![f32::NAN])]);
        let err = s
            .step(&mut p, &g, &[ParamGroup::new("all", ["enc.w".to_string()], 1e-3)])
            .unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient("enc.w".into()));
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn ungrouped_gradient_is_an_error() {
        let mut p = store(&[("w", vec![0.0])]);
        let mut s = AdamState::new();
        let g = grads(&[("w", vec![1.0])]);
        assert!(matches!(s.step(&mut p, &g, &[]), Err(TensorError::UngroupedParam(_))));
    }
}
