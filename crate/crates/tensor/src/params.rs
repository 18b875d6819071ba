//! Named parameter and buffer storage.

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::ops::norm::RunningStats;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_params(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(TensorError::InvalidArgument("fan_in must be at least 1".into()));
    }
    let bound = 1.0 / (fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.uniform(-bound, bound))
}

/// Trainable parameters and non-trainable buffers (batch-norm running
/// statistics), keyed by dotted names such as `local.0.timeconv1.weight`.
///
/// Iteration order is the lexicographic order of names, which keeps every
/// traversal (optimizer steps, serialization) deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    /// Registers `{prefix}.running_mean` / `{prefix}.running_var`.
    pub fn insert_running_stats(&mut self, prefix: &str, channels: usize) -> Result<()> {
        let rs = RunningStats::new(channels)?;
        self.insert_buffer(format!("{prefix}.running_mean"), rs.mean);
        self.insert_buffer(format!("{prefix}.running_var"), rs.var);
        Ok(())
    }

    pub fn running_stats(&self, prefix: &str) -> Result<RunningStats> {
        let get = |suffix: &str| {
            let key = format!("{prefix}.{suffix}");
            self.buffers
                .get(&key)
                .cloned()
                .ok_or(TensorError::UnknownParam(key))
        };
        Ok(RunningStats {
            mean: get("running_mean")?,
            var: get("running_var")?,
        })
    }

    pub fn set_running_stats(&mut self, prefix: &str, stats: RunningStats) {
        self.buffers.insert(format!("{prefix}.running_mean"), stats.mean);
        self.buffers.insert(format!("{prefix}.running_var"), stats.var);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Parameter names that start with `prefix`.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.params
            .keys()
            .filter(move |k| k.starts_with(prefix))
            .map(String::as_str)
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Copies every parameter and buffer under `prefix` from `other`,
    /// renaming the prefix to `target_prefix`.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str, target_prefix: &str) -> usize {
        let mut copied = 0;
        for (src, dst) in [(&other.params, &mut self.params), (&other.buffers, &mut self.buffers)] {
            for (k, v) in src.iter().filter(|(k, _)| k.starts_with(prefix)) {
                dst.insert(format!("{target_prefix}{}", &k[prefix.len()..]), v.clone());
                copied += 1;
            }
        }
        copied
    }
}
