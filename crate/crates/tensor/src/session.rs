//! A forward pass bound to a [`ParamStore`].
//!
//! A [`Session`] owns a fresh [`Tape`], lazily places parameters on it the
//! first time a layer asks for them, and routes batch-norm running
//! statistics back into the store. Which parameters receive gradients is
//! decided by the session's [`GradPolicy`]; everything else is recorded as a
//! constant so the backward pass skips it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::Result;
use crate::ops::conv::Padding;
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub enum GradPolicy {
    /// Inference: nothing requires a gradient.
    #[default]
    None,
    All,
    Only(BTreeSet<String>),
}

impl GradPolicy {
    fn wants(&self, name: &str) -> bool {
        match self {
            GradPolicy::None => false,
            GradPolicy::All => true,
            GradPolicy::Only(set) => set.contains(name),
        }
    }
}

enum StoreRef<'a> {
    Shared(&'a ParamStore),
    Exclusive(&'a mut ParamStore),
}

impl StoreRef<'_> {
    fn get(&self) -> &ParamStore {
        match self {
            StoreRef::Shared(s) => s,
            StoreRef::Exclusive(s) => s,
        }
    }
}

pub struct Session<'a> {
    pub tape: Tape,
    store: StoreRef<'a>,
    rng: Option<&'a mut RngState>,
    mode: Mode,
    policy: GradPolicy,
    bound: HashMap<String, Var>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut RngState, mode: Mode, policy: GradPolicy) -> Self {
        Session {
            tape: Tape::new(),
            store: StoreRef::Exclusive(store),
            rng: Some(rng),
            mode,
            policy,
            bound: HashMap::new(),
        }
    }

    /// An eval-mode session that only reads `store`: no gradients, no
    /// randomness, running statistics untouched.
    pub fn inference(store: &'a ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            store: StoreRef::Shared(store),
            rng: None,
            mode: Mode::Eval,
            policy: GradPolicy::None,
            bound: HashMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The session's generator; `None` for inference sessions.
    pub fn rng(&mut self) -> Option<&mut RngState> {
        self.rng.as_deref_mut()
    }

    pub fn store(&self) -> &ParamStore {
        self.store.get()
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// The tape variable holding parameter `name`, binding it on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self.store.get().get(name)?.clone();
        let v = self.tape.leaf(value, self.policy.wants(name));
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, weight: &str, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let k = self.param(weight)?;
        self.tape.conv2d(x, k, stride, padding)
    }

    pub fn conv2d_transposed(
        &mut self,
        x: Var,
        weight: &str,
        stride: (usize, usize),
        padding: Padding,
        output_hw: (usize, usize),
    ) -> Result<Var> {
        let k = self.param(weight)?;
        self.tape.conv2d_transposed(x, k, stride, padding, output_hw)
    }

    /// Batch-norm with parameters `{prefix}.gamma`, `{prefix}.beta` and
    /// running statistics stored as buffers under the same prefix.
    pub fn batchnorm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mut stats = self.store.get().running_stats(prefix)?;
        let y = self.tape.batchnorm(x, gamma, beta, self.mode, &mut stats)?;
        if let (Mode::Train, StoreRef::Exclusive(store)) = (self.mode, &mut self.store) {
            store.set_running_stats(prefix, stats);
        }
        Ok(y)
    }

    pub fn dense(&mut self, x: Var, weight: &str, bias: Option<&str>) -> Result<Var> {
        let w = self.param(weight)?;
        let b = bias.map(|b| self.param(b)).transpose()?;
        self.tape.dense(x, w, b)
    }

    pub fn dropout(&mut self, x: Var, rate: f32) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => self.tape.dropout(x, rate, self.mode, rng),
            // inference sessions are always in eval mode, where dropout is
            // the identity and draws nothing
            None => self.tape.dropout(x, rate, Mode::Eval, &mut RngState::new(0)),
        }
    }

    /// Runs backward from `loss` and returns gradients keyed by parameter
    /// name, for every bound parameter that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let mut grads: Gradients = self.tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if let Some(g) = grads.take(v) {
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }
}
