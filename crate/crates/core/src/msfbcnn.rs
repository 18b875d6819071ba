//! Multiscale parallel filter-bank CNN.
//!
//! Four temporal convolutions of different lengths run side by side on every
//! channel, their outputs are concatenated and batch-normalized, a spatial
//! convolution mixes all channels, and a square → average-pool → log chain
//! turns the result into log band-power features for a dense classifier.
//!
//! Layer table for an input window `[C, T]` (time along H, channels along W):
//!
//! | layer         | kernel   | stride | params                 | output          |
//! |---------------|----------|--------|------------------------|-----------------|
//! | timeconv1..4  | (k, 1)   | 1      | k·F_T, k ∈ 64/40/26/16 | (F_T, T, C) each|
//! | concat        |          |        |                        | (4F_T, T, C)    |
//! | bn1           |          |        | 8F_T                   | (4F_T, T, C)    |
//! | spatial       | (1, C)   | 1      | 4C·F_T·F_S             | (F_S, T, 1)     |
//! | bn2           |          |        | 2F_S                   | (F_S, T, 1)     |
//! | square        |          |        |                        |                 |
//! | avgpool       | (75, 1)  | 15     |                        | (F_S, T/15, 1)  |
//! | log           |          |        |                        |                 |
//! | dropout       |          |        |                        |                 |
//! | dense         |          |        | F_S·(T/15)·N_C         | N_C             |
//! | log-softmax   |          |        |                        | N_C             |
//!
//! Internally each channel is run through the temporal convolutions as its
//! own batch row (`[B·C, 1, T, 1]`), and the spatial convolution becomes a
//! 1×1 convolution over the `C·4F_T` stacked feature maps. Both are exact
//! re-layouts of the table above.

use bwnet_tensor::{init_params, Activation, Mode, Padding, ParamStore, RngState, Session, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, LayerContext, Result};

pub const TIME_KERNELS: [usize; 4] = [64, 40, 26, 16];
pub const POOL_KERNEL: usize = 75;
pub const POOL_STRIDE: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsfbcnnConfig {
    pub channels: usize,
    pub window_len: usize,
    pub temporal_filters: usize,
    pub spatial_filters: usize,
    pub num_classes: usize,
    pub dropout_rate: f32,
}

impl Default for MsfbcnnConfig {
    fn default() -> Self {
        MsfbcnnConfig {
            channels: 1,
            window_len: 1125,
            temporal_filters: 10,
            spatial_filters: 10,
            num_classes: 4,
            dropout_rate: 0.5,
        }
    }
}

impl MsfbcnnConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("channels", self.channels),
            ("window_len", self.window_len),
            ("temporal_filters", self.temporal_filters),
            ("spatial_filters", self.spatial_filters),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.window_len.is_multiple_of(POOL_STRIDE) {
            return Err(CoreError::InvalidConfig(format!(
                "window_len {} is not divisible by {POOL_STRIDE}",
                self.window_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn pooled_len(&self) -> usize {
        self.window_len / POOL_STRIDE
    }

    /// Same configuration with a different channel count.
    pub fn with_channels(&self, channels: usize) -> Self {
        MsfbcnnConfig { channels, ..*self }
    }
}

/// Trainable scalar count from the layer table (with the post-concat
/// batch-norm counted over all `4F_T` channels).
pub fn count_params(config: &MsfbcnnConfig) -> usize {
    let (c, ft, fs) = (config.channels, config.temporal_filters, config.spatial_filters);
    let time: usize = TIME_KERNELS.iter().map(|k| k * ft).sum();
    let bn1 = 2 * 4 * ft;
    let spatial = 4 * c * ft * fs;
    let bn2 = 2 * fs;
    let dense = fs * config.pooled_len() * config.num_classes;
    time + bn1 + spatial + bn2 + dense
}

/// One row of the layer table as built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    /// Parameter names, relative to the model prefix.
    pub params: Vec<(String, Vec<usize>)>,
}

/// The classifier's structure, bound to a name prefix inside some
/// [`ParamStore`]. Several architectures can share one store (the
/// distributed network holds M + 1 of them).
#[derive(Clone, Debug, PartialEq)]
pub struct MsfbcnnArch {
    pub config: MsfbcnnConfig,
    pub prefix: String,
}

impl MsfbcnnArch {
    pub fn new(config: MsfbcnnConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(MsfbcnnArch {
            config,
            prefix: prefix.into(),
        })
    }

    fn name(&self, local: &str) -> String {
        format!("{}{}", self.prefix, local)
    }

    /// Layers in forward order with their parameter shapes.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        let ft = c.temporal_filters;
        let mut layers: Vec<LayerSpec> = TIME_KERNELS
            .iter()
            .enumerate()
            .map(|(i, &k)| LayerSpec {
                name: ["timeconv1", "timeconv2", "timeconv3", "timeconv4"][i],
                params: vec![(format!("timeconv{}.weight", i + 1), vec![ft, 1, k, 1])],
            })
            .collect();
        let bn = |name: &'static str, ch: usize| LayerSpec {
            name,
            params: vec![(format!("{name}.gamma"), vec![ch]), (format!("{name}.beta"), vec![ch])],
        };
        let bare = |name: &'static str| LayerSpec { name, params: vec![] };
        layers.push(bare("concat"));
        layers.push(bn("bn1", 4 * ft));
        layers.push(LayerSpec {
            name: "spatial",
            params: vec![("spatial.weight".into(), vec![c.spatial_filters, 4 * ft, 1, c.channels])],
        });
        layers.push(bn("bn2", c.spatial_filters));
        layers.push(bare("square"));
        layers.push(bare("avgpool"));
        layers.push(bare("log"));
        layers.push(bare("dropout"));
        layers.push(LayerSpec {
            name: "dense",
            params: vec![(
                "dense.weight".into(),
                vec![c.spatial_filters * c.pooled_len(), c.num_classes],
            )],
        });
        layers.push(bare("log_softmax"));
        layers
    }

    /// Adds freshly initialized parameters and running statistics to `store`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) -> Result<()> {
        for layer in self.layers() {
            for (local, shape) in &layer.params {
                let name = self.name(local);
                let value = if local.ends_with(".gamma") {
                    Tensor::ones(shape)?
                } else if local.ends_with(".beta") {
                    Tensor::zeros(shape)?
                } else {
                    // fan-in = every axis but the output one
                    let fan_in = if layer.name == "dense" {
                        shape[0]
                    } else {
                        shape[1..].iter().product()
                    };
                    init_params(shape, fan_in, rng)?
                };
                store.insert(name, value);
            }
            if layer.name.starts_with("bn") {
                let ch = layer.params[0].1[0];
                store.insert_running_stats(&self.name(layer.name), ch)?;
            }
        }
        Ok(())
    }

    /// Every parameter name this classifier owns.
    pub fn param_names(&self) -> Vec<String> {
        self.layers()
            .iter()
            .flat_map(|l| l.params.iter().map(|(n, _)| self.name(n)))
            .collect()
    }

    /// Forward pass from windows `[B, C, T, 1]` to log-probabilities
    /// `[B, N_C]`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let shape = s.value(x).shape().to_vec();
        let expected = [cfg.channels, cfg.window_len, 1];
        if shape.len() != 4 || shape[1..] != expected {
            return Err(CoreError::Layer {
                layer: format!("{}input", self.prefix),
                source: bwnet_tensor::TensorError::ShapeMismatch {
                    op: "msfbcnn",
                    detail: format!("expected [B, {}, {}, 1], got {shape:?}", cfg.channels, cfg.window_len),
                },
            });
        }
        let (b, c, t) = (shape[0], cfg.channels, cfg.window_len);
        let ft4 = 4 * cfg.temporal_filters;

        let rows = s.tape.reshape(x, &[b * c, 1, t, 1]).layer("input")?;
        let mut branches = Vec::with_capacity(TIME_KERNELS.len());
        for i in 1..=TIME_KERNELS.len() {
            let layer = format!("timeconv{i}");
            let w = self.name(&format!("{layer}.weight"));
            branches.push(s.conv2d(rows, &w, (1, 1), Padding::Same).layer(&layer)?);
        }
        let h = s.tape.concat(&branches, 1).layer("concat")?;
        let h = s.batchnorm(h, &self.name("bn1")).layer("bn1")?;

        // [B·C, 4F_T, T, 1] → [B, C·4F_T, T, 1]; the table-shaped kernel
        // [F_S, 4F_T, 1, C] is rearranged to match the (channel, filter) order
        let h = s.tape.reshape(h, &[b, c * ft4, t, 1]).layer("spatial")?;
        let k = s.param(&self.name("spatial.weight")).layer("spatial")?;
        let k = s.tape.permute(k, &[0, 3, 1, 2]).layer("spatial")?;
        let k = s.tape.reshape(k, &[cfg.spatial_filters, c * ft4, 1, 1]).layer("spatial")?;
        let h = s.tape.conv2d(h, k, (1, 1), Padding::Valid).layer("spatial")?;
        let h = s.batchnorm(h, &self.name("bn2")).layer("bn2")?;

        let h = s.tape.activation(Activation::Square, h).layer("square")?;
        let h = s
            .tape
            .avgpool2d(h, (POOL_KERNEL, 1), (POOL_STRIDE, 1), true)
            .layer("avgpool")?;
        let h = s.tape.activation(Activation::SafeLog, h).layer("log")?;
        let h = s.dropout(h, cfg.dropout_rate).layer("dropout")?;
        let h = s
            .tape
            .reshape(h, &[b, cfg.spatial_filters * cfg.pooled_len()])
            .layer("dense")?;
        let h = s.dense(h, &self.name("dense.weight"), None).layer("dense")?;
        s.tape.log_softmax(h).layer("log_softmax")
    }
}

/// A standalone classifier owning its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MsfbcnnModel {
    pub arch: MsfbcnnArch,
    pub store: ParamStore,
}

pub fn build_msfbcnn(config: MsfbcnnConfig, rng: &mut RngState) -> Result<MsfbcnnModel> {
    let arch = MsfbcnnArch::new(config, "")?;
    let mut store = ParamStore::new();
    arch.init(&mut store, rng)?;
    Ok(MsfbcnnModel { arch, store })
}

impl MsfbcnnModel {
    pub fn config(&self) -> &MsfbcnnConfig {
        &self.arch.config
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Log-probabilities for `x` `[B, C, T, 1]`. Train mode draws dropout
    /// masks from `rng` and updates batch-norm running statistics.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let mut s = match mode {
            Mode::Eval => Session::inference(&self.store),
            Mode::Train => Session::new(&mut self.store, rng, mode, Default::default()),
        };
        let xv = s.input(x.clone());
        let out = self.arch.forward(&mut s, xv)?;
        Ok(s.value(out).clone())
    }

    /// Eval-mode log-probabilities.
    pub fn predict_logprobs(&self, x: &Tensor) -> Result<Tensor> {
        let mut s = Session::inference(&self.store);
        let xv = s.input(x.clone());
        let out = self.arch.forward(&mut s, xv)?;
        Ok(s.value(out).clone())
    }
}

pub fn msfbcnn_forward(model: &mut MsfbcnnModel, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
    model.forward(x, mode, rng)
}
