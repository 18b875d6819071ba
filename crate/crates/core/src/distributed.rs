//! The two-branch distributed network.
//!
//! ```text
//!  node i:   x_i ──► local classifier ──► log-probs (|C|)        ─┐  ClassFuse
//!            x_i ──► compressor ──► z_i (L')                     ─┼─ wire
//!  fusion:   [log-probs of all nodes] ──► MLP ──► ClassFuse       │
//!            z_i ──► reconstructor ──► x̂_i ; [x̂_1..x̂_M] ──► central classifier ──► CompressFuse
//!            [ClassFuse, CompressFuse] ──► MLP ──► FullFuse
//! ```
//!
//! Everything a node sends is routed through [`WireAudit::cross`], so a
//! forward pass leaves a record of exactly which tensors left each node.

use bwnet_tensor::{
    init_params, GradPolicy, Mode, Padding, ParamStore, RngState, Session, Tensor, Var,
};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, LayerContext, Result};
use crate::msfbcnn::{MsfbcnnArch, MsfbcnnConfig};

pub const FUSION_HIDDEN: usize = 50;

/// Splits a compression factor into two strides: equal strides for perfect
/// squares, otherwise the closest factor pair (so primes give `(1, D)`).
pub fn decompose_factor(d: usize) -> Result<(usize, usize)> {
    if d == 0 {
        return Err(CoreError::InvalidConfig("compression factor must be at least 1".into()));
    }
    let mut a = (d as f64).sqrt() as usize;
    // guard against float rounding either way
    while a * a > d {
        a -= 1;
    }
    while (a + 1) * (a + 1) <= d {
        a += 1;
    }
    while !d.is_multiple_of(a) {
        a -= 1;
    }
    Ok((a, d / a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorConfig {
    pub factor: usize,
    pub strides: (usize, usize),
    pub kernels: (usize, usize),
}

impl CompressorConfig {
    /// Strides from [`decompose_factor`], kernel length `2·stride + 1`.
    pub fn new(factor: usize) -> Result<Self> {
        let (s1, s2) = decompose_factor(factor)?;
        Ok(CompressorConfig {
            factor,
            strides: (s1, s2),
            kernels: (2 * s1 + 1, 2 * s2 + 1),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (s1, s2) = self.strides;
        let (k1, k2) = self.kernels;
        if s1 == 0 || s2 == 0 || s1 * s2 != self.factor {
            return Err(CoreError::InvalidConfig(format!(
                "strides {:?} do not multiply to compression factor {}",
                self.strides, self.factor
            )));
        }
        if k1 < s1 || k2 < s2 {
            return Err(CoreError::InvalidConfig(format!(
                "kernels {:?} shorter than strides {:?}",
                self.kernels, self.strides
            )));
        }
        Ok(())
    }

    /// Length after the first strided layer.
    pub fn intermediate_len(&self, len: usize) -> usize {
        len.div_ceil(self.strides.0)
    }

    /// Per-node samples on the wire for a window of `len` samples.
    pub fn compressed_len(&self, len: usize) -> usize {
        self.intermediate_len(len).div_ceil(self.strides.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributedConfig {
    /// The centralized classifier; its channel count is the node count M.
    pub central: MsfbcnnConfig,
    pub compressor: CompressorConfig,
    pub fusion_hidden: usize,
}

impl DistributedConfig {
    pub fn new(central: MsfbcnnConfig, factor: usize) -> Result<Self> {
        let cfg = DistributedConfig {
            central,
            compressor: CompressorConfig::new(factor)?,
            fusion_hidden: FUSION_HIDDEN,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.central.validate()?;
        self.compressor.validate()?;
        if self.fusion_hidden == 0 {
            return Err(CoreError::InvalidConfig("fusion_hidden must be at least 1".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.central.channels
    }

    pub fn num_classes(&self) -> usize {
        self.central.num_classes
    }

    pub fn window_len(&self) -> usize {
        self.central.window_len
    }

    pub fn compressed_len(&self) -> usize {
        self.compressor.compressed_len(self.central.window_len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    ClassVector,
    CompressedFrame,
}

/// One tensor sent from a node to the fusion center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Crossing {
    pub node: usize,
    pub payload: Payload,
    pub samples: usize,
    pub scalars_per_sample: usize,
}

/// Record of everything that crossed the node → fusion-center boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WireAudit {
    pub crossings: Vec<Crossing>,
}

impl WireAudit {
    /// Passes `v` (batch-major, one row per sample) across the boundary.
    pub fn cross(&mut self, s: &Session, node: usize, payload: Payload, v: Var) -> Var {
        let shape = s.value(v).shape();
        self.crossings.push(Crossing {
            node,
            payload,
            samples: shape[0],
            scalars_per_sample: shape[1..].iter().product(),
        });
        v
    }

    pub fn total_scalars(&self, payload: Payload) -> usize {
        self.crossings
            .iter()
            .filter(|c| c.payload == payload)
            .map(|c| c.samples * c.scalars_per_sample)
            .sum()
    }
}

/// Parameter-name prefixes of the network's modules.
pub mod names {
    pub fn local(i: usize) -> String {
        format!("local.{i}.")
    }
    pub fn compressor(i: usize) -> String {
        format!("compress.{i}.")
    }
    pub fn reconstructor(i: usize) -> String {
        format!("reconstruct.{i}.")
    }
    pub const CENTRAL: &str = "central.";
    pub const CLASSFUSE: &str = "classfuse.";
    pub const FULLFUSE: &str = "fullfuse.";
}

/// Symbolic outputs of a full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    pub classfuse: Var,
    pub compressfuse: Var,
    pub fullfuse: Var,
    pub reconstruction: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput {
    pub classfuse_logprobs: Tensor,
    pub compressfuse_logprobs: Tensor,
    pub fullfuse_logprobs: Tensor,
    pub reconstruction: Tensor,
}

/// Structure of the network: which classifier lives under which prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributedArch {
    pub config: DistributedConfig,
    pub locals: Vec<MsfbcnnArch>,
    pub central: MsfbcnnArch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributedModel {
    pub arch: DistributedArch,
    pub store: ParamStore,
}

pub fn build_distributed(central: MsfbcnnConfig, factor: usize, rng: &mut RngState) -> Result<DistributedModel> {
    DistributedModel::new(DistributedConfig::new(central, factor)?, rng)
}

fn init_mlp(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, output: usize, rng: &mut RngState) -> Result<()> {
    store.insert(format!("{prefix}fc1.weight"), init_params(&[input, hidden], input, rng)?);
    store.insert(format!("{prefix}fc1.bias"), init_params(&[hidden], input, rng)?);
    store.insert(format!("{prefix}fc2.weight"), init_params(&[hidden, output], hidden, rng)?);
    store.insert(format!("{prefix}fc2.bias"), init_params(&[output], hidden, rng)?);
    Ok(())
}

fn mlp(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let layer = |n: &str| format!("{prefix}{n}");
    let h = s
        .dense(x, &layer("fc1.weight"), Some(&layer("fc1.bias")))
        .layer(&layer("fc1"))?;
    let h = s.tape.relu(h).layer(&layer("relu"))?;
    let h = s
        .dense(h, &layer("fc2.weight"), Some(&layer("fc2.bias")))
        .layer(&layer("fc2"))?;
    s.tape.log_softmax(h).layer(&layer("log_softmax"))
}

impl DistributedModel {
    pub fn new(config: DistributedConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let m = config.nodes();
        let nc = config.num_classes();
        let local_cfg = config.central.with_channels(1);
        let mut store = ParamStore::new();
        let mut locals = Vec::with_capacity(m);
        for i in 0..m {
            let arch = MsfbcnnArch::new(local_cfg, names::local(i))?;
            arch.init(&mut store, rng)?;
            locals.push(arch);
        }
        let central = MsfbcnnArch::new(config.central, names::CENTRAL)?;
        central.init(&mut store, rng)?;

        let (k1, k2) = config.compressor.kernels;
        for i in 0..m {
            let c = names::compressor(i);
            store.insert(format!("{c}conv1.weight"), init_params(&[1, 1, k1, 1], k1, rng)?);
            store.insert(format!("{c}conv2.weight"), init_params(&[1, 1, k2, 1], k2, rng)?);
            // the transposed layers mirror the compressor: deconv1 undoes conv2
            let r = names::reconstructor(i);
            store.insert(format!("{r}deconv1.weight"), init_params(&[1, 1, k2, 1], k2, rng)?);
            store.insert(format!("{r}deconv2.weight"), init_params(&[1, 1, k1, 1], k1, rng)?);
        }
        init_mlp(&mut store, names::CLASSFUSE, m * nc, config.fusion_hidden, nc, rng)?;
        init_mlp(&mut store, names::FULLFUSE, 2 * nc, config.fusion_hidden, nc, rng)?;
        Ok(DistributedModel {
            arch: DistributedArch { config, locals, central },
            store,
        })
    }

    pub fn config(&self) -> &DistributedConfig {
        &self.arch.config
    }

    pub fn nodes(&self) -> usize {
        self.arch.config.nodes()
    }

    fn session<'a>(&'a mut self, mode: Mode, rng: &'a mut RngState) -> (&'a DistributedArch, Session<'a>) {
        let DistributedModel { arch, store } = self;
        let s = match mode {
            Mode::Eval => Session::inference(store),
            Mode::Train => Session::new(store, rng, mode, GradPolicy::None),
        };
        (arch, s)
    }

    pub fn classfuse_forward(&mut self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let (arch, mut s) = self.session(mode, rng);
        let xv = s.input(x.clone());
        let out = arch.classfuse(&mut s, xv, &mut WireAudit::default())?;
        Ok(s.value(out).clone())
    }

    pub fn compress_node(&self, i: usize, x_i: &Tensor) -> Result<Tensor> {
        if i >= self.nodes() {
            return Err(CoreError::InvalidArgument(format!("node {i} out of range for {} nodes", self.nodes())));
        }
        let mut s = Session::inference(&self.store);
        let xv = s.input(x_i.clone());
        let z = self.arch.compress(&mut s, xv, i)?;
        Ok(s.value(z).clone())
    }

    pub fn compressfuse_forward(&mut self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<(Tensor, Tensor)> {
        let (arch, mut s) = self.session(mode, rng);
        let xv = s.input(x.clone());
        let (lp, recon) = arch.compressfuse(&mut s, xv, &mut WireAudit::default())?;
        Ok((s.value(lp).clone(), s.value(recon).clone()))
    }

    pub fn fullfuse_forward(&mut self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<BranchOutput> {
        self.fullfuse_audited(x, mode, rng).map(|(out, _)| out)
    }

    /// [`fullfuse_forward`](Self::fullfuse_forward) plus the wire record.
    pub fn fullfuse_audited(&mut self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<(BranchOutput, WireAudit)> {
        let (arch, mut s) = self.session(mode, rng);
        let xv = s.input(x.clone());
        let mut audit = WireAudit::default();
        let v = arch.fullfuse(&mut s, xv, &mut audit)?;
        let out = BranchOutput {
            classfuse_logprobs: s.value(v.classfuse).clone(),
            compressfuse_logprobs: s.value(v.compressfuse).clone(),
            fullfuse_logprobs: s.value(v.fullfuse).clone(),
            reconstruction: s.value(v.reconstruction).clone(),
        };
        Ok((out, audit))
    }

    /// Parameter names of each module group, in a fixed order.
    pub fn local_params(&self) -> Vec<String> {
        self.arch.locals.iter().flat_map(|a| a.param_names()).collect()
    }

    pub fn central_params(&self) -> Vec<String> {
        self.arch.central.param_names()
    }

    pub fn prefixed_params(&self, prefix: &str) -> Vec<String> {
        self.store.names_with_prefix(prefix).map(String::from).collect()
    }

    pub fn compression_params(&self) -> Vec<String> {
        let mut v = self.prefixed_params("compress.");
        v.extend(self.prefixed_params("reconstruct."));
        v
    }
}

impl DistributedArch {
    pub fn nodes(&self) -> usize {
        self.config.nodes()
    }

    fn check_input(&self, s: &Session, x: Var) -> Result<usize> {
        let shape = s.value(x).shape();
        let (m, l) = (self.nodes(), self.config.window_len());
        if shape.len() != 4 || shape[1] != m || shape[2] != l || shape[3] != 1 {
            return Err(CoreError::Layer {
                layer: "input".into(),
                source: bwnet_tensor::TensorError::ShapeMismatch {
                    op: "distributed",
                    detail: format!("expected [B, {m}, {l}, 1], got {shape:?}"),
                },
            });
        }
        Ok(shape[0])
    }

    fn node_signal(&self, s: &mut Session, x: Var, i: usize) -> Result<Var> {
        s.tape.slice(x, 1, i, 1).layer("input")
    }

    /// Per-node local classifier on `x_i` `[B, 1, L, 1]`.
    pub fn local_logprobs(&self, s: &mut Session, x_i: Var, i: usize) -> Result<Var> {
        self.locals[i].forward(s, x_i)
    }

    pub fn classfuse(&self, s: &mut Session, x: Var, audit: &mut WireAudit) -> Result<Var> {
        self.check_input(s, x)?;
        let mut sent = Vec::with_capacity(self.nodes());
        for i in 0..self.nodes() {
            let xi = self.node_signal(s, x, i)?;
            let lp = self.local_logprobs(s, xi, i)?;
            sent.push(audit.cross(s, i, Payload::ClassVector, lp));
        }
        self.fuse_class_vectors(s, &sent)
    }

    /// Fusion-center half of ClassFuse: the MLP over the received class
    /// vectors, one `[B, |C|]` per node in node order.
    pub fn fuse_class_vectors(&self, s: &mut Session, vectors: &[Var]) -> Result<Var> {
        // node index ascending, then class index
        let fused = s.tape.concat(vectors, 1).layer("classfuse")?;
        mlp(s, names::CLASSFUSE, fused)
    }

    /// Node-side compression of `x_i` `[B, 1, L, 1]` to `[B, 1, L', 1]`.
    pub fn compress(&self, s: &mut Session, x_i: Var, i: usize) -> Result<Var> {
        let c = names::compressor(i);
        let (s1, s2) = self.config.compressor.strides;
        let h = s
            .conv2d(x_i, &format!("{c}conv1.weight"), (s1, 1), Padding::Same)
            .layer(&format!("{c}conv1"))?;
        s.conv2d(h, &format!("{c}conv2.weight"), (s2, 1), Padding::Same)
            .layer(&format!("{c}conv2"))
    }

    /// Fusion-center reconstruction of one node's frame back to length L.
    pub fn reconstruct(&self, s: &mut Session, z_i: Var, i: usize) -> Result<Var> {
        let r = names::reconstructor(i);
        let (s1, s2) = self.config.compressor.strides;
        let l = self.config.window_len();
        let l1 = self.config.compressor.intermediate_len(l);
        let h = s
            .conv2d_transposed(z_i, &format!("{r}deconv1.weight"), (s2, 1), Padding::Same, (l1, 1))
            .layer(&format!("{r}deconv1"))?;
        s.conv2d_transposed(h, &format!("{r}deconv2.weight"), (s1, 1), Padding::Same, (l, 1))
            .layer(&format!("{r}deconv2"))
    }

    /// Compress every node, send, reconstruct; `[B, M, L, 1]`.
    pub fn reconstruction(&self, s: &mut Session, x: Var, audit: &mut WireAudit) -> Result<Var> {
        self.check_input(s, x)?;
        let mut sent = Vec::with_capacity(self.nodes());
        for i in 0..self.nodes() {
            let xi = self.node_signal(s, x, i)?;
            let z = self.compress(s, xi, i)?;
            sent.push(audit.cross(s, i, Payload::CompressedFrame, z));
        }
        self.reconstruct_frames(s, &sent)
    }

    /// Reconstructs received frames (one per node, in node order) into
    /// `[B, M, L, 1]`.
    pub fn reconstruct_frames(&self, s: &mut Session, frames: &[Var]) -> Result<Var> {
        if frames.len() != self.nodes() {
            return Err(CoreError::InvalidArgument(format!(
                "{} frames for {} nodes",
                frames.len(),
                self.nodes()
            )));
        }
        let mut channels = Vec::with_capacity(frames.len());
        for (i, &z) in frames.iter().enumerate() {
            channels.push(self.reconstruct(s, z, i)?);
        }
        s.tape.concat(&channels, 1).layer("reconstruction")
    }

    /// CompressFuse log-probabilities and the reconstruction they came from.
    pub fn compressfuse(&self, s: &mut Session, x: Var, audit: &mut WireAudit) -> Result<(Var, Var)> {
        let recon = self.reconstruction(s, x, audit)?;
        let lp = self.central.forward(s, recon)?;
        Ok((lp, recon))
    }

    /// Fusion-center half of CompressFuse over received frames.
    pub fn classify_frames(&self, s: &mut Session, frames: &[Var]) -> Result<Var> {
        let recon = self.reconstruct_frames(s, frames)?;
        self.central.forward(s, recon)
    }

    /// FullFuse MLP over the two branch outputs.
    pub fn fuse_branches(&self, s: &mut Session, classfuse: Var, compressfuse: Var) -> Result<Var> {
        let both = s.tape.concat(&[classfuse, compressfuse], 1).layer("fullfuse")?;
        mlp(s, names::FULLFUSE, both)
    }

    pub fn fullfuse(&self, s: &mut Session, x: Var, audit: &mut WireAudit) -> Result<BranchVars> {
        let classfuse = self.classfuse(s, x, audit)?;
        let (compressfuse, reconstruction) = self.compressfuse(s, x, audit)?;
        let fullfuse = self.fuse_branches(s, classfuse, compressfuse)?;
        Ok(BranchVars {
            classfuse,
            compressfuse,
            fullfuse,
            reconstruction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: usize, l: usize) -> MsfbcnnConfig {
        MsfbcnnConfig {
            channels: m,
            window_len: l,
            temporal_filters: 2,
            spatial_filters: 2,
            num_classes: 4,
            dropout_rate: 0.5,
        }
    }

    #[test]
    fn factor_decomposition() {
        assert_eq!(decompose_factor(9).unwrap(), (3, 3));
        assert_eq!(decompose_factor(6).unwrap(), (2, 3));
        assert_eq!(decompose_factor(1).unwrap(), (1, 1));
        assert_eq!(decompose_factor(16).unwrap(), (4, 4));
        assert_eq!(decompose_factor(13).unwrap(), (1, 13));
        assert_eq!(decompose_factor(12).unwrap(), (3, 4));
        assert!(decompose_factor(0).is_err());
    }

    #[test]
    fn compressed_lengths() {
        let l = 1125;
        assert_eq!(CompressorConfig::new(9).unwrap().compressed_len(l), 125);
        assert_eq!(CompressorConfig::new(16).unwrap().compressed_len(l), 71);
        assert_eq!(CompressorConfig::new(6).unwrap().compressed_len(l), 188);
        assert_eq!(CompressorConfig::new(1).unwrap().compressed_len(l), 1125);
    }

    #[test]
    fn config_rejects_inconsistent_strides() {
        let bad = CompressorConfig {
            factor: 6,
            strides: (2, 2),
            kernels: (5, 5),
        };
        assert!(bad.validate().is_err());
        let short = CompressorConfig {
            factor: 6,
            strides: (2, 3),
            kernels: (1, 3),
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn compress_node_length_matches_formula() {
        let mut rng = RngState::new(0);
        let model = build_distributed(cfg(2, 150), 6, &mut rng).unwrap();
        let z = model
            .compress_node(1, &Tensor::ones(&[3, 1, 150, 1]).unwrap())
            .unwrap();
        assert_eq!(z.shape(), &[3, 1, 25, 1]);
        assert!(model.compress_node(2, &Tensor::ones(&[1, 1, 150, 1]).unwrap()).is_err());
    }

    #[test]
    fn wrong_node_count_is_rejected() {
        let mut rng = RngState::new(0);
        let mut model = build_distributed(cfg(3, 30), 2, &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 2, 30, 1]).unwrap();
        assert!(model.classfuse_forward(&x, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn module_param_groups_partition_the_store() {
        let mut rng = RngState::new(0);
        let model = build_distributed(cfg(3, 30), 4, &mut rng).unwrap();
        let mut all: Vec<String> = model.local_params();
        all.extend(model.central_params());
        all.extend(model.compression_params());
        all.extend(model.prefixed_params(names::CLASSFUSE));
        all.extend(model.prefixed_params(names::FULLFUSE));
        all.sort();
        let store: Vec<String> = model.store.names().map(String::from).collect();
        assert_eq!(all, store);
    }
}
