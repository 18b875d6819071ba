//! Distributed two-branch classification for bandwidth-limited sensor
//! networks: the filter-bank classifier, the ClassFuse / CompressFuse /
//! FullFuse network built from it, its staged training, entropy-gated early
//! exit, and sensor-side signal emulation.

pub mod dataset;
pub mod distributed;
pub mod error;
pub mod exit;
pub mod msfbcnn;
pub mod sensor;
pub mod training;

pub use dataset::EpochedDataset;
pub use distributed::{
    build_distributed, decompose_factor, BranchOutput, BranchVars, CompressorConfig, DistributedArch,
    DistributedConfig, DistributedModel, Payload, WireAudit,
};
pub use error::{CoreError, Result};
pub use msfbcnn::{build_msfbcnn, count_params, msfbcnn_forward, MsfbcnnArch, MsfbcnnConfig, MsfbcnnModel};
pub use training::{
    fine_tune_subject, pretrain_autoencoder, run_pipeline, train_from_scratch, train_loop, DataSplit, EarlyStopping,
    Objective, Pipeline, Stage, StageReport, TrainConfig,
};
pub use exit::{
    evaluate_branches, infer_with_exit, normalized_entropy, pareto_front, relative_bandwidth, sweep_thresholds,
    BranchEval, ExitOutcome, ExitPolicy, InferenceTrace, SweepPoint,
};
