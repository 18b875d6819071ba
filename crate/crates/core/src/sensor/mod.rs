//! Sensor-side data: electrode layouts and node emulation, preprocessing,
//! synthetic recordings, learned node selection and dataset files.

pub mod io;
pub mod layout;
pub mod preprocess;
pub mod select;
pub mod synth;

use bwnet_tensor::Tensor;

use crate::dataset::EpochedDataset;
use crate::error::Result;

pub use io::{load_csv_trials, load_dataset, save_dataset};
pub use layout::{emulate_node_signals, enumerate_candidate_nodes, CandidateNode, ElectrodeLayout};
pub use preprocess::{preprocess, PreprocessConfig};
pub use select::{gumbel_select_nodes, Estimator, SelectionConfig, SelectionOutcome};
pub use synth::{generate_synthetic, planted_candidates, PlantedConfig, SyntheticCap, SyntheticConfig};

/// Node windows `[N, K, L, 1]` for `nodes`, optionally standardized per
/// window and channel.
pub fn node_dataset(cap: &SyntheticCap, nodes: &[CandidateNode], standardize: bool) -> Result<EpochedDataset> {
    emulate_dataset(&cap.to_dataset()?, nodes, standardize)
}

/// [`node_dataset`] for any electrode-level dataset `[N, C, L, 1]`.
pub fn emulate_dataset(cap: &EpochedDataset, nodes: &[CandidateNode], standardize: bool) -> Result<EpochedDataset> {
    let (n, c, l) = (cap.len(), cap.channels(), cap.window_len());
    let signals = emulate_node_signals(&cap.x.clone().into_reshaped(&[n, c, l])?, nodes)?;
    let mut x: Tensor = signals.into_reshaped(&[n, nodes.len(), l, 1])?;
    if standardize {
        preprocess::standardize_windows(&mut x);
    }
    EpochedDataset::new(x, cap.labels.clone(), cap.subjects.clone(), cap.sample_rate)
}
