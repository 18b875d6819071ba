use bwnet_core::{build_distributed, evaluate_branches, DistributedModel, EpochedDataset, MsfbcnnConfig};
use bwnet_harness::{load_weights, load_weights_into, save_weights, HarnessError};
use bwnet_tensor::{RngState, Tensor};

fn model(channels: usize, seed: u64) -> DistributedModel {
    let cfg = MsfbcnnConfig {
        channels,
        window_len: 120,
        temporal_filters: 2,
        spatial_filters: 2,
        num_classes: 3,
        dropout_rate: 0.5,
    };
    build_distributed(cfg, 4, &mut RngState::new(seed)).unwrap()
}

fn probe(channels: usize) -> EpochedDataset {
    let mut rng = RngState::new(3);
    let x = Tensor::from_fn(&[12, channels, 120, 1], |_| rng.normal() as f32).unwrap();
    EpochedDataset::new(x, (0..12).map(|i| i % 3).collect(), vec![0; 12], 100.0).unwrap()
}

#[test]
fn reloaded_model_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bnw");
    let original = model(3, 1);
    save_weights(&original, &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    assert_eq!(loaded.store, original.store);
    let data = probe(3);
    let a = evaluate_branches(&original, &data).unwrap();
    let b = evaluate_branches(&loaded, &data).unwrap();
    assert_eq!(a.entropies, b.entropies);
    assert_eq!(a.fullfuse, b.fullfuse);

    // loading into a differently initialized model of the same shape
    let mut other = model(3, 2);
    assert_ne!(other.store, original.store);
    load_weights_into(&mut other, &path).unwrap();
    assert_eq!(other.store, original.store);
}

#[test]
fn node_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bnw");
    save_weights(&model(3, 1), &path).unwrap();
    let mut wider = model(4, 1);
    let before = wider.store.clone();
    let err = load_weights_into(&mut wider, &path).unwrap_err();
    assert!(matches!(err, HarnessError::WeightMismatch(_)), "{err}");
    assert_eq!(wider.store, before);
}

#[test]
fn damaged_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bnw");
    save_weights(&model(3, 1), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(load_weights(&path), Err(HarnessError::Format { offset: 0, .. })));

    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_weights(&path), Err(HarnessError::Format { .. })));

    let err = load_weights(&dir.path().join("absent.bnw")).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
    assert_eq!(err.exit_code(), 4);
}
