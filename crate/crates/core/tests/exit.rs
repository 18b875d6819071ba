use bwnet_core::exit::{sweep_calibrated, sweep_from_eval, threshold_grid};
use bwnet_core::{
    build_distributed, evaluate_branches, infer_with_exit, normalized_entropy, pareto_front, relative_bandwidth,
    BranchEval, EpochedDataset, ExitPolicy, MsfbcnnConfig, Payload, SweepPoint,
};
use bwnet_tensor::{RngState, Tensor};
use proptest::prelude::*;

fn eval_from(entropies: Vec<f64>, classfuse: Vec<usize>, fullfuse: Vec<usize>, labels: Vec<usize>) -> BranchEval {
    BranchEval {
        entropies,
        compressfuse: fullfuse.clone(),
        classfuse,
        fullfuse,
        labels,
    }
}

#[test]
fn entropy_reference_cases() {
    assert!((normalized_entropy(&[0.25; 4]).unwrap() - 1.0).abs() < 1e-9);
    assert!(normalized_entropy(&[0.0, 1.0, 0.0, 0.0]).unwrap().abs() < 1e-9);
    assert!((normalized_entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn bandwidth_reference_cases() {
    assert!((relative_bandwidth(1125, 4, 9, 0.0).unwrap() - 129.0 / 1125.0).abs() < 1e-12);
    assert!((relative_bandwidth(1125, 4, 9, 1.0).unwrap() - 4.0 / 1125.0).abs() < 1e-12);
    let d16 = relative_bandwidth(1125, 4, 16, 0.0).unwrap();
    assert!((d16 - 0.0661).abs() < 5e-5, "{d16}");
    assert!(relative_bandwidth(1125, 4, 9, 1.5).is_err());
}

#[test]
fn two_sample_exit_decisions() {
    // sample 0 is confident and right on ClassFuse; sample 1 needs FullFuse
    let eval = eval_from(vec![0.2, 0.8], vec![1, 0], vec![2, 3], vec![1, 3]);
    let points = sweep_from_eval(&eval, 150, 4, 6, 0.1).unwrap();
    let at = |t: f64| points.iter().find(|p| (p.threshold - t).abs() < 1e-12).unwrap();
    assert_eq!((at(0.1).lambda, at(0.1).accuracy), (0.0, 0.5));
    assert_eq!((at(0.2).lambda, at(0.2).accuracy), (0.5, 1.0));
    assert_eq!((at(0.7).lambda, at(0.7).accuracy), (0.5, 1.0));
    assert_eq!((at(0.8).lambda, at(0.8).accuracy), (1.0, 0.5));
    assert!((at(0.2).bandwidth - (4.0 + 0.5 * 25.0) / 150.0).abs() < 1e-12);
}

#[test]
fn calibration_moves_only_bandwidth() {
    let eval = eval_from(vec![0.1, 0.9], vec![0, 0], vec![1, 1], vec![0, 1]);
    let calib = eval_from(vec![0.9, 0.9, 0.9], vec![0; 3], vec![0; 3], vec![0; 3]);
    let own = sweep_from_eval(&eval, 150, 4, 6, 0.5).unwrap();
    let cal = sweep_calibrated(&eval, &calib, 150, 4, 6, 0.5).unwrap();
    for (a, b) in own.iter().zip(&cal) {
        assert_eq!(a.accuracy, b.accuracy);
    }
    assert_eq!(own[1].lambda, 0.5);
    assert_eq!(cal[1].lambda, 0.0);
}

fn model_and_data() -> (bwnet_core::DistributedModel, EpochedDataset) {
    let cfg = MsfbcnnConfig {
        channels: 3,
        window_len: 150,
        temporal_filters: 2,
        spatial_filters: 2,
        num_classes: 4,
        dropout_rate: 0.5,
    };
    let model = build_distributed(cfg, 6, &mut RngState::new(4)).unwrap();
    let mut rng = RngState::new(8);
    let n = 40;
    let x = Tensor::from_fn(&[n, 3, 150, 1], |_| (3.0 * rng.normal()) as f32).unwrap();
    let labels = (0..n).map(|i| i % 4).collect();
    (model, EpochedDataset::new(x, labels, vec![0; n], 250.0).unwrap())
}

#[test]
fn runtime_exit_matches_batch_evaluation() {
    let (model, data) = model_and_data();
    let eval = evaluate_branches(&model, &data).unwrap();
    let mut sorted = eval.entropies.clone();
    sorted.sort_by(f64::total_cmp);
    // a threshold between two observed entropies splits the batch
    let threshold = 0.5 * (sorted[15] + sorted[16]);
    let policy = ExitPolicy::new(threshold).unwrap();
    let out = infer_with_exit(&model, &data.x, Some(&data.labels), policy).unwrap();
    assert_eq!(out.predictions, eval.exit_predictions(policy));
    assert_eq!(out.trace.lambda(), eval.lambda(policy));
    assert_eq!(out.trace.lambda(), 16.0 / 40.0);
    assert_eq!(out.central_invocations, 24);
    for (e, h) in out.trace.entries.iter().zip(&eval.entropies) {
        assert!((e.entropy - h).abs() < 1e-6);
    }
    // ClassVectors from every node for every sample, frames only for escalations
    assert_eq!(out.audit.total_scalars(Payload::ClassVector), 3 * 40 * 4);
    assert_eq!(out.audit.total_scalars(Payload::CompressedFrame), 3 * 24 * 25);

    let all = infer_with_exit(&model, &data.x, None, ExitPolicy::new(1.0).unwrap()).unwrap();
    assert_eq!(all.central_invocations, 0);
    assert_eq!(all.predictions, eval.classfuse);
}

#[test]
fn sweep_endpoints_on_a_model() {
    let (model, data) = model_and_data();
    let points = bwnet_core::sweep_thresholds(&model, &data, 0.01).unwrap();
    assert_eq!(points.len(), 101);
    let eval = evaluate_branches(&model, &data).unwrap();
    let last = points.last().unwrap();
    assert_eq!(last.lambda, 1.0);
    assert_eq!(last.accuracy, eval.classfuse_accuracy());
    let zero_entropy = eval.entropies.iter().filter(|&&h| h == 0.0).count();
    assert_eq!(points[0].lambda, zero_entropy as f64 / 40.0);
    if zero_entropy == 0 {
        assert_eq!(points[0].accuracy, eval.fullfuse_accuracy());
    }
}

/// Independent front: scan by ascending bandwidth (ties by descending
/// accuracy) keeping points that beat the best accuracy so far.
fn scan_front(points: &[SweepPoint]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.bandwidth, p.accuracy)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for &(b, a) in &sorted {
        let equal_to_kept = out.last().is_some_and(|&(lb, la)| lb == b && la == a);
        if a > best || equal_to_kept {
            out.push((b, a));
            best = best.max(a);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sweep_is_monotone(
        entropies in prop::collection::vec(0.0f64..=1.0, 1..40),
        seed in any::<u64>(),
        d in 1usize..20,
    ) {
        let n = entropies.len();
        let mut rng = RngState::new(seed);
        let mut draw = || (rng.uniform_f64() * 4.0) as usize;
        let classfuse: Vec<usize> = (0..n).map(|_| draw()).collect();
        let fullfuse: Vec<usize> = (0..n).map(|_| draw()).collect();
        let labels: Vec<usize> = (0..n).map(|_| draw()).collect();
        let eval = eval_from(entropies, classfuse, fullfuse, labels);
        let points = sweep_from_eval(&eval, 150, 4, d, 0.05).unwrap();
        prop_assert_eq!(points.len(), threshold_grid(0.05).unwrap().len());
        for w in points.windows(2) {
            prop_assert!(w[1].lambda >= w[0].lambda);
            prop_assert!(w[1].bandwidth <= w[0].bandwidth);
        }
        prop_assert_eq!(points.last().unwrap().lambda, 1.0);
    }

    #[test]
    fn pareto_matches_scan(raw in prop::collection::vec((0u8..8, 0u8..8), 1..30)) {
        // coarse values force ties
        let points: Vec<SweepPoint> = raw
            .iter()
            .map(|&(b, a)| SweepPoint { threshold: 0.0, lambda: 0.0, bandwidth: b as f64 / 8.0, accuracy: a as f64 / 8.0 })
            .collect();
        let front: Vec<(f64, f64)> = pareto_front(&points).iter().map(|p| (p.bandwidth, p.accuracy)).collect();
        prop_assert_eq!(front, scan_front(&points));
    }
}
