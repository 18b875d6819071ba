use std::fs;

use bwnet_core::exit::sweep_from_eval;
use bwnet_core::{BranchEval, Stage, StageReport, SweepPoint};
use bwnet_harness::emit_report;
use bwnet_harness::report::{format_sig, round_sig, SWEEP_HEADER};
use proptest::prelude::*;

fn points() -> Vec<SweepPoint> {
    let eval = BranchEval {
        entropies: vec![0.05, 0.3, 0.45, 0.7, 0.95, 0.2],
        classfuse: vec![0, 1, 0, 1, 2, 3],
        compressfuse: vec![0, 1, 2, 3, 2, 1],
        fullfuse: vec![0, 1, 2, 3, 0, 1],
        labels: vec![0, 1, 2, 3, 2, 1],
    };
    sweep_from_eval(&eval, 150, 4, 6, 0.01).unwrap()
}

fn stages() -> Vec<StageReport> {
    vec![StageReport {
        stage: Stage::Local,
        epochs_run: 3,
        best_epoch: 2,
        best_val_loss: 0.123456789123,
        val_losses: vec![0.5, 0.123456789123, 0.2],
        train_accuracy: Some(0.75),
        val_accuracy: Some(2.0 / 3.0),
        test_accuracy: None,
        groups: Vec::new(),
        frozen_params: 0,
        wall_time_s: 0.25,
    }]
}

fn parse(line: &str) -> Vec<f64> {
    line.split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn sweep_file_has_one_row_per_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&points(), &stages(), dir.path()).unwrap();
    let sweep = fs::read_to_string(&files.sweep).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines.len(), 102);
    assert_eq!(lines[0], SWEEP_HEADER);
    for (i, line) in lines[1..].iter().enumerate() {
        let row = parse(line);
        assert_eq!(row.len(), 4);
        assert!((row[0] - i as f64 / 100.0).abs() < 1e-12);
        assert!(line.split(',').all(|v| v == "0" || v.trim_start_matches(['0', '.']).len() >= 9));
    }
}

#[test]
fn pareto_rows_are_sweep_rows_and_non_dominated() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&points(), &stages(), dir.path()).unwrap();
    let sweep = fs::read_to_string(&files.sweep).unwrap();
    let pareto = fs::read_to_string(&files.pareto).unwrap();
    let sweep_rows: Vec<&str> = sweep.lines().skip(1).collect();
    let front: Vec<Vec<f64>> = pareto.lines().skip(1).map(parse).collect();
    assert!(!front.is_empty());
    for line in pareto.lines().skip(1) {
        assert!(sweep_rows.contains(&line));
    }
    for p in &front {
        for q in sweep_rows.iter().map(|l| parse(l)) {
            let dominates = q[2] <= p[2] && q[3] >= p[3] && (q[2] < p[2] || q[3] > p[3]);
            assert!(!dominates, "{q:?} dominates {p:?}");
        }
    }
}

#[test]
fn re_emission_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = emit_report(&points(), &stages(), a.path()).unwrap();
    let fb = emit_report(&points(), &stages(), b.path()).unwrap();
    for (x, y) in [(&fa.sweep, &fb.sweep), (&fa.pareto, &fb.pareto), (&fa.stages, &fb.stages)] {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let json = fs::read_to_string(&fa.stages).unwrap();
    assert!(json.contains("0.123456789,"), "{json}");
    assert!(json.contains("0.666666667"));
    let back: Vec<StageReport> = serde_json::from_str(&json).unwrap();
    assert_eq!(back[0].stage, Stage::Local);
}

#[test]
fn empty_inputs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&[], &stages(), dir.path()).is_err());
    assert!(emit_report(&points(), &[], dir.path()).is_err());
    assert_eq!(format_sig(0.5), "0.500000000");
}

proptest! {
    #[test]
    fn nine_digits_round_trip(mantissa in 1.0f64..10.0, exp in -12i32..12, negative: bool) {
        let x = if negative { -mantissa } else { mantissa } * 10f64.powi(exp);
        let text = format_sig(x);
        let back: f64 = text.parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-9, "{x} -> {text}");
        let digits = text.split('e').next().unwrap().chars().filter(char::is_ascii_digit).collect::<String>();
        prop_assert_eq!(digits.trim_start_matches('0').len(), 9, "{}", text);
        prop_assert_eq!(round_sig(back), back);
        prop_assert_eq!(format_sig(back), text);
    }
}
