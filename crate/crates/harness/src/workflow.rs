//! The run steps shared by the CLI and the acceptance suite: data
//! preparation, node selection, per-seed training, sweeps and the
//! centralized / from-scratch comparison.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use bwnet_core::exit::{sweep_calibrated, sweep_from_eval};
use bwnet_core::sensor::{
    emulate_dataset, enumerate_candidate_nodes, generate_synthetic, gumbel_select_nodes, load_csv_trials,
    load_dataset, CandidateNode, ElectrodeLayout, SelectionOutcome,
};
use bwnet_core::training::{run_pipeline_with, train_central};
use bwnet_core::{
    build_distributed, build_msfbcnn, evaluate_branches, fine_tune_subject, train_from_scratch, BranchEval,
    DataSplit, DistributedModel, EpochedDataset, StageReport, SweepPoint,
};
use bwnet_tensor::RngState;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::weights::{checkpoint_name, save_weights};

pub const CAP_FILE: &str = "cap.bnds";
pub const LAYOUT_FILE: &str = "layout.json";
pub const CANDIDATES_FILE: &str = "candidates.bnds";
pub const CANDIDATE_PAIRS_FILE: &str = "candidates.json";
pub const SELECTION_FILE: &str = "selection.json";
pub const MODEL_FILE: &str = "model.bnw";
pub const BRANCHES_FILE: &str = "branches.json";

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Electrode-level data and its layout, from whichever source the config
/// names. `None` when the config starts from node-level data.
pub fn cap_data(config: &RunConfig) -> Result<Option<(EpochedDataset, ElectrodeLayout)>> {
    let d = &config.data;
    if let Some(synthetic) = &d.synthetic {
        let cap = generate_synthetic(synthetic)?;
        return Ok(Some((cap.to_dataset()?, cap.layout)));
    }
    let layout = || -> Result<ElectrodeLayout> {
        let path = d.layout.as_ref().ok_or_else(|| HarnessError::Config("data.layout is required".into()))?;
        read_json(path)
    };
    if let Some(path) = &d.cap {
        return Ok(Some((load_dataset(path)?, layout()?)));
    }
    if let Some(path) = &d.csv_manifest {
        return Ok(Some((load_csv_trials(path)?, layout()?)));
    }
    Ok(None)
}

/// Every candidate node's signal, `[N, K, L, 1]`, and the electrode pairs
/// behind them (empty when the data was node-level to begin with).
pub fn candidate_data(config: &RunConfig) -> Result<(EpochedDataset, Vec<CandidateNode>)> {
    if let Some(path) = &config.data.candidates {
        return Ok((load_dataset(path)?, Vec::new()));
    }
    let (cap, layout) = cap_data(config)?.expect("one data source is configured");
    if cap.channels() != layout.len() {
        return Err(HarnessError::Config(format!(
            "layout has {} electrodes but the data has {} channels",
            layout.len(),
            cap.channels()
        )));
    }
    let pairs = enumerate_candidate_nodes(&layout, config.data.threshold_cm)?;
    let ds = emulate_dataset(&cap, &pairs, config.data.standardize)?;
    Ok((ds, pairs))
}

/// Splits off the trailing `fraction` of trials as the test set.
pub fn split_test(ds: &EpochedDataset, fraction: f64) -> Result<(EpochedDataset, EpochedDataset)> {
    let n_test = ((ds.len() as f64) * fraction).round() as usize;
    if n_test == 0 || n_test >= ds.len() {
        return Err(HarnessError::Config(format!(
            "test fraction {fraction} leaves no train or no test trials out of {}",
            ds.len()
        )));
    }
    let cut = ds.len() - n_test;
    let pool: Vec<usize> = (0..cut).collect();
    let test: Vec<usize> = (cut..ds.len()).collect();
    Ok((ds.subset(&pool)?, ds.subset(&test)?))
}

/// Learns the node selection on the training trials of the first seed.
pub fn select_nodes(config: &RunConfig, candidates: &EpochedDataset) -> Result<SelectionOutcome> {
    let (pool, _) = split_test(candidates, config.data.test_fraction)?;
    let central = config.central_config(config.nodes.count, pool.window_len(), pool.num_classes());
    let train = config.train_for(config.seeds[0]);
    Ok(gumbel_select_nodes(&pool, &central, config.nodes.count, &config.selection, &train)?)
}

/// Node-level data for the chosen candidates, split into a train/validation
/// pool and a test set.
#[derive(Clone, Debug)]
pub struct NodeData {
    pub nodes: Vec<usize>,
    pub pool: EpochedDataset,
    pub test: EpochedDataset,
}

impl NodeData {
    pub fn new(candidates: &EpochedDataset, nodes: &[usize], test_fraction: f64) -> Result<Self> {
        let chosen = candidates.select_channels(nodes)?;
        let (pool, test) = split_test(&chosen, test_fraction)?;
        Ok(NodeData {
            nodes: nodes.to_vec(),
            pool,
            test,
        })
    }

    pub fn split(&self, config: &RunConfig, seed: u64) -> Result<DataSplit> {
        Ok(DataSplit::new(&self.pool, config.train.validation_fraction, seed)?.with_test(self.test.clone()))
    }
}

/// Node indices from the config, else from a saved selection, else learned
/// now (and saved).
pub fn resolve_nodes(config: &RunConfig, candidates: &EpochedDataset) -> Result<Vec<usize>> {
    if let Some(idx) = &config.nodes.indices {
        return Ok(idx.clone());
    }
    let path = config.output_dir.join(SELECTION_FILE);
    if path.exists() {
        let saved: SelectionOutcome = read_json(&path)?;
        if saved.nodes.len() == config.nodes.count {
            return Ok(saved.nodes);
        }
        log::warn!(
            "{} holds {} nodes, the config asks for {}; selecting again",
            path.display(),
            saved.nodes.len(),
            config.nodes.count
        );
    }
    let outcome = select_nodes(config, candidates)?;
    create_dir(&config.output_dir)?;
    crate::report::write_file(&path, &crate::report::to_json(&outcome)?)?;
    Ok(outcome.nodes)
}

#[derive(Clone, Debug)]
pub struct TrainedSeed {
    pub seed: u64,
    pub model: DistributedModel,
    pub reports: Vec<StageReport>,
}

/// Trains one seed: the staged schedule (or the from-scratch ablation),
/// then optional subject fine-tuning. With `out`, stage checkpoints and the
/// final model are written there.
pub fn train_seed(config: &RunConfig, data: &NodeData, seed: u64, out: Option<&Path>) -> Result<TrainedSeed> {
    let split = data.split(config, seed)?;
    let train = config.train_for(seed);
    let central = config.central_config(data.nodes.len(), data.pool.window_len(), data.pool.num_classes());
    let mut model = build_distributed(central, config.compression, &mut RngState::new(seed))?;
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let mut reports = if config.from_scratch {
        vec![train_from_scratch(&mut model, &split, &train)?]
    } else {
        let mut save_error = None;
        let reports = run_pipeline_with(&mut model, &split, &train, config.ae_pretrain, |report, m| {
            if let (Some(dir), Some(name), None) = (out, checkpoint_name(report.stage), &save_error) {
                save_error = save_weights(m, &dir.join(name)).err();
            }
            Ok(())
        })?;
        if let Some(e) = save_error {
            return Err(e);
        }
        reports
    };
    if let Some(subject) = config.subject_finetune {
        let (tuned, report) = fine_tune_subject(&model, &data.pool, subject, &train)?;
        model = tuned;
        reports.push(report);
    }
    if let Some(dir) = out {
        save_weights(&model, &dir.join(MODEL_FILE))?;
    }
    Ok(TrainedSeed { seed, model, reports })
}

/// Test trials to evaluate on: the fine-tuned subject's, or all.
pub fn eval_set(config: &RunConfig, data: &NodeData) -> Result<EpochedDataset> {
    match config.subject_finetune {
        Some(subject) => {
            let idx = data.test.subject_indices(subject);
            if idx.is_empty() {
                return Err(bwnet_core::CoreError::UnknownSubject(subject).into());
            }
            Ok(data.test.subset(&idx)?)
        }
        None => Ok(data.test.clone()),
    }
}

/// Branch outputs on the test set and the threshold sweep.
pub fn sweep_seed(
    config: &RunConfig,
    model: &DistributedModel,
    data: &NodeData,
    seed: u64,
) -> Result<(BranchEval, Vec<SweepPoint>)> {
    let test = eval_set(config, data)?;
    let eval = evaluate_branches(model, &test)?;
    let cfg = model.config();
    let (l, nc, d) = (cfg.window_len(), cfg.num_classes(), cfg.compressor.factor);
    let points = if config.sweep.calibrate_on_validation {
        let calibration = evaluate_branches(model, &data.split(config, seed)?.val)?;
        sweep_calibrated(&eval, &calibration, l, nc, d, config.sweep.step)?
    } else {
        sweep_from_eval(&eval, l, nc, d, config.sweep.step)?
    };
    Ok((eval, points))
}

/// Test accuracies of each branch for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchAccuracy {
    pub seed: u64,
    pub classfuse: f64,
    pub compressfuse: f64,
    pub fullfuse: f64,
}

impl BranchAccuracy {
    pub fn new(seed: u64, eval: &BranchEval) -> Self {
        BranchAccuracy {
            seed,
            classfuse: eval.classfuse_accuracy(),
            compressfuse: eval.compressfuse_accuracy(),
            fullfuse: eval.fullfuse_accuracy(),
        }
    }
}

/// The centralized classifier, the staged pipeline and the from-scratch
/// ablation on one seed, all on the same split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub central: f64,
    pub branches: BranchAccuracy,
    pub scratch_fullfuse: f64,
}

pub fn compare_seed(config: &RunConfig, data: &NodeData, seed: u64) -> Result<Comparison> {
    let split = data.split(config, seed)?;
    let train = config.train_for(seed);
    let cfg = config.central_config(data.nodes.len(), data.pool.window_len(), data.pool.num_classes());

    let mut central = build_msfbcnn(cfg, &mut RngState::new(seed))?;
    let central_acc = train_central(&mut central, &split, &train)?
        .test_accuracy
        .expect("split has a test set");

    let staged = train_seed(
        &RunConfig {
            from_scratch: false,
            subject_finetune: None,
            ..config.clone()
        },
        data,
        seed,
        None,
    )?;
    let branches = BranchAccuracy::new(seed, &evaluate_branches(&staged.model, &data.test)?);

    let mut scratch = build_distributed(cfg, config.compression, &mut RngState::new(seed))?;
    train_from_scratch(&mut scratch, &split, &train)?;
    let scratch_fullfuse = evaluate_branches(&scratch, &data.test)?.fullfuse_accuracy();
    log::info!(
        "seed {seed}: central {central_acc:.3}, classfuse {:.3}, compressfuse {:.3}, fullfuse {:.3}, scratch {scratch_fullfuse:.3}",
        branches.classfuse,
        branches.compressfuse,
        branches.fullfuse
    );
    Ok(Comparison {
        seed,
        central: central_acc,
        branches,
        scratch_fullfuse,
    })
}

/// Runs `job` for every seed on a small worker pool. Workers share
/// nothing; results come back in seed order whatever the finishing order.
pub fn for_each_seed<T, F>(seeds: &[u64], job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let out = job(seed);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn seed_dirs(config: &RunConfig) -> Vec<(u64, PathBuf)> {
    config.seeds.iter().map(|&s| (s, config.seed_dir(s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn pool_keeps_seed_order() {
        let out = for_each_seed(&[5, 3, 9, 1], |s| Ok(s * 2)).unwrap();
        assert_eq!(out, vec![10, 6, 18, 2]);
        assert!(for_each_seed(&[1, 2], |s| if s == 2 {
            Err(HarnessError::Config("boom".into()))
        } else {
            Ok(s)
        })
        .is_err());
    }
}
