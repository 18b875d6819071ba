//! `bwnet`: data synthesis, node emulation and selection, staged training,
//! threshold sweeps, network simulation and reports, driven by a TOML run
//! configuration whose keys can all be overridden on the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bwnet_core::sensor::{generate_synthetic, save_dataset};
use bwnet_core::{ExitPolicy, Payload, StageReport};
use bwnet_harness::report::{format_sig, to_json, write_file};
use bwnet_harness::workflow::{self as wf, BranchAccuracy, NodeData};
use bwnet_harness::{emit_report, load_weights, reconcile, simulate_run, HarnessError, Result, RunConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "bwnet", version, about = "Bandwidth-limited distributed classification runs")]
struct Cli {
    /// Run configuration (TOML). Defaults apply without one.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. `--set train.max_epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Replaces the configured seed list; repeat for several seeds.
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    compression: Option<usize>,
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    ae_pretrain: bool,
    #[arg(long, value_name = "ID")]
    subject_finetune: Option<u16>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic electrode recording.
    SynthData,
    /// Turn electrode signals into candidate node signals.
    EmulateNodes,
    /// Learn which candidate nodes to use.
    SelectNodes {
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Train every seed with the staged schedule.
    Train(TrainArgs),
    /// Sweep exit thresholds on the test set and write the report files.
    Sweep {
        #[arg(long)]
        step: Option<f64>,
    },
    /// Simulate the network at one exit threshold and log every message.
    Simulate {
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Summarize branch accuracies across seeds.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    let mut push = |key: &str, value: String| overrides.push(format!("{key}={value}"));
    if let Some(dir) = &cli.output_dir {
        push("output_dir", toml::Value::String(dir.display().to_string()).to_string());
    }
    if !cli.seeds.is_empty() {
        push("seeds", format!("{:?}", cli.seeds));
    }
    match &cli.command {
        Command::Train(a) => {
            if let Some(m) = a.nodes {
                push("nodes.count", m.to_string());
            }
            if let Some(d) = a.compression {
                push("compression", d.to_string());
            }
            if a.from_scratch {
                push("from_scratch", "true".into());
            }
            if a.ae_pretrain {
                push("ae_pretrain", "true".into());
            }
            if let Some(s) = a.subject_finetune {
                push("subject_finetune", s.to_string());
            }
        }
        Command::SelectNodes { nodes: Some(m) } => push("nodes.count", m.to_string()),
        Command::Sweep { step: Some(s) } => push("sweep.step", s.to_string()),
        _ => {}
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &to_json(value)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Candidate-node data: the `emulate-nodes` output when present, else
/// built from the configured source.
fn candidates(config: &RunConfig) -> Result<bwnet_core::EpochedDataset> {
    let saved = config.output_dir.join(wf::CANDIDATES_FILE);
    if config.data.candidates.is_none() && saved.exists() {
        return Ok(bwnet_core::sensor::load_dataset(&saved)?);
    }
    Ok(wf::candidate_data(config)?.0)
}

fn node_data(config: &RunConfig) -> Result<NodeData> {
    let cands = candidates(config)?;
    let nodes = wf::resolve_nodes(config, &cands)?;
    log::info!("nodes {nodes:?} of {} candidates", cands.channels());
    NodeData::new(&cands, &nodes, config.data.test_fraction)
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    ensure_dir(&config.output_dir)?;
    let out = &config.output_dir;
    match &cli.command {
        Command::SynthData => {
            let synthetic = config
                .data
                .synthetic
                .as_ref()
                .ok_or_else(|| HarnessError::Config("synth-data needs a data.synthetic section".into()))?;
            let cap = generate_synthetic(synthetic)?;
            save_dataset(&cap.to_dataset()?, &out.join(wf::CAP_FILE))?;
            write_json(&out.join(wf::LAYOUT_FILE), &cap.layout)?;
            println!("{} trials × {} electrodes → {}", cap.labels.len(), cap.layout.len(), out.display());
        }
        Command::EmulateNodes => {
            let (ds, pairs) = wf::candidate_data(&config)?;
            save_dataset(&ds, &out.join(wf::CANDIDATES_FILE))?;
            write_json(&out.join(wf::CANDIDATE_PAIRS_FILE), &pairs)?;
            println!("{} candidate nodes → {}", ds.channels(), out.display());
        }
        Command::SelectNodes { .. } => {
            let outcome = wf::select_nodes(&config, &candidates(&config)?)?;
            write_json(&out.join(wf::SELECTION_FILE), &outcome)?;
            println!("selected nodes {:?}", outcome.nodes);
        }
        Command::Train(_) => {
            let data = node_data(&config)?;
            let runs = wf::for_each_seed(&config.seeds, |seed| {
                let dir = config.seed_dir(seed);
                let trained = wf::train_seed(&config, &data, seed, Some(&dir))?;
                write_json(&dir.join("stages.json"), &trained.reports)?;
                Ok(trained)
            })?;
            for t in runs {
                let last = t.reports.last().expect("at least one stage");
                println!(
                    "seed {}: {} stages, final test accuracy {}",
                    t.seed,
                    t.reports.len(),
                    last.test_accuracy.map_or("n/a".into(), format_sig)
                );
            }
        }
        Command::Sweep { .. } => {
            let data = node_data(&config)?;
            wf::for_each_seed(&config.seeds, |seed| {
                let dir = config.seed_dir(seed);
                let model = load_weights(&dir.join(wf::MODEL_FILE))?;
                let stages: Vec<StageReport> = wf::read_json(&dir.join("stages.json"))?;
                let (eval, points) = wf::sweep_seed(&config, &model, &data, seed)?;
                emit_report(&points, &stages, &dir)?;
                write_json(&dir.join(wf::BRANCHES_FILE), &BranchAccuracy::new(seed, &eval))
            })?;
            println!("sweeps written under {}", out.display());
        }
        Command::Simulate { threshold } => {
            let data = node_data(&config)?;
            let policy = ExitPolicy::new(*threshold)?;
            for (seed, dir) in wf::seed_dirs(&config) {
                let model = load_weights(&dir.join(wf::MODEL_FILE))?;
                let test = wf::eval_set(&config, &data)?;
                let sim = simulate_run(&model, &test, policy)?;
                let cfg = model.config();
                reconcile(&sim, cfg.nodes(), cfg.num_classes(), cfg.compressed_len())?;
                let correct = sim.predictions.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
                let summary = SimulationSummary {
                    threshold: *threshold,
                    samples: test.len(),
                    lambda: sim.trace.lambda(),
                    accuracy: correct as f64 / test.len() as f64,
                    class_vectors: sim.log.count(Payload::ClassVector),
                    compressed_frames: sim.log.count(Payload::CompressedFrame),
                    frame_requests: sim.log.requests,
                    bytes: sim.log.total_bytes(),
                    bandwidth_from_log: sim.empirical_bandwidth(&model),
                    bandwidth_formula: sim.analytic_bandwidth(&model)?,
                };
                write_json(&dir.join("simulation.json"), &summary)?;
                write_file(&dir.join("messages.csv"), &messages_csv(&sim.log))?;
                println!(
                    "seed {seed}: λ = {}, accuracy {}, {} bytes, B = {} (formula {})",
                    format_sig(summary.lambda),
                    format_sig(summary.accuracy),
                    summary.bytes,
                    format_sig(summary.bandwidth_from_log),
                    format_sig(summary.bandwidth_formula)
                );
            }
        }
        Command::Report => {
            let mut rows = Vec::new();
            for (_, dir) in wf::seed_dirs(&config) {
                rows.push(wf::read_json::<BranchAccuracy>(&dir.join(wf::BRANCHES_FILE))?);
            }
            let pick = |f: fn(&BranchAccuracy) -> f64| wf::median(&rows.iter().map(f).collect::<Vec<_>>());
            let summary = Summary {
                median_classfuse: pick(|r| r.classfuse),
                median_compressfuse: pick(|r| r.compressfuse),
                median_fullfuse: pick(|r| r.fullfuse),
                seeds: rows,
            };
            write_json(&out.join("summary.json"), &summary)?;
            println!(
                "median test accuracy over {} seeds: classfuse {}, compressfuse {}, fullfuse {}",
                summary.seeds.len(),
                format_sig(summary.median_classfuse),
                format_sig(summary.median_compressfuse),
                format_sig(summary.median_fullfuse)
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    threshold: f64,
    samples: usize,
    lambda: f64,
    accuracy: f64,
    class_vectors: usize,
    compressed_frames: usize,
    frame_requests: usize,
    bytes: usize,
    bandwidth_from_log: f64,
    bandwidth_formula: f64,
}

#[derive(Serialize)]
struct Summary {
    median_classfuse: f64,
    median_compressfuse: f64,
    median_fullfuse: f64,
    seeds: Vec<BranchAccuracy>,
}

fn messages_csv(log: &bwnet_harness::MessageLog) -> String {
    let mut out = String::from("round,sample,node,payload,scalars,bytes\n");
    for m in &log.messages {
        let kind = match m.payload {
            Payload::ClassVector => "class-vector",
            Payload::CompressedFrame => "compressed-frame",
        };
        out.push_str(&format!("{},{},{},{kind},{},{}\n", m.round, m.sample, m.node, m.scalars, m.bytes));
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
