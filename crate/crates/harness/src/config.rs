//! Run configuration, read from TOML.
//!
//! ```toml
//! output_dir = "runs/demo"
//! seeds = [0, 1, 2, 3, 4]
//! compression = 4
//! ae_pretrain = false
//!
//! [data]
//! synthetic = { trials_per_class = 200 }   # or cap / csv_manifest / candidates
//! threshold_cm = 3.0
//! test_fraction = 0.25
//!
//! [nodes]
//! count = 3
//! indices = [36, 28, 2]                      # omit to learn the selection
//!
//! [model]
//! temporal_filters = 10
//! spatial_filters = 10
//!
//! [train]
//! max_epochs = 50
//!
//! [sweep]
//! step = 0.01
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use bwnet_core::exit::threshold_grid;
use bwnet_core::sensor::{SelectionConfig, SyntheticConfig};
use bwnet_core::{MsfbcnnConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generate an electrode-level recording.
    pub synthetic: Option<SyntheticConfig>,
    /// Electrode-level dataset file (`.bnds`); needs `layout`.
    pub cap: Option<PathBuf>,
    /// Electrode-level CSV trials; needs `layout`.
    pub csv_manifest: Option<PathBuf>,
    /// Node-level dataset, one channel per candidate node.
    pub candidates: Option<PathBuf>,
    /// Electrode layout as JSON (`labels`, `positions` in cm).
    pub layout: Option<PathBuf>,
    /// Electrode pairs closer than this become candidate nodes.
    pub threshold_cm: f64,
    /// Trailing fraction of trials held out for testing.
    pub test_fraction: f64,
    /// Standardize each node window to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: None,
            cap: None,
            csv_manifest: None,
            candidates: None,
            layout: None,
            threshold_cm: 3.0,
            test_fraction: 0.25,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub count: usize,
    /// Fixed candidate indices; learned by `select-nodes` when absent.
    pub indices: Option<Vec<usize>>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig { count: 3, indices: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub temporal_filters: usize,
    pub spatial_filters: usize,
    pub dropout_rate: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = MsfbcnnConfig::default();
        ModelConfig {
            temporal_filters: d.temporal_filters,
            spatial_filters: d.spatial_filters,
            dropout_rate: d.dropout_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub step: f64,
    /// Measure the exit fraction on the validation split instead of the
    /// test split.
    pub calibrate_on_validation: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            step: 0.01,
            calibrate_on_validation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub compression: usize,
    pub ae_pretrain: bool,
    pub from_scratch: bool,
    pub subject_finetune: Option<u16>,
    pub data: DataConfig,
    pub nodes: NodeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            seeds: vec![0],
            compression: 4,
            ae_pretrain: false,
            from_scratch: false,
            subject_finetune: None,
            data: DataConfig {
                synthetic: Some(SyntheticConfig::default()),
                ..Default::default()
            },
            nodes: NodeConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| config_err(format!("empty override key `{key}`")))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after applying `key.path=value` overrides; values are
    /// TOML (`5`, `[1, 2]`, `true`) and fall back to plain strings.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{item}` is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut table, key.trim(), value)?;
        }
        Ok(toml::Value::Table(table).try_into()?)
    }

    /// Parses, applies overrides, resolves relative paths against the
    /// file's directory (or the working directory without a file) and
    /// validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (text, base) = match path {
            Some(p) => (
                fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?,
                p.parent().unwrap_or(Path::new(".")).to_path_buf(),
            ),
            None => (String::new(), PathBuf::from(".")),
        };
        let mut config = Self::from_toml_with(&text, overrides)?;
        config.resolve_paths(&base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let d = &mut self.data;
        for p in [&mut d.cap, &mut d.csv_manifest, &mut d.candidates, &mut d.layout].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        if self.compression == 0 {
            return Err(config_err("compression must be at least 1"));
        }
        if self.nodes.count == 0 {
            return Err(config_err("nodes.count must be at least 1"));
        }
        if let Some(idx) = &self.nodes.indices {
            if idx.len() != self.nodes.count {
                return Err(config_err(format!(
                    "nodes.indices lists {} candidates but nodes.count is {}",
                    idx.len(),
                    self.nodes.count
                )));
            }
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != idx.len() {
                return Err(config_err("nodes.indices must be distinct"));
            }
        }
        let d = &self.data;
        let sources = [d.synthetic.is_some(), d.cap.is_some(), d.csv_manifest.is_some(), d.candidates.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(config_err(
                "data needs exactly one of synthetic, cap, csv_manifest or candidates",
            ));
        }
        if (d.cap.is_some() || d.csv_manifest.is_some()) && d.layout.is_none() {
            return Err(config_err("electrode-level data needs data.layout"));
        }
        for p in [&d.cap, &d.csv_manifest, &d.candidates, &d.layout].into_iter().flatten() {
            if !p.exists() {
                return Err(config_err(format!("{} does not exist", p.display())));
            }
        }
        if let Some(s) = &d.synthetic {
            s.validate()?;
        }
        if d.threshold_cm.is_nan() || d.threshold_cm <= 0.0 {
            return Err(config_err("data.threshold_cm must be positive"));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(config_err(format!("data.test_fraction {} outside (0, 1)", d.test_fraction)));
        }
        self.train.validate()?;
        self.selection.validate()?;
        threshold_grid(self.sweep.step)?;
        self.central_config(1, 15, 2).validate()?;
        Ok(())
    }

    /// Centralized classifier for the given data shape.
    pub fn central_config(&self, channels: usize, window_len: usize, num_classes: usize) -> MsfbcnnConfig {
        MsfbcnnConfig {
            channels,
            window_len,
            temporal_filters: self.model.temporal_filters,
            spatial_filters: self.model.spatial_filters,
            num_classes,
            dropout_rate: self.model.dropout_rate,
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed{seed}"))
    }

    /// Training settings for one seed.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_sections() {
        let c = RunConfig::from_toml(
            r#"
            seeds = [3, 4]
            compression = 6
            [data]
            synthetic = { window_len = 150, snr = 2.0 }
            [nodes]
            count = 2
            indices = [1, 5]
            [train]
            max_epochs = 7
            patience = 2
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.data.synthetic.as_ref().unwrap().snr, 2.0);
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.train.lr_fresh, 1e-3);
        assert_eq!(c.train_for(4).seed, 4);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = |text: &str| RunConfig::from_toml(text).and_then(|c| c.validate()).is_err();
        assert!(bad("seeds = []\n[data]\nsynthetic = {}"));
        assert!(bad("[data]\nsynthetic = {}\ncandidates = \"x.bnds\""));
        assert!(bad("[data]\ncandidates = \"/definitely/missing.bnds\""));
        assert!(bad("[data]\nsynthetic = {}\n[nodes]\ncount = 2\nindices = [1, 1]"));
        assert!(bad("[data]\nsynthetic = {}\n[sweep]\nstep = 0.3"));
        assert!(bad("unknown_key = 1"));
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::from_toml_with(
            "compression = 4\n[train]\nmax_epochs = 9",
            &["compression=6".into(), "train.max_epochs=3".into(), "output_dir=out/x".into(), "nodes.indices=[1, 2, 3]".into()],
        )
        .unwrap();
        assert_eq!(c.compression, 6);
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
        assert_eq!(c.nodes.indices, Some(vec![1, 2, 3]));
        assert!(RunConfig::from_toml_with("", &["compression".into()]).is_err());
    }
}
