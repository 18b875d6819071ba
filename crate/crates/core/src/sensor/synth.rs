//! Desk-scale synthetic cap recordings: one oscillating source per class,
//! volume-conducted to a planar electrode grid by inverse-distance weights,
//! on top of a reference drift shared by every electrode and white noise.

use std::f64::consts::PI;

use bwnet_tensor::{RngState, Tensor};
use serde::{Deserialize, Serialize};

use super::layout::ElectrodeLayout;
use crate::dataset::EpochedDataset;
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub spacing_cm: f64,
    pub classes: usize,
    pub trials_per_class: usize,
    pub window_len: usize,
    pub sample_rate: f64,
    /// Source-to-noise power ratio at the electrodes (linear, may be
    /// infinite for noiseless data).
    pub snr: f64,
    /// Class frequencies are spread evenly over `[freq_low_hz, freq_high_hz]`.
    pub freq_low_hz: f64,
    pub freq_high_hz: f64,
    /// Depth of the sources below the electrode plane, cm.
    pub source_depth_cm: f64,
    /// Amplitude of the inactive class sources relative to the active one.
    pub distractor_level: f64,
    /// Standard deviation of the shared reference drift relative to the
    /// mean source amplitude.
    pub reference_level: f64,
    pub subjects: u16,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            grid_rows: 4,
            grid_cols: 4,
            spacing_cm: 2.0,
            classes: 4,
            trials_per_class: 200,
            window_len: 150,
            sample_rate: 250.0,
            snr: 4.0,
            freq_low_hz: 7.0,
            freq_high_hz: 22.0,
            source_depth_cm: 1.5,
            distractor_level: 0.35,
            reference_level: 5.0,
            subjects: 1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::InvalidConfig(msg));
        if self.grid_rows * self.grid_cols < 2 {
            return bad("synthetic grid needs at least two electrodes".into());
        }
        if self.classes < 2 || self.trials_per_class == 0 || self.window_len < 2 {
            return bad(format!(
                "need ≥ 2 classes, ≥ 1 trial per class and ≥ 2 samples (got {}, {}, {})",
                self.classes, self.trials_per_class, self.window_len
            ));
        }
        if !(self.sample_rate > 0.0 && self.spacing_cm > 0.0 && self.snr > 0.0 && self.subjects > 0) {
            return bad("sample rate, spacing, snr and subject count must be positive".into());
        }
        if !(self.freq_low_hz > 0.0 && self.freq_low_hz <= self.freq_high_hz && self.freq_high_hz < self.sample_rate / 2.0)
        {
            return bad(format!(
                "class band {}–{} Hz must be positive and below Nyquist",
                self.freq_low_hz, self.freq_high_hz
            ));
        }
        if !(self.source_depth_cm > 0.0 && self.distractor_level >= 0.0 && self.reference_level >= 0.0) {
            return bad("source depth must be positive, distractor and reference levels non-negative".into());
        }
        Ok(())
    }

    pub fn trials(&self) -> usize {
        self.classes * self.trials_per_class
    }
}

/// Where and at what frequency a class source oscillates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSource {
    pub position: [f64; 3],
    pub frequency_hz: f64,
}

/// Generated cap signals `[N, C, L]` with their layout and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCap {
    pub layout: ElectrodeLayout,
    pub sources: Vec<ClassSource>,
    pub signals: Tensor,
    pub labels: Vec<usize>,
    pub subjects: Vec<u16>,
    pub sample_rate: f64,
}

impl SyntheticCap {
    /// The electrode signals as a dataset `[N, C, L, 1]`.
    pub fn to_dataset(&self) -> Result<EpochedDataset> {
        let (n, c, l) = (self.signals.dim(0), self.signals.dim(1), self.signals.dim(2));
        EpochedDataset::new(
            self.signals.clone().into_reshaped(&[n, c, l, 1])?,
            self.labels.clone(),
            self.subjects.clone(),
            self.sample_rate as f32,
        )
    }
}

/// Sources spread evenly around an ellipse inside the grid, frequencies
/// spaced evenly across the configured band.
pub fn class_sources(config: &SyntheticConfig) -> Vec<ClassSource> {
    let w = (config.grid_cols - 1) as f64 * config.spacing_cm;
    let h = (config.grid_rows - 1) as f64 * config.spacing_cm;
    let k = config.classes;
    (0..k)
        .map(|c| {
            let angle = 2.0 * PI * (c as f64 + 0.5) / k as f64;
            let frequency_hz = if k == 1 {
                config.freq_low_hz
            } else {
                config.freq_low_hz + (config.freq_high_hz - config.freq_low_hz) * c as f64 / (k - 1) as f64
            };
            ClassSource {
                position: [
                    w / 2.0 + 0.35 * w * angle.cos(),
                    h / 2.0 + 0.35 * h * angle.sin(),
                    -config.source_depth_cm,
                ],
                frequency_hz,
            }
        })
        .collect()
}

/// Band-limited oscillation: three sinusoids within ±1.5 Hz of `freq`,
/// random phases, unit mean power.
fn oscillation(rng: &mut RngState, freq: f64, len: usize, rate: f64) -> Vec<f64> {
    let comps: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            let f = freq + 3.0 * (rng.uniform_f64() - 0.5);
            (f, 2.0 * PI * rng.uniform_f64())
        })
        .collect();
    let norm = (2.0 / comps.len() as f64).sqrt();
    (0..len)
        .map(|t| {
            let time = t as f64 / rate;
            norm * comps.iter().map(|&(f, p)| (2.0 * PI * f * time + p).sin()).sum::<f64>()
        })
        .collect()
}

/// Slow random-walk drift, low-pass smoothed, unit standard deviation.
fn drift(rng: &mut RngState, len: usize) -> Vec<f64> {
    let mut v = 0.0;
    let mut walk: Vec<f64> = (0..len)
        .map(|_| {
            v = 0.98 * v + rng.normal();
            v
        })
        .collect();
    let mean = walk.iter().sum::<f64>() / len as f64;
    let sd = (walk.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len as f64).sqrt();
    if sd > 0.0 {
        walk.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
    walk
}

/// Mixing weight from a source to an electrode.
fn inverse_distance(source: &[f64; 3], electrode: &[f64; 3]) -> f64 {
    let d2: f64 = source.iter().zip(electrode).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 / d2.sqrt()
}

/// Deterministic given `config.seed`; each trial draws from its own
/// substream. Labels are balanced and shuffled.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCap> {
    config.validate()?;
    let layout = ElectrodeLayout::grid(config.grid_rows, config.grid_cols, config.spacing_cm);
    let sources = class_sources(config);
    let (n, c, l) = (config.trials(), layout.len(), config.window_len);
    let root = RngState::new(config.seed);

    let mut labels: Vec<usize> = (0..n).map(|i| i % config.classes).collect();
    root.fork(u64::MAX).shuffle(&mut labels);
    let subjects: Vec<u16> = (0..n).map(|i| (i % config.subjects as usize) as u16).collect();

    let mix: Vec<Vec<f64>> = layout
        .positions
        .iter()
        .map(|e| sources.iter().map(|s| inverse_distance(&s.position, e)).collect())
        .collect();
    // noise power is set against the mean per-electrode power of an active
    // source, so the ratio means the same thing on any grid
    let source_power: f64 = mix
        .iter()
        .map(|row| row.iter().map(|w| w * w).sum::<f64>() / row.len() as f64)
        .sum::<f64>()
        / c as f64;
    let noise_sd = if config.snr.is_finite() {
        (source_power / config.snr).sqrt()
    } else {
        0.0
    };
    let reference_sd = config.reference_level * source_power.sqrt();

    let mut data = vec![0f32; n * c * l];
    for (trial, &label) in labels.iter().enumerate() {
        let mut rng = root.fork(trial as u64);
        let amps: Vec<f64> = (0..sources.len())
            .map(|k| {
                let jitter = 0.8 + 0.4 * rng.uniform_f64();
                if k == label {
                    jitter
                } else {
                    config.distractor_level * jitter
                }
            })
            .collect();
        let waves: Vec<Vec<f64>> = sources
            .iter()
            .map(|s| oscillation(&mut rng, s.frequency_hz, l, config.sample_rate))
            .collect();
        let reference = drift(&mut rng, l);
        for e in 0..c {
            let out = &mut data[(trial * c + e) * l..][..l];
            for (t, o) in out.iter_mut().enumerate() {
                let mut v = reference_sd * reference[t];
                for k in 0..sources.len() {
                    v += mix[e][k] * amps[k] * waves[k][t];
                }
                if noise_sd > 0.0 {
                    v += noise_sd * rng.normal();
                }
                *o = v as f32;
            }
        }
    }
    Ok(SyntheticCap {
        layout,
        sources,
        signals: Tensor::new(&[n, c, l], data)?,
        labels,
        subjects,
        sample_rate: config.sample_rate,
    })
}

/// A node-selection probe: `candidates` channels of white noise, one of
/// which also carries a class-dependent tone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub candidates: usize,
    pub informative: usize,
    pub classes: usize,
    pub trials: usize,
    pub window_len: usize,
    pub sample_rate: f64,
    /// Tone amplitude against unit-variance noise.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            candidates: 10,
            informative: 0,
            classes: 4,
            trials: 240,
            window_len: 75,
            sample_rate: 250.0,
            amplitude: 2.0,
            seed: 0,
        }
    }
}

/// Candidate windows `[N, K, L, 1]`; class `y` puts a `6 + 5y` Hz tone with
/// random phase on the informative candidate.
pub fn planted_candidates(config: &PlantedConfig) -> Result<EpochedDataset> {
    if config.informative >= config.candidates || config.classes < 2 || config.trials == 0 {
        return Err(CoreError::InvalidConfig(format!(
            "planted task needs informative < candidates, ≥ 2 classes and ≥ 1 trial (got {}, {}, {}, {})",
            config.informative, config.candidates, config.classes, config.trials
        )));
    }
    let (n, k, l) = (config.trials, config.candidates, config.window_len);
    let root = RngState::new(config.seed);
    let labels: Vec<usize> = (0..n).map(|i| i % config.classes).collect();
    let mut data = vec![0f32; n * k * l];
    for (t, &y) in labels.iter().enumerate() {
        let mut rng = root.fork(t as u64);
        let phase = 2.0 * PI * rng.uniform_f64();
        let freq = 6.0 + 5.0 * y as f64;
        for c in 0..k {
            for (s, o) in data[(t * k + c) * l..][..l].iter_mut().enumerate() {
                let mut v = rng.normal();
                if c == config.informative {
                    v += config.amplitude * (2.0 * PI * freq * s as f64 / config.sample_rate + phase).sin();
                }
                *o = v as f32;
            }
        }
    }
    let x = Tensor::new(&[n, k, l, 1], data)?;
    EpochedDataset::new(x, labels, vec![0; n], config.sample_rate as f32)
}
