//! Continuous-recording preprocessing: polyphase resampling, zero-phase
//! Butterworth high-pass, epoching around cue onsets and per-epoch
//! standardization.

use std::f64::consts::PI;

use bwnet_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataset::EpochedDataset;
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_rate: u32,
    pub highpass_hz: f64,
    pub filter_order: usize,
    /// Seconds kept before each cue.
    pub pre_s: f64,
    /// Seconds kept after each cue.
    pub post_s: f64,
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_rate: 250,
            highpass_hz: 4.0,
            filter_order: 4,
            pre_s: 0.5,
            post_s: 4.0,
            standardize: true,
        }
    }
}

impl PreprocessConfig {
    /// Samples per epoch at the target rate (1125 for the defaults).
    pub fn window_len(&self) -> usize {
        ((self.pre_s + self.post_s) * self.target_rate as f64).round() as usize
    }

    fn pre_samples(&self) -> usize {
        (self.pre_s * self.target_rate as f64).round() as usize
    }
}

/// A cue in a continuous recording.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub onset_s: f64,
    pub label: usize,
    pub subject: u16,
}

/// Continuous multi-channel signals, one `Vec` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub cues: Vec<Cue>,
}

/// Second-order sections `[b0, b1, b2, a0, a1, a2]` with `a0 = 1`.
pub type Sos = [f64; 6];

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass with `taps` taps and cutoff `cutoff` as a
/// fraction of Nyquist, normalized to unit DC gain.
fn lowpass_fir(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let center = (taps - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let m = n as f64 - center;
            let sinc = if m == 0.0 { 1.0 } else { (PI * cutoff * m).sin() / (PI * cutoff * m) };
            let r = if center == 0.0 { 0.0 } else { m / center };
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            cutoff * sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Rational-rate resampling by `up / down` with a zero-phase anti-alias
/// filter. The output has `ceil(len · up / down)` samples.
pub fn resample_poly(x: &[f64], up: u64, down: u64) -> Vec<f64> {
    let g = gcd(up, down);
    let (up, down) = (up / g, down / g);
    if up == down {
        return x.to_vec();
    }
    let max_rate = up.max(down) as usize;
    let half = 10 * max_rate;
    let h = lowpass_fir(2 * half + 1, 1.0 / max_rate as f64, 5.0);
    let (up_us, down_us) = (up as usize, down as usize);
    let out_len = (x.len() * up_us).div_ceil(down_us);
    (0..out_len)
        .map(|m| {
            // position m·down in the upsampled grid; x[j] sits at j·up
            let pos = m * down_us;
            let lo = pos.saturating_sub(half).div_ceil(up_us);
            let hi = ((pos + half) / up_us + 1).min(x.len());
            (lo..hi)
                .map(|j| x[j] * h[pos + half - j * up_us])
                .sum::<f64>()
                * up as f64
        })
        .collect()
}

/// Digital Butterworth high-pass of the given order as second-order
/// sections, via a prewarped bilinear transform of the analog prototype.
/// Each section has unit gain at Nyquist.
pub fn butterworth_highpass(order: usize, cutoff_hz: f64, sample_rate: f64) -> Result<Vec<Sos>> {
    if order == 0 || !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
        return Err(CoreError::InvalidArgument(format!(
            "high-pass needs order ≥ 1 and 0 < cutoff < Nyquist, got order {order} at {cutoff_hz} Hz / {sample_rate} Hz"
        )));
    }
    let fs2 = 2.0 * sample_rate;
    let wc = fs2 * (PI * cutoff_hz / sample_rate).tan();
    let mut sections = Vec::new();
    // upper-half-plane prototype poles; their conjugates complete each pair
    for k in 0..order / 2 {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let (pr, pi) = (theta.cos(), theta.sin());
        // high-pass: s → wc / s
        let mag2 = pr * pr + pi * pi;
        let (sr, si) = (wc * pr / mag2, -wc * pi / mag2);
        // bilinear: z = (fs2 + s) / (fs2 − s)
        let (nr, ni) = (fs2 + sr, si);
        let (dr, di) = (fs2 - sr, -si);
        let dm = dr * dr + di * di;
        let (zr, zi) = ((nr * dr + ni * di) / dm, (ni * dr - nr * di) / dm);
        let (a1, a2) = (-2.0 * zr, zr * zr + zi * zi);
        let gain = (1.0 - a1 + a2) / 4.0;
        sections.push([gain, -2.0 * gain, gain, 1.0, a1, a2]);
    }
    if order % 2 == 1 {
        let s = -wc;
        let z = (fs2 + s) / (fs2 - s);
        let gain = (1.0 + z) / 2.0;
        sections.push([gain, -gain, 0.0, 1.0, -z, 0.0]);
    }
    Ok(sections)
}

/// Initial state of a direct-form-II-transposed biquad at steady state for
/// a unit step input.
fn section_step_state(s: &Sos) -> [f64; 2] {
    let [b0, b1, b2, _, a1, a2] = *s;
    // (I − Aᵀ) z = b[1..] − a[1..]·b0 for the companion matrix A
    let (r0, r1) = (b1 - a1 * b0, b2 - a2 * b0);
    let det = (1.0 + a1) + a2;
    if det.abs() < 1e-300 {
        return [0.0, 0.0];
    }
    let z0 = (r0 + r1) / det;
    [z0, r1 - a2 * z0]
}

fn sosfilt_with_state(sos: &[Sos], x: &mut [f64], states: &mut [[f64; 2]]) {
    for (s, z) in sos.iter().zip(states.iter_mut()) {
        let [b0, b1, b2, _, a1, a2] = *s;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z[0];
            z[0] = b1 * xin - a1 * y + z[1];
            z[1] = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Steady-state step-response states for the whole cascade: each section
/// sees the DC gain of the sections before it.
fn cascade_step_states(sos: &[Sos]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let z = section_step_state(s);
            let st = [z[0] * scale, z[1] * scale];
            scale *= (s[0] + s[1] + s[2]) / (s[3] + s[4] + s[5]);
            st
        })
        .collect()
}

/// Zero-phase forward-backward filtering with odd extension of
/// `3 · (2 · sections + 1)` samples at each end and steady-state initial
/// conditions.
pub fn sosfiltfilt(sos: &[Sos], x: &[f64]) -> Result<Vec<f64>> {
    let pad = 3 * (2 * sos.len() + 1);
    if x.len() <= pad {
        return Err(CoreError::InvalidArgument(format!(
            "signal of {} samples is too short for zero-phase filtering (needs > {pad})",
            x.len()
        )));
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = cascade_step_states(sos);
    let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
    let mut states = scaled(ext[0]);
    sosfilt_with_state(sos, &mut ext, &mut states);
    ext.reverse();
    let mut states = scaled(ext[0]);
    sosfilt_with_state(sos, &mut ext, &mut states);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Zero mean, unit (population) variance. Constant input maps to zeros.
pub fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

/// Standardizes every channel of every window of `[N, C, L, 1]` in place.
pub fn standardize_windows(x: &mut Tensor) {
    let l = x.dim(2);
    for row in x.data_mut().chunks_exact_mut(l) {
        let mut v: Vec<f64> = row.iter().map(|&s| s as f64).collect();
        standardize(&mut v);
        for (o, s) in row.iter_mut().zip(v) {
            *o = s as f32;
        }
    }
}

/// Result of [`preprocess`]: the epochs plus how many cues were dropped
/// because their window ran past either end of the recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub dataset: EpochedDataset,
    pub skipped: usize,
}

/// Resample → high-pass → epoch → standardize.
pub fn preprocess(recording: &Recording, config: &PreprocessConfig) -> Result<Preprocessed> {
    if recording.sample_rate < config.target_rate {
        return Err(CoreError::InvalidArgument(format!(
            "source rate {} Hz is below the target {} Hz",
            recording.sample_rate, config.target_rate
        )));
    }
    if recording.channels.is_empty() {
        return Err(CoreError::EmptyDataset(" (recording has no channels)"));
    }
    let sos = butterworth_highpass(config.filter_order, config.highpass_hz, config.target_rate as f64)?;
    let filtered = recording
        .channels
        .iter()
        .map(|ch| {
            let resampled = resample_poly(ch, config.target_rate as u64, recording.sample_rate as u64);
            sosfiltfilt(&sos, &resampled)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = filtered.iter().map(Vec::len).min().unwrap_or(0);

    let (c, l) = (filtered.len(), config.window_len());
    let mut data = Vec::new();
    let (mut labels, mut subjects) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for cue in &recording.cues {
        let onset = (cue.onset_s * config.target_rate as f64).round() as i64;
        let start = onset - config.pre_samples() as i64;
        if start < 0 || start as usize + l > total {
            skipped += 1;
            continue;
        }
        for ch in &filtered {
            let mut w = ch[start as usize..start as usize + l].to_vec();
            if config.standardize {
                standardize(&mut w);
            }
            data.extend(w.into_iter().map(|v| v as f32));
        }
        labels.push(cue.label);
        subjects.push(cue.subject);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} cue(s) whose window extends past the recording");
    }
    let x = Tensor::new(&[labels.len(), c, l, 1], data)?;
    Ok(Preprocessed {
        dataset: EpochedDataset::new(x, labels, subjects, config.target_rate as f32)?,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn bessel_matches_known_value() {
        // I0(5) = 27.239871823604442
        assert!((bessel_i0(5.0) - 27.239871823604442).abs() < 1e-10);
    }

    #[test]
    fn halving_rate_halves_length_and_keeps_slow_tones() {
        let x: Vec<f64> = (0..5000).map(|i| (2.0 * PI * 5.0 * i as f64 / 500.0).sin()).collect();
        let y = resample_poly(&x, 250, 500);
        assert_eq!(y.len(), 2500);
        for (m, v) in y.iter().enumerate().skip(100).take(2300) {
            let want = (2.0 * PI * 5.0 * m as f64 / 250.0).sin();
            assert!((v - want).abs() < 1e-3, "sample {m}: {v} vs {want}");
        }
    }

    #[test]
    fn highpass_passes_dc_nowhere() {
        let sos = butterworth_highpass(4, 4.0, 250.0).unwrap();
        let x = vec![3.0; 400];
        let y = sosfiltfilt(&sos, &x).unwrap();
        assert!(rms(&y) < 1e-9);
    }

    #[test]
    fn epoch_past_end_is_skipped() {
        let rate = 250;
        let samples = 10 * rate as usize;
        let rec = Recording {
            channels: vec![(0..samples).map(|i| (i as f64 * 0.37).sin()).collect()],
            sample_rate: rate,
            cues: vec![
                Cue { onset_s: 2.0, label: 1, subject: 3 },
                Cue { onset_s: 8.0, label: 0, subject: 3 },
                Cue { onset_s: 0.2, label: 0, subject: 3 },
            ],
        };
        let out = preprocess(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.skipped, 2);
        assert_eq!(out.dataset.x.shape(), &[1, 1, 1125, 1]);
        assert_eq!(out.dataset.labels, vec![1]);
    }
}
