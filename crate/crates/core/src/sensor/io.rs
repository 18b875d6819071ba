//! Dataset files.
//!
//! The binary container is little-endian:
//!
//! | bytes      | content                          |
//! |------------|----------------------------------|
//! | 4          | magic `BNDS`                     |
//! | 2          | format version (`u16`, = 1)      |
//! | 12         | `N`, `C`, `L` as `u32`           |
//! | 4          | sample rate (`f32`, Hz)          |
//! | 2·N        | labels (`u16`)                   |
//! | 2·N        | subject tags (`u16`)             |
//! | 4·N·C·L    | windows (`f32`, row-major)       |
//!
//! CSV ingestion reads a manifest with header `path,label,subject` whose
//! paths (relative to the manifest) point at one file per trial with header
//! `t,ch0,ch1,...` and one row per sample.

use std::fs;
use std::path::Path;

use bwnet_tensor::Tensor;
use serde::Deserialize;

use crate::dataset::EpochedDataset;
use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"BNDS";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12 + 4;

pub fn encode_dataset(dataset: &EpochedDataset) -> Result<Vec<u8>> {
    let (n, c, l) = (dataset.len(), dataset.channels(), dataset.window_len());
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| CoreError::InvalidArgument(format!("{what} {v} does not fit the file format")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n + 4 * n * c * l);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [(n, "window count"), (c, "channel count"), (l, "window length")] {
        out.extend_from_slice(&dim(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&dataset.sample_rate.to_le_bytes());
    for &y in &dataset.labels {
        let y = u16::try_from(y).map_err(|_| CoreError::InvalidArgument(format!("label {y} exceeds u16")))?;
        out.extend_from_slice(&y.to_le_bytes());
    }
    for &s in &dataset.subjects {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for &v in dataset.x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(CoreError::Format {
                offset: self.pos as u64,
                detail: format!(
                    "truncated {what}: needs {len} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<EpochedDataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CoreError::Format {
            offset: 0,
            detail: "missing BNDS magic bytes".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CoreError::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let n = r.u32("window count")? as usize;
    let c = r.u32("channel count")? as usize;
    let l = r.u32("window length")? as usize;
    let rate = f32::from_le_bytes(r.take(4, "sample rate")?.try_into().expect("four bytes"));
    let payload = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(l))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| CoreError::Format {
            offset: 6,
            detail: format!("dimensions {n}×{c}×{l} overflow"),
        })?;
    let expected = HEADER_LEN + 4 * n + payload;
    if bytes.len() > expected {
        return Err(CoreError::Format {
            offset: expected as u64,
            detail: format!("{} trailing bytes after a {n}×{c}×{l} payload", bytes.len() - expected),
        });
    }
    let labels: Vec<usize> = (0..n).map(|_| r.u16("labels").map(usize::from)).collect::<Result<_>>()?;
    let subjects: Vec<u16> = (0..n).map(|_| r.u16("subject tags")).collect::<Result<_>>()?;
    let raw = r.take(payload, "payload")?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
        .collect();
    EpochedDataset::new(Tensor::new(&[n, c, l, 1], data)?, labels, subjects, rate)
}

pub fn save_dataset(dataset: &EpochedDataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<EpochedDataset> {
    decode_dataset(&fs::read(path)?)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    label: usize,
    subject: u16,
}

fn read_trial(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f32>>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((0..headers.len().saturating_sub(1)).map(|i| format!("ch{i}")))
        .collect();
    if headers.len() < 2 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CoreError::InvalidArgument(format!(
            "{}: header must be `t,ch0,ch1,...`, got `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut channels = vec![Vec::new(); headers.len() - 1];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|e| {
                CoreError::InvalidArgument(format!("{} row {}: column {i}: {e}", path.display(), line + 2))
            })
        };
        times.push(parse(0)?);
        for (ch, col) in channels.iter_mut().zip(1..) {
            ch.push(parse(col)? as f32);
        }
    }
    Ok((times, channels))
}

/// Loads every trial listed in `manifest`. All trials must share the
/// channel count, length and sampling interval; the rate comes from the
/// `t` column.
pub fn load_csv_trials(manifest: &Path) -> Result<EpochedDataset> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest)?;
    let rows: Vec<ManifestRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(CoreError::EmptyDataset(" (manifest lists no trials)"));
    }
    let mut shape = None;
    let mut rate = None;
    let mut data = Vec::new();
    for row in &rows {
        let path = base.join(&row.path);
        let (times, channels) = read_trial(&path)?;
        let this = (channels.len(), times.len());
        if *shape.get_or_insert(this) != this {
            return Err(CoreError::InvalidArgument(format!(
                "{}: {} channels × {} samples, expected {:?}",
                path.display(),
                this.0,
                this.1,
                shape
            )));
        }
        if times.len() < 2 {
            return Err(CoreError::InvalidArgument(format!("{}: need at least two samples", path.display())));
        }
        let trial_rate = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
        if !(trial_rate.is_finite() && trial_rate > 0.0) {
            return Err(CoreError::InvalidArgument(format!("{}: `t` must increase", path.display())));
        }
        let r = *rate.get_or_insert(trial_rate);
        if (r - trial_rate).abs() > 1e-6 * r {
            return Err(CoreError::InvalidArgument(format!(
                "{}: sampled at {trial_rate} Hz, expected {r} Hz",
                path.display()
            )));
        }
        data.extend(channels.into_iter().flatten());
    }
    let (c, l) = shape.expect("at least one trial");
    let x = Tensor::new(&[rows.len(), c, l, 1], data)?;
    EpochedDataset::new(
        x,
        rows.iter().map(|r| r.label).collect(),
        rows.iter().map(|r| r.subject).collect(),
        rate.expect("at least one trial") as f32,
    )
}
