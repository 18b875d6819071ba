//! Weight files (`.bnw`).
//!
//! Little-endian layout:
//!
//! | bytes   | content                                          |
//! |---------|--------------------------------------------------|
//! | 4       | magic `BNWT`                                     |
//! | 2       | format version (`u16`, = 1)                      |
//! | 4 + n   | architecture as JSON (`u32` length, UTF-8)       |
//! | 4       | entry count (`u32`)                              |
//! | entries | kind `u8` (0 parameter, 1 buffer), name (`u16` length, UTF-8), rank `u8`, dims `u32` each, values `f32` |
//!
//! Entries are written in name order, parameters before buffers, so equal
//! models give equal files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bwnet_core::{DistributedConfig, DistributedModel, Stage};
use bwnet_tensor::{ParamStore, RngState, Tensor};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"BNWT";
pub const VERSION: u16 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

/// File name of a schedule stage's checkpoint, `stage{1..4}.bnw`.
pub fn checkpoint_name(stage: Stage) -> Option<String> {
    stage.checkpoint_index().map(|i| format!("stage{i}.bnw"))
}

fn put_tensor(out: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor) -> Result<()> {
    out.push(kind);
    let len = u16::try_from(name.len()).map_err(|_| HarnessError::Config(format!("parameter name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_store(store: &ParamStore, architecture: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(architecture.len() as u32).to_le_bytes());
    out.extend_from_slice(architecture.as_bytes());
    let count = store.params().count() + store.buffers().count();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in store.params() {
        put_tensor(&mut out, KIND_PARAM, name, t)?;
    }
    for (name, t) in store.buffers() {
        put_tensor(&mut out, KIND_BUFFER, name, t)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.error(format!(
                "truncated {what}: needs {len} bytes, {} remain",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn error(&self, detail: String) -> HarnessError {
        HarnessError::Format {
            offset: self.pos as u64,
            detail,
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }

    fn utf8(&mut self, len: usize, what: &str) -> Result<String> {
        let at = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| HarnessError::Format {
            offset: at as u64,
            detail: format!("{what} is not UTF-8"),
        })
    }
}

/// The architecture string and the stored tensors.
pub fn decode_store(bytes: &[u8]) -> Result<(String, ParamStore)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(HarnessError::Format {
            offset: 0,
            detail: "missing BNWT magic bytes".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(HarnessError::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let arch_len = r.u32("architecture length")? as usize;
    let architecture = r.utf8(arch_len, "architecture")?;
    let count = r.u32("entry count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let kind = r.u8("entry kind")?;
        if kind != KIND_PARAM && kind != KIND_BUFFER {
            return Err(r.error(format!("unknown entry kind {kind}")));
        }
        let name_len = r.u16("name length")? as usize;
        let name = r.utf8(name_len, "name")?;
        let rank = r.u8("rank")? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<_>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.error(format!("{name}: dimensions {shape:?} overflow")))?;
        let values: Vec<f32> = r
            .take(n, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
            .collect();
        let t = Tensor::new(&shape, values)?;
        if kind == KIND_PARAM {
            store.insert(name, t);
        } else {
            store.insert_buffer(name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((architecture, store))
}

fn shapes<'a>(it: impl Iterator<Item = (&'a str, &'a Tensor)>) -> BTreeMap<String, Vec<usize>> {
    it.map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect()
}

fn compare(kind: &str, want: &BTreeMap<String, Vec<usize>>, got: &BTreeMap<String, Vec<usize>>, problems: &mut Vec<String>) {
    let missing: Vec<&str> = want.keys().filter(|k| !got.contains_key(*k)).map(String::as_str).collect();
    let unknown: Vec<&str> = got.keys().filter(|k| !want.contains_key(*k)).map(String::as_str).collect();
    if !missing.is_empty() {
        problems.push(format!("missing {kind}s: {}", missing.join(", ")));
    }
    if !unknown.is_empty() {
        problems.push(format!("unknown {kind}s: {}", unknown.join(", ")));
    }
    for (name, shape) in want {
        if let Some(other) = got.get(name).filter(|o| *o != shape) {
            problems.push(format!("{name}: expected shape {shape:?}, file has {other:?}"));
        }
    }
}

/// Replaces `target` with `loaded` if both hold exactly the same names and
/// shapes; otherwise lists every difference.
pub fn install_store(target: &mut ParamStore, loaded: ParamStore) -> Result<()> {
    let mut problems = Vec::new();
    compare("parameter", &shapes(target.params()), &shapes(loaded.params()), &mut problems);
    compare("buffer", &shapes(target.buffers()), &shapes(loaded.buffers()), &mut problems);
    if !problems.is_empty() {
        return Err(HarnessError::WeightMismatch(problems.join("; ")));
    }
    *target = loaded;
    Ok(())
}

pub fn save_weights(model: &DistributedModel, path: &Path) -> Result<()> {
    let architecture = serde_json::to_string(model.config())?;
    let bytes = encode_store(&model.store, &architecture)?;
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn read(path: &Path) -> Result<(DistributedConfig, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let (architecture, store) = decode_store(&bytes)?;
    Ok((serde_json::from_str(&architecture)?, store))
}

/// Rebuilds the model the file was saved from.
pub fn load_weights(path: &Path) -> Result<DistributedModel> {
    let (config, store) = read(path)?;
    // initial values are overwritten; the seed only has to be valid
    let mut model = DistributedModel::new(config, &mut RngState::new(0))?;
    install_store(&mut model.store, store)?;
    Ok(model)
}

/// Loads a file into an existing model, which must have the same
/// parameter names and shapes.
pub fn load_weights_into(model: &mut DistributedModel, path: &Path) -> Result<()> {
    let (_, store) = read(path)?;
    install_store(&mut model.store, store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("b.weight", Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5).unwrap());
        s.insert("a.bias", Tensor::new(&[1], vec![f32::MIN_POSITIVE]).unwrap());
        s.insert_running_stats("bn", 2).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_store(&store(), "{}").unwrap();
        let (arch, back) = decode_store(&bytes).unwrap();
        assert_eq!(arch, "{}");
        assert_eq!(back, store());
        assert_eq!(encode_store(&back, "{}").unwrap(), bytes);
    }

    #[test]
    fn corrupt_files() {
        let mut bytes = encode_store(&store(), "{}").unwrap();
        assert!(matches!(
            decode_store(&bytes[..bytes.len() - 1]),
            Err(HarnessError::Format { .. })
        ));
        bytes[4] = 7;
        assert!(matches!(
            decode_store(&bytes),
            Err(HarnessError::UnsupportedVersion { found: 7, .. })
        ));
        bytes[0] = b'Z';
        assert!(matches!(decode_store(&bytes), Err(HarnessError::Format { offset: 0, .. })));
    }

    #[test]
    fn mismatch_lists_names() {
        let mut target = store();
        let mut other = ParamStore::new();
        other.insert("b.weight", Tensor::zeros(&[3, 2]).unwrap());
        other.insert("c.extra", Tensor::zeros(&[1]).unwrap());
        let err = install_store(&mut target, other).unwrap_err().to_string();
        for needle in ["a.bias", "c.extra", "b.weight", "bn.running_mean"] {
            assert!(err.contains(needle), "{err}");
        }
        assert_eq!(target, store());
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_name(Stage::Local).as_deref(), Some("stage1.bnw"));
        assert_eq!(checkpoint_name(Stage::FullFuse).as_deref(), Some("stage4.bnw"));
        assert_eq!(checkpoint_name(Stage::AutoEncoder), None);
    }
}
