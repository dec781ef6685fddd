//! Named parameter storage and the checkpoint archive format.
//!
//! Checkpoint layout (all integers u32 little-endian):
//!
//! ```text
//! "PGCK" | version=1 | json_len | json bytes (model config)
//! count | count × { name_len | name (utf-8) | rows | cols | rows*cols × f32 LE }
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    /// Dense index in insertion order.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<F> {
    name: String,
    value: Tensor<F>,
    trainable: bool,
}

/// Flat collection of named tensors. Buffers such as batch-norm running
/// statistics live here too, flagged as non-trainable.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<F>, trainable: bool) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, name: &str, value: Tensor<F>) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<F>) -> ParamId {
        self.insert(name, value, false)
    }

    /// Uniform(-1/√fan_in, 1/√fan_in), the usual default for linear layers.
    pub fn add_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| F::lit(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn add_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| F::lit(normal.sample(rng))).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    pub fn write_checkpoint(&self, path: &Path, config_json: &str) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(config_json.as_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.name.as_bytes());
            buf.extend_from_slice(&(e.value.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(e.value.cols() as u32).to_le_bytes());
            for &x in e.value.data() {
                buf.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Loads values into an already-constructed store. Names and shapes must match.
    /// Returns the embedded config JSON.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<String> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let file = path.display().to_string();
        let mut cur = ByteCursor::new(&bytes, &file);
        let magic = cur.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(cur.error_at(0, "bad checkpoint magic"));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(cur.error_at(4, format!("unsupported checkpoint version {version}")));
        }
        let json_len = cur.u32()? as usize;
        let json = String::from_utf8(cur.take(json_len)?.to_vec()).map_err(|_| cur.error("config is not utf-8"))?;
        let count = cur.u32()? as usize;
        let mut loaded: Vec<(ParamId, Tensor<F>)> = Vec::with_capacity(count);
        for _ in 0..count {
            let at = cur.pos() as u64;
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| cur.error("parameter name is not utf-8"))?;
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let raw = cur.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| F::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            let id = self
                .id(&name)
                .ok_or_else(|| cur.error_at(at, format!("unknown parameter {name}")))?;
            if self.get(id).shape() != (rows, cols) {
                return Err(cur.error_at(at, format!("shape mismatch for {name}")));
            }
            loaded.push((id, Tensor::from_vec(rows, cols, data)));
        }
        if loaded.len() != self.entries.len() {
            return Err(cur.error("checkpoint does not cover every parameter"));
        }
        for (id, t) in loaded {
            *self.get_mut(id) = t;
        }
        Ok(json)
    }
}

/// Reads the config JSON embedded in a checkpoint without loading tensors.
pub fn read_checkpoint_config(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut cur = ByteCursor::new(&bytes, &file);
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(cur.error_at(0, "bad checkpoint magic"));
    }
    cur.u32()?;
    let n = cur.u32()? as usize;
    String::from_utf8(cur.take(n)?.to_vec()).map_err(|_| cur.error("config is not utf-8"))
}

/// Little-endian reader that reports byte offsets on failure.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], file: &'a str) -> Self {
        Self { bytes, pos: 0, file }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> Error {
        self.error_at(self.pos as u64, msg)
    }

    pub(crate) fn error_at(&self, offset: u64, msg: impl Into<String>) -> Error {
        Error::Format {
            file: self.file.to_string(),
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "unexpected end of data: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn checkpoint_roundtrip_preserves_f32_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        store.add_uniform("enc.w", 3, 4, 3, &mut rng);
        store.add_buffer("enc.bn.mean", Tensor::filled(1, 4, 0.25));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        store.write_checkpoint(&path, "{\"a\":1}").unwrap();

        let mut other = ParamStore::<f32>::new();
        other.add("enc.w", Tensor::zeros(3, 4));
        other.add_buffer("enc.bn.mean", Tensor::zeros(1, 4));
        let json = other.load_checkpoint(&path).unwrap();
        assert_eq!(json, "{\"a\":1}");
        for id in store.ids() {
            assert_eq!(store.get(id), other.get(id));
        }
        assert_eq!(read_checkpoint_config(&path).unwrap(), json);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(2, 2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        store.write_checkpoint(&path, "{}").unwrap();
        let mut other = ParamStore::<f32>::new();
        other.add("w", Tensor::zeros(2, 3));
        assert!(matches!(other.load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
