use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Shape, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLRDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Initialization scheme for a registered tensor.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Kaiming-style normal: std = sqrt(2 / fan_in).
    KaimingNormal { fan_in: usize },
    Zeros,
    Constant(f64),
}

struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors with deterministic iteration order and a seeded
/// RNG for initialization. Gradients live alongside the values and accumulate
/// until [`ParameterStore::zero_grads`] or an SGD step clears them.
pub struct ParameterStore {
    seed: u64,
    rng: ChaCha8Rng,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    /// Free-form metadata carried inside checkpoints (for example the model
    /// configuration JSON).
    pub metadata: String,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
            index: HashMap::new(),
            metadata: String::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Register a tensor under a unique name. Draws from the store RNG in
    /// registration order, so a fixed registration sequence is reproducible.
    pub fn register(&mut self, name: &str, shape: Shape, init: Init) -> Result<(), TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..numel).map(|_| normal_sample(&mut self.rng) * std).collect()
            }
            Init::Zeros => vec![0.0; numel],
            Init::Constant(v) => vec![v; numel],
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Tensor { shape, data },
            grad: Tensor::zeros(shape),
        });
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize, TensorError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, TensorError> {
        Ok(&self.entries[self.index_of(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, TensorError> {
        let i = self.index_of(name)?;
        Ok(&mut self.entries[i].value)
    }

    pub fn grad_of(&self, name: &str) -> Result<&Tensor, TensorError> {
        Ok(&self.entries[self.index_of(name)?].grad)
    }

    /// Deterministic iteration in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn value_by_index(&self, i: usize) -> &Tensor {
        &self.entries[i].value
    }

    pub fn grad_by_index(&self, i: usize) -> &Tensor {
        &self.entries[i].grad
    }

    pub fn value_by_index_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].value
    }

    pub(crate) fn accumulate_grad_by_index(&mut self, i: usize, grad: &[f64]) {
        for (d, s) in self.entries[i].grad.data.iter_mut().zip(grad) {
            *d += s;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Any non-finite value or gradient anywhere in the store.
    pub fn has_non_finite(&self) -> bool {
        self.entries
            .iter()
            .any(|e| e.value.has_nan() || e.grad.has_nan())
    }

    /// Plain gradient step `p <- p - lr * grad`, then zero the gradients.
    pub fn sgd_step(&mut self, lr: f64) {
        for e in &mut self.entries {
            for (p, g) in e.value.data.iter_mut().zip(&e.grad.data) {
                *p -= lr * g;
            }
            e.grad.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    // ---- checkpoint ---------------------------------------------------------

    /// Flat binary checkpoint: magic, version, metadata, name table with
    /// shapes, then the little-endian f64 payloads in entry order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let meta = self.metadata.as_bytes();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            for d in e.value.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for e in &self.entries {
            for v in &e.value.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic bytes".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let seed = cur.u64()?;
        let meta_len = cur.u32()? as usize;
        let metadata = String::from_utf8(cur.take(meta_len)?.to_vec())
            .map_err(|_| TensorError::Checkpoint("metadata is not utf-8".into()))?;
        let count = cur.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| TensorError::Checkpoint("name is not utf-8".into()))?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = cur.u32()? as usize;
            }
            names.push((name, shape));
        }
        let mut store = ParameterStore::new(seed);
        store.metadata = metadata;
        for (name, shape) in names {
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            if store.index.contains_key(&name) {
                return Err(TensorError::DuplicateParameter(name));
            }
            store.index.insert(name.clone(), store.entries.len());
            store.entries.push(ParamEntry {
                name,
                value: Tensor { shape, data },
                grad: Tensor::zeros(shape),
            });
        }
        if cur.pos != bytes.len() {
            return Err(TensorError::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| TensorError::Checkpoint(format!("read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Box-Muller standard normal from two uniform draws.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
