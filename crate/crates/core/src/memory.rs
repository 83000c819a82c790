//! Episodic key-value memory.
//!
//! Keys come from a frozen copy of the randomly initialised encoder. Writes
//! are random with a fixed probability, replay samples uniformly without
//! replacement, and retrieval is an exact Euclidean scan. The store is
//! append-only, so any prefix of it is the memory as it was at some earlier
//! point of training.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{encode, Dropout, ModelConfig, ParamVector, TaskMode, TokenSequence};
use crate::rng::{derive_rng, DOMAIN_WRITE};

pub const DEFAULT_NEIGHBORS: usize = 32;

const MAGIC: &[u8; 4] = b"LLLM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub key: Vec<f32>,
    pub value: Example,
    pub index: u64,
}

/// Encoder with parameters fixed at construction.
#[derive(Clone, Debug)]
pub struct KeyNetwork {
    cfg: ModelConfig,
    params: ParamVector,
}

impl KeyNetwork {
    pub fn new(cfg: ModelConfig, params: ParamVector) -> Self {
        Self { cfg, params }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.cfg.hidden_dim
    }

    /// First-position state of the document, or of `[BOS] question` for QA.
    pub fn compute_key(&self, x: &Example) -> Result<Vec<f32>> {
        let input = match self.cfg.task {
            TaskMode::Classification => x.input.clone(),
            TaskMode::Span => {
                let q = x
                    .input
                    .question()
                    .ok_or_else(|| Error::InvalidInput("QA key requires a question-answer sequence".into()))?;
                if q.is_empty() {
                    return Err(Error::InvalidInput("QA example has an empty question".into()));
                }
                TokenSequence::document(q)
            }
        };
        let h = encode(&self.cfg, &self.params, &input, Dropout::Off)?;
        Ok(h.row(0).iter().map(|&v| v as f32).collect())
    }
}

/// Stores each candidate independently with probability `p_write`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WritePolicy {
    pub p_write: f64,
    pub seed: u64,
}

impl WritePolicy {
    pub fn new(p_write: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_write) {
            return Err(Error::Config(format!("write probability {p_write} outside [0, 1]")));
        }
        Ok(Self { p_write, seed })
    }

    /// Decision for the candidate at stream position `position`.
    pub fn decide(&self, position: u64) -> bool {
        derive_rng(self.seed, DOMAIN_WRITE, position).gen_bool(self.p_write)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WriteOutcome {
    Stored(u64),
    Skipped,
}

#[derive(Clone, Copy, Debug)]
pub struct Neighbor<'a> {
    pub entry: &'a MemoryEntry,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodicMemory {
    d_key: usize,
    capacity: Option<usize>,
    entries: Vec<MemoryEntry>,
    next_index: u64,
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

impl EpisodicMemory {
    pub fn new(d_key: usize, capacity: Option<usize>) -> Self {
        Self { d_key, capacity, entries: Vec::new(), next_index: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn d_key(&self) -> usize {
        self.d_key
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Appends unconditionally, subject to the capacity limit.
    pub fn insert(&mut self, key: Vec<f32>, value: Example) -> Result<u64> {
        if key.len() != self.d_key {
            return Err(Error::InvalidInput(format!("key dim {} != {}", key.len(), self.d_key)));
        }
        if let Some(capacity) = self.capacity {
            if self.entries.len() >= capacity {
                return Err(Error::CapacityExceeded { capacity });
            }
        }
        let index = self.next_index;
        self.entries.push(MemoryEntry { key, value, index });
        self.next_index += 1;
        Ok(index)
    }

    /// Applies the write policy to the candidate seen at `position`; the key
    /// is computed only when the candidate is kept.
    pub fn write(&mut self, keys: &KeyNetwork, x: &Example, policy: &WritePolicy, position: u64) -> Result<WriteOutcome> {
        if !policy.decide(position) {
            return Ok(WriteOutcome::Skipped);
        }
        if let Some(capacity) = self.capacity {
            if self.entries.len() >= capacity {
                return Err(Error::CapacityExceeded { capacity });
            }
        }
        let key = keys.compute_key(x)?;
        self.insert(key, x.clone()).map(WriteOutcome::Stored)
    }

    /// `min(s, len)` distinct entries, uniformly without replacement.
    pub fn sample_uniform<R: Rng>(&self, s: usize, rng: &mut R) -> Vec<&MemoryEntry> {
        let n = s.min(self.entries.len());
        if n == 0 {
            return Vec::new();
        }
        index::sample(rng, self.entries.len(), n).into_iter().map(|i| &self.entries[i]).collect()
    }

    /// Exact `k` nearest entries by Euclidean distance; ties go to the lower
    /// insertion index.
    pub fn knn(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor<'_>>> {
        if self.entries.is_empty() {
            return Err(Error::RetrievalUnavailable);
        }
        if k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        if query.len() != self.d_key {
            return Err(Error::InvalidInput(format!("query dim {} != {}", query.len(), self.d_key)));
        }
        let mut scored: Vec<(f64, usize)> =
            self.entries.iter().enumerate().map(|(i, e)| (squared_distance(query, &e.key), i)).collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored.into_iter().map(|(d, i)| Neighbor { entry: &self.entries[i], distance: d.sqrt() }).collect())
    }

    /// The memory as it was when it held its first `len` entries.
    pub fn prefix(&self, len: usize) -> Self {
        let entries = self.entries[..len.min(self.entries.len())].to_vec();
        let next_index = entries.last().map_or(0, |e| e.index + 1);
        Self { d_key: self.d_key, capacity: self.capacity, entries, next_index }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_key as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for k in &e.key {
                out.extend_from_slice(&k.to_le_bytes());
            }
            let value = serde_json::to_vec(&e.value)?;
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
            out.extend_from_slice(&value);
            out.extend_from_slice(&e.index.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8], capacity: Option<usize>) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("memory snapshot: {m}"));
        let mut magic = [0u8; 4];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut bytes)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let d_key = read_u32(&mut bytes)? as usize;
        let count = read_u64(&mut bytes)? as usize;
        let mut memory = Self::new(d_key, capacity);
        let mut last: Option<u64> = None;
        for _ in 0..count {
            let key = (0..d_key).map(|_| read_u32(&mut bytes).map(f32::from_bits)).collect::<Result<Vec<_>>>()?;
            let len = read_u32(&mut bytes)? as usize;
            if bytes.len() < len {
                return Err(bad("truncated entry"));
            }
            let value: Example = serde_json::from_slice(&bytes[..len])?;
            bytes = &bytes[len..];
            let index = read_u64(&mut bytes)?;
            if last.is_some_and(|l| index <= l) {
                return Err(bad("insertion indices not increasing"));
            }
            last = Some(index);
            memory.entries.push(MemoryEntry { key, value, index });
            memory.next_index = index + 1;
        }
        if !bytes.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(memory)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, capacity: Option<usize>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, capacity)
    }
}

fn read_u32(b: &mut &[u8]) -> Result<u32> {
    let mut buf = [0u8; 4];
    b.read_exact(&mut buf).map_err(|_| Error::Format("memory snapshot: truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(b: &mut &[u8]) -> Result<u64> {
    let mut buf = [0u8; 8];
    b.read_exact(&mut buf).map_err(|_| Error::Format("memory snapshot: truncated".into()))?;
    Ok(u64::from_le_bytes(buf))
}
