//! One-pass training over an example stream.
//!
//! Every example takes part in exactly one base update. Depending on the
//! method, seen examples are written to the episodic memory, and each time
//! the examples-seen counter passes a multiple of the replay interval the
//! trainer either performs a replay update or refreshes the A-GEM reference
//! gradient. Replay fires at the first batch boundary at or after the
//! multiple, so the event count after `T` examples is `floor(T / R)`.

use std::fmt;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{shuffled_union, Dataset, Example};
use crate::error::{Error, Result};
use crate::memory::{EpisodicMemory, KeyNetwork, WriteOutcome, WritePolicy};
use crate::model::{
    adam_step, loss_grad, AdamConfig, AdamState, Dropout, ModelConfig, ParamVector, DEFAULT_LEARNING_RATE,
};
use crate::rng::{content_hash, derive_rng, mix, DOMAIN_DROPOUT, DOMAIN_REPLAY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "enc-dec")]
    EncDec,
    #[serde(rename = "replay")]
    Replay,
    #[serde(rename = "agem")]
    Agem,
    #[serde(rename = "mbpa")]
    Mbpa,
    #[serde(rename = "mbpa-rand")]
    MbpaRand,
    #[serde(rename = "mbpa++")]
    MbpaPlusPlus,
    #[serde(rename = "mtl")]
    Mtl,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::EncDec,
        Method::Agem,
        Method::Replay,
        Method::Mbpa,
        Method::MbpaRand,
        Method::MbpaPlusPlus,
        Method::Mtl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::EncDec => "enc-dec",
            Method::Replay => "replay",
            Method::Agem => "agem",
            Method::Mbpa => "mbpa",
            Method::MbpaRand => "mbpa-rand",
            Method::MbpaPlusPlus => "mbpa++",
            Method::Mtl => "mtl",
        }
    }

    pub fn uses_memory(self) -> bool {
        !matches!(self, Method::EncDec | Method::Mtl)
    }

    /// Whether replay updates run during training.
    pub fn replays(self, cfg: &TrainConfig) -> bool {
        match self {
            Method::Replay | Method::MbpaPlusPlus => true,
            Method::MbpaRand => cfg.mbpa_rand_replay,
            _ => false,
        }
    }

    pub fn projects(self) -> bool {
        self == Method::Agem
    }

    /// Whether inference uses local adaptation.
    pub fn adapts(self) -> bool {
        matches!(self, Method::Mbpa | Method::MbpaRand | Method::MbpaPlusPlus)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    /// Replay interval, in examples seen.
    pub replay_interval: u64,
    pub replay_size: usize,
    /// Optimizer updates per replay event, all on the same sample.
    pub replay_updates: usize,
    pub batch_size: usize,
    pub write_prob: f64,
    pub memory_capacity: Option<usize>,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop after this many base updates.
    pub max_steps: Option<u64>,
    /// mbpa-rand trains with replay unless this is off.
    pub mbpa_rand_replay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::MbpaPlusPlus,
            replay_interval: 10_000,
            replay_size: 100,
            replay_updates: 1,
            batch_size: 32,
            write_prob: 1.0,
            memory_capacity: None,
            learning_rate: DEFAULT_LEARNING_RATE,
            adam: AdamConfig::default(),
            seed: 0,
            max_steps: None,
            mbpa_rand_replay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replay_interval == 0 || self.replay_size == 0 || self.batch_size == 0 || self.replay_updates == 0 {
            return Err(Error::Config("replay interval, replay size, replay updates and batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.write_prob) {
            return Err(Error::Config(format!("write probability {} outside [0, 1]", self.write_prob)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCursor {
    /// Examples seen so far; also the stream position of the next batch.
    pub examples_seen: u64,
    pub replay_events: u64,
    /// Base updates taken.
    pub batches: u64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub examples_seen: u64,
    pub loss: f64,
    pub replay: bool,
    /// Examples in each replay update this batch triggered.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replay_batch: Vec<usize>,
    pub memory_size: usize,
}

/// `g` with its component along `g_ref` removed when the two disagree.
/// Returns whether the projection was applied.
pub fn agem_project(g: &[f64], g_ref: &[f64]) -> (Vec<f64>, bool) {
    let dot: f64 = g.iter().zip(g_ref).map(|(a, b)| a * b).sum();
    if dot >= 0.0 {
        return (g.to_vec(), false);
    }
    let rr: f64 = g_ref.iter().map(|r| r * r).sum();
    if rr == 0.0 {
        log::warn!("A-GEM reference gradient is zero; skipping projection");
        return (g.to_vec(), false);
    }
    let c = dot / rr;
    (g.iter().zip(g_ref).map(|(a, r)| a - c * r).collect(), true)
}

fn batch_digest(batch: &[Example]) -> String {
    let mut h = Sha256::new();
    for e in batch {
        h.update(content_hash(e.input.tokens()).to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Parameters, optimizer state and memory for one training run.
pub struct Trainer {
    model: ModelConfig,
    cfg: TrainConfig,
    params: ParamVector,
    adam: AdamState,
    keys: Option<KeyNetwork>,
    memory: Option<EpisodicMemory>,
    policy: WritePolicy,
    cursor: StreamCursor,
    agem_ref: Option<ParamVector>,
    log: Vec<LogRecord>,
    capacity_warned: bool,
}

impl Trainer {
    /// Fresh run. The key network is a frozen copy of the initial encoder.
    pub fn new(model: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        let params = ParamVector::init(&model, cfg.seed);
        let (keys, memory) = if cfg.method.uses_memory() {
            (
                Some(KeyNetwork::new(model.clone(), params.clone())),
                Some(EpisodicMemory::new(model.hidden_dim, cfg.memory_capacity)),
            )
        } else {
            (None, None)
        };
        let policy = WritePolicy::new(cfg.write_prob, cfg.seed)?;
        let adam = AdamState::new(params.len());
        Ok(Self {
            model,
            cfg,
            params,
            adam,
            keys,
            memory,
            policy,
            cursor: StreamCursor::default(),
            agem_ref: None,
            log: Vec::new(),
            capacity_warned: false,
        })
    }

    /// Continues from a checkpoint and, for memory methods, the memory
    /// snapshot written alongside it.
    pub fn resume(ckpt: Checkpoint, memory: Option<EpisodicMemory>) -> Result<Self> {
        let mut t = Self::new(ckpt.model, ckpt.train)?;
        if t.cfg.method.uses_memory() {
            t.memory = Some(memory.ok_or_else(|| Error::Config("resume needs the memory snapshot".into()))?);
        }
        t.params = ckpt.params;
        t.adam = ckpt.adam;
        t.cursor = ckpt.cursor;
        t.agem_ref = ckpt.agem_ref;
        Ok(t)
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn memory(&self) -> Option<&EpisodicMemory> {
        self.memory.as_ref()
    }

    pub fn key_network(&self) -> Option<&KeyNetwork> {
        self.keys.as_ref()
    }

    pub fn cursor(&self) -> StreamCursor {
        self.cursor
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<LogRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.cfg.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            cursor: self.cursor,
            agem_ref: self.agem_ref.clone(),
        }
    }

    pub fn into_parts(self) -> (ParamVector, Option<EpisodicMemory>, Vec<LogRecord>) {
        (self.params, self.memory, self.log)
    }

    fn step_limit_reached(&self) -> bool {
        self.cfg.max_steps.is_some_and(|m| self.cursor.batches >= m)
    }

    /// Trains on `stream` from the cursor until at least `until` examples
    /// have been seen, the stream ends, or the step limit is hit.
    pub fn run_until(&mut self, stream: &[Example], until: usize) -> Result<()> {
        let end = until.min(stream.len()) as u64;
        while self.cursor.examples_seen < end && !self.step_limit_reached() {
            let start = self.cursor.examples_seen as usize;
            let stop = (start + self.cfg.batch_size).min(stream.len());
            self.train_batch(&stream[start..stop])?;
        }
        Ok(())
    }

    pub fn run(&mut self, stream: &[Example]) -> Result<()> {
        self.run_until(stream, stream.len())
    }

    fn numerical(&self, e: Error, batch: &[Example]) -> Error {
        if e.is_numerical() {
            Error::NonFiniteLoss { step: self.adam.step, batch_digest: batch_digest(batch) }
        } else {
            e
        }
    }

    fn train_batch(&mut self, batch: &[Example]) -> Result<()> {
        let seed = mix(self.cfg.seed, DOMAIN_DROPOUT, self.cursor.batches);
        let (loss, mut grad) =
            loss_grad(&self.model, &self.params, batch, Dropout::Seeded(seed)).map_err(|e| self.numerical(e, batch))?;
        if let Some(r) = self.agem_ref.as_ref().filter(|_| self.cfg.method.projects()) {
            let (projected, _) = agem_project(grad.values(), r.values());
            grad.values_mut().copy_from_slice(&projected);
        }
        adam_step(&mut self.params, &grad, &mut self.adam, self.cfg.learning_rate, &self.cfg.adam)
            .map_err(|e| self.numerical(e, batch))?;

        if let (Some(memory), Some(keys)) = (self.memory.as_mut(), self.keys.as_ref()) {
            for (i, x) in batch.iter().enumerate() {
                match memory.write(keys, x, &self.policy, self.cursor.examples_seen + i as u64) {
                    Ok(WriteOutcome::Stored(_)) | Ok(WriteOutcome::Skipped) => {}
                    Err(Error::CapacityExceeded { capacity }) => {
                        if !self.capacity_warned {
                            log::warn!("memory full at {capacity} entries; further writes refused");
                            self.capacity_warned = true;
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        self.cursor.examples_seen += batch.len() as u64;
        self.cursor.batches += 1;

        let mut replay_batch = Vec::new();
        let mut fired = false;
        while self.cfg.method.uses_memory() && self.cursor.examples_seen / self.cfg.replay_interval > self.cursor.replay_events {
            let event = self.cursor.replay_events;
            self.cursor.replay_events += 1;
            fired = true;
            replay_batch.extend(self.replay_event(event)?);
        }
        self.log.push(LogRecord {
            step: self.adam.step,
            examples_seen: self.cursor.examples_seen,
            loss,
            replay: fired,
            replay_batch,
            memory_size: self.memory.as_ref().map_or(0, EpisodicMemory::len),
        });
        Ok(())
    }

    /// Replay update(s) or A-GEM reference refresh for event number `event`.
    /// Returns the replay batch size of each update performed.
    fn replay_event(&mut self, event: u64) -> Result<Vec<usize>> {
        let method = self.cfg.method;
        if !method.replays(&self.cfg) && !method.projects() {
            return Ok(Vec::new());
        }
        let memory = self.memory.as_ref().expect("memory methods own a memory");
        let mut rng = derive_rng(self.cfg.seed, DOMAIN_REPLAY, event);
        let sample: Vec<Example> =
            memory.sample_uniform(self.cfg.replay_size, &mut rng).into_iter().map(|e| e.value.clone()).collect();
        if sample.is_empty() {
            log::info!("replay event {event}: memory empty, nothing to do");
            return Ok(Vec::new());
        }
        let dropout = Dropout::Seeded(mix(self.cfg.seed, DOMAIN_REPLAY, event));
        if method.projects() {
            let (_, g) = loss_grad(&self.model, &self.params, &sample, dropout).map_err(|e| self.numerical(e, &sample))?;
            self.agem_ref = Some(g);
            return Ok(Vec::new());
        }
        let mut sizes = Vec::new();
        for _ in 0..self.cfg.replay_updates {
            let (_, g) = loss_grad(&self.model, &self.params, &sample, dropout).map_err(|e| self.numerical(e, &sample))?;
            adam_step(&mut self.params, &g, &mut self.adam, self.cfg.learning_rate, &self.cfg.adam)
                .map_err(|e| self.numerical(e, &sample))?;
            sizes.push(sample.len());
        }
        Ok(sizes)
    }
}

/// Result of a complete training run.
pub struct TrainOutput {
    pub params: ParamVector,
    pub memory: Option<EpisodicMemory>,
    pub log: Vec<LogRecord>,
}

pub fn train_stream(model: &ModelConfig, cfg: &TrainConfig, stream: &[Example]) -> Result<TrainOutput> {
    let mut t = Trainer::new(model.clone(), cfg.clone())?;
    t.run(stream)?;
    let (params, memory, log) = t.into_parts();
    Ok(TrainOutput { params, memory, log })
}

/// Trains on a seeded global shuffle of every training split, without
/// memory or replay.
pub fn train_mtl(model: &ModelConfig, cfg: &TrainConfig, datasets: &[Dataset<Example>]) -> Result<TrainOutput> {
    let stream = shuffled_union(datasets, cfg.seed);
    train_stream(model, &TrainConfig { method: Method::Mtl, ..cfg.clone() }, &stream)
}

const CKPT_MAGIC: &[u8; 4] = b"LLLC";
const CKPT_VERSION: u32 = 1;

/// Everything needed to continue or evaluate a run, except the memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamVector,
    pub adam: AdamState,
    pub cursor: StreamCursor,
    pub agem_ref: Option<ParamVector>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    train: TrainConfig,
    cursor: StreamCursor,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn take<'a>(b: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if b.len() < n {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (head, rest) = b.split_at(n);
    *b = rest;
    Ok(head)
}

fn take_u64(b: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(b, 8)?.try_into().unwrap()))
}

fn take_f64s(b: &mut &[u8]) -> Result<Vec<f64>> {
    let n = take_u64(b)? as usize;
    let raw = take(b, n.checked_mul(8).ok_or_else(|| Error::Format("checkpoint length overflow".into()))?)?;
    Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

impl Checkpoint {
    /// sha256 of the serialised model and training configuration.
    pub fn config_digest(model: &ModelConfig, train: &TrainConfig) -> Result<[u8; 32]> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(model)?);
        h.update(serde_json::to_vec(train)?);
        Ok(h.finalize().into())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            model: self.model.clone(),
            train: self.train.clone(),
            cursor: self.cursor,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&Self::config_digest(&self.model, &self.train)?);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        put_f64s(&mut out, self.params.values());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        put_f64s(&mut out, &self.adam.m);
        put_f64s(&mut out, &self.adam.v);
        match &self.agem_ref {
            Some(r) => {
                out.push(1);
                put_f64s(&mut out, r.values());
            }
            None => out.push(0),
        }
        Ok(out)
    }

    pub fn from_bytes(mut b: &[u8]) -> Result<Self> {
        if take(&mut b, 4)? != CKPT_MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(&mut b, 4)?.try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let digest: [u8; 32] = take(&mut b, 32)?.try_into().unwrap();
        let n = take_u64(&mut b)? as usize;
        let header: CheckpointHeader = serde_json::from_slice(take(&mut b, n)?)?;
        if Self::config_digest(&header.model, &header.train)? != digest {
            return Err(Error::Format("checkpoint config digest mismatch".into()));
        }
        let params = ParamVector::from_values(&header.model, take_f64s(&mut b)?)?;
        let step = take_u64(&mut b)?;
        let m = take_f64s(&mut b)?;
        let v = take_f64s(&mut b)?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Format("optimizer state does not match parameters".into()));
        }
        let agem_ref = match take(&mut b, 1)?[0] {
            0 => None,
            1 => Some(ParamVector::from_values(&header.model, take_f64s(&mut b)?)?),
            _ => return Err(Error::Format("bad reference-gradient flag".into())),
        };
        if !b.is_empty() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Self {
            model: header.model,
            train: header.train,
            params,
            adam: AdamState { step, m, v },
            cursor: header.cursor,
            agem_ref,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_log(path: &Path, records: &[LogRecord], append: bool) -> Result<()> {
    let file = std::fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExampleText;
    use crate::model::{Target, TokenSequence};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn tiny() -> ModelConfig {
        ModelConfig { vocab_size: 12, embed_dim: 3, hidden_dim: 3, depth: 1, num_classes: 4, ..ModelConfig::default() }
    }

    fn stream(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                input: TokenSequence::document(&[3 + (i % 4) as u32, 7 + (i % 5) as u32]),
                target: Target::Class(i % 4),
                text: ExampleText::Document { text: String::new() },
            })
            .collect()
    }

    fn cfg(method: Method, r: u64, batch: usize) -> TrainConfig {
        TrainConfig { method, replay_interval: r, batch_size: batch, learning_rate: 1e-2, ..TrainConfig::default() }
    }

    #[test]
    fn replay_event_count_is_floor_t_over_r() {
        let data = stream(25_000);
        for (t, expected) in [(25_000, 2), (10_000, 1), (9_999, 0)] {
            let mut tr = Trainer::new(tiny(), TrainConfig { write_prob: 0.01, ..cfg(Method::Replay, 10_000, 128) }).unwrap();
            tr.run(&data[..t]).unwrap();
            assert_eq!(tr.cursor().replay_events, expected, "T={t}");
            assert_eq!(tr.cursor().examples_seen, t as u64);
            let events: usize = tr.log().iter().map(|r| r.replay_batch.len()).sum();
            assert_eq!(events as u64, expected);
        }
    }

    #[test]
    fn every_example_gets_one_base_update() {
        let data = stream(103);
        let mut tr = Trainer::new(tiny(), cfg(Method::MbpaPlusPlus, 20, 10)).unwrap();
        tr.run(&data).unwrap();
        assert_eq!(tr.cursor().batches, 11);
        assert_eq!(tr.log().last().unwrap().examples_seen, 103);
        assert_eq!(tr.cursor().replay_events, 5);
        assert_eq!(tr.memory().unwrap().len(), 103);
    }

    #[test]
    fn enc_dec_has_no_memory_or_replay() {
        let data = stream(300);
        let mut tr = Trainer::new(tiny(), cfg(Method::EncDec, 50, 10)).unwrap();
        tr.run(&data).unwrap();
        assert!(tr.memory().is_none());
        assert_eq!(tr.cursor().replay_events, 0);
        assert!(tr.log().iter().all(|r| !r.replay && r.memory_size == 0));
    }

    #[test]
    fn mbpa_writes_but_never_replays() {
        let data = stream(100);
        let mut tr = Trainer::new(tiny(), cfg(Method::Mbpa, 10, 10)).unwrap();
        tr.run(&data).unwrap();
        assert_eq!(tr.memory().unwrap().len(), 100);
        assert!(tr.log().iter().all(|r| r.replay_batch.is_empty()));
        let mut off = Trainer::new(tiny(), TrainConfig { mbpa_rand_replay: false, ..cfg(Method::MbpaRand, 10, 10) }).unwrap();
        off.run(&data).unwrap();
        assert!(off.log().iter().all(|r| r.replay_batch.is_empty()));
    }

    #[test]
    fn replay_batch_is_clamped_to_memory_size() {
        let data = stream(40);
        let mut tr = Trainer::new(tiny(), TrainConfig { replay_size: 100, ..cfg(Method::Replay, 40, 40) }).unwrap();
        tr.run(&data).unwrap();
        assert_eq!(tr.log()[0].replay_batch, vec![40]);
        // Empty memory: event fires but does nothing.
        let mut empty = Trainer::new(tiny(), TrainConfig { write_prob: 0.0, ..cfg(Method::Replay, 10, 10) }).unwrap();
        empty.run(&data).unwrap();
        assert_eq!(empty.cursor().replay_events, 4);
        assert_eq!(empty.cursor().batches, empty.checkpoint().adam.step);
    }

    #[test]
    fn replay_is_exactly_one_adam_step() {
        let data = stream(20);
        let with = cfg(Method::Replay, 20, 20);
        let mut a = Trainer::new(tiny(), TrainConfig { replay_interval: 1_000, ..with.clone() }).unwrap();
        a.run(&data).unwrap();
        let mut b = Trainer::new(tiny(), with.clone()).unwrap();
        b.run(&data).unwrap();
        assert_eq!(b.checkpoint().adam.step, 2);

        let mut rng = derive_rng(with.seed, DOMAIN_REPLAY, 0);
        let sample: Vec<Example> =
            a.memory().unwrap().sample_uniform(with.replay_size, &mut rng).into_iter().map(|e| e.value.clone()).collect();
        let (_, g) = loss_grad(&tiny(), a.params(), &sample, Dropout::Seeded(mix(with.seed, DOMAIN_REPLAY, 0))).unwrap();
        let mut params = a.params().clone();
        let mut adam = a.checkpoint().adam;
        adam_step(&mut params, &g, &mut adam, with.learning_rate, &with.adam).unwrap();
        assert_eq!(params, *b.params());
        // No coordinate moves more than a few learning rates in one step.
        let max = params.values().iter().zip(a.params().values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max <= 3.0 * with.learning_rate);
    }

    #[test]
    fn agem_hand_cases() {
        assert_eq!(agem_project(&[1.0, 0.0], &[-1.0, 0.0]), (vec![0.0, 0.0], true));
        assert_eq!(agem_project(&[1.0, 1.0], &[-1.0, 0.0]), (vec![0.0, 1.0], true));
        assert_eq!(agem_project(&[2.0, 3.0], &[2.0, 3.0]), (vec![2.0, 3.0], false));
        assert_eq!(agem_project(&[2.0, 3.0], &[0.0, 0.0]), (vec![2.0, 3.0], false));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn agem_projection_properties(g in proptest::collection::vec(-10.0f64..10.0, 8), r in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let (p, projected) = agem_project(&g, &r);
            let dot: f64 = g.iter().zip(&r).map(|(a, b)| a * b).sum();
            if dot >= 0.0 {
                prop_assert!(!projected);
                prop_assert_eq!(p, g);
            } else {
                let pr: f64 = p.iter().zip(&r).map(|(a, b)| a * b).sum();
                let np = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(pr.abs() <= 1e-6 * np * nr + 1e-12);
            }
        }
    }

    #[test]
    fn agem_reference_set_at_replay_points() {
        let data = stream(60);
        let mut tr = Trainer::new(tiny(), cfg(Method::Agem, 30, 10)).unwrap();
        tr.run_until(&data, 20).unwrap();
        assert!(tr.checkpoint().agem_ref.is_none());
        tr.run(&data).unwrap();
        assert!(tr.checkpoint().agem_ref.is_some());
        assert_eq!(tr.checkpoint().adam.step, 6);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data = stream(95);
        for method in [Method::MbpaPlusPlus, Method::Agem, Method::EncDec] {
            let c = cfg(method, 25, 10);
            let mut full = Trainer::new(tiny(), c.clone()).unwrap();
            full.run(&data).unwrap();
            let mut first = Trainer::new(tiny(), c.clone()).unwrap();
            first.run_until(&data, 42).unwrap();
            let ckpt = Checkpoint::from_bytes(&first.checkpoint().to_bytes().unwrap()).unwrap();
            let mem = first.memory().map(|m| EpisodicMemory::from_bytes(&m.to_bytes().unwrap(), None).unwrap());
            let mut resumed = Trainer::resume(ckpt, mem).unwrap();
            resumed.run(&data).unwrap();
            assert_eq!(resumed.checkpoint().to_bytes().unwrap(), full.checkpoint().to_bytes().unwrap());
            assert_eq!(resumed.memory(), full.memory());
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let mut tr = Trainer::new(tiny(), cfg(Method::Replay, 10, 10)).unwrap();
        tr.run(&stream(20)).unwrap();
        let bytes = tr.checkpoint().to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), tr.checkpoint());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[10] ^= 1;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn max_steps_stops_early() {
        let mut tr = Trainer::new(tiny(), TrainConfig { max_steps: Some(3), ..cfg(Method::EncDec, 10, 10) }).unwrap();
        tr.run(&stream(100)).unwrap();
        assert_eq!(tr.cursor().examples_seen, 30);
    }

    #[test]
    fn divergence_reports_step_and_digest() {
        let c = TrainConfig { learning_rate: 1e306, ..cfg(Method::EncDec, 10, 10) };
        let mut tr = Trainer::new(ModelConfig { init_scale: 1.0, ..tiny() }, c).unwrap();
        match tr.run(&stream(200)) {
            Err(Error::NonFiniteLoss { batch_digest, .. }) => assert_eq!(batch_digest.len(), 16),
            other => panic!("expected non-finite loss, got {:?}", other.err()),
        }
    }

    #[test]
    fn mtl_is_a_seeded_shuffle() {
        let ds = vec![
            Dataset { name: "a".into(), train: stream(30), test: vec![] },
            Dataset { name: "b".into(), train: stream(30), test: vec![] },
        ];
        let c = cfg(Method::Mtl, 10, 10);
        let a = train_mtl(&tiny(), &c, &ds).unwrap();
        let b = train_mtl(&tiny(), &c, &ds).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.memory.is_none());
        assert_eq!(a.log.len(), 6);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("bert".parse::<Method>().is_err());
    }
}
