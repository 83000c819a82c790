use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mixing, ModelConfig, TaskMode};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, DOMAIN_INIT};

/// A named, contiguous slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Offsets of one encoder layer's weights. Matrices are row-major
/// `[hidden_dim, in_dim]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub in_dim: usize,
    pub self_w: usize,
    pub prev_w: usize,
    pub mix_w: usize,
    pub query_w: Option<usize>,
    pub key_w: Option<usize>,
    pub bias: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
    pub(crate) embedding: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) head: usize,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize| {
            let at = offset;
            segments.push(Segment { name, offset: at, len });
            offset += len;
            at
        };
        let embedding = push("embedding".into(), cfg.vocab_size * cfg.embed_dim);
        let mut layers = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let in_dim = if l == 0 { cfg.embed_dim } else { cfg.hidden_dim };
            let m = cfg.hidden_dim * in_dim;
            let self_w = push(format!("encoder.{l}.self"), m);
            let prev_w = push(format!("encoder.{l}.prev"), m);
            let mix_w = push(format!("encoder.{l}.mix"), m);
            let (query_w, key_w) = match cfg.mixing {
                Mixing::MeanPool => (None, None),
                Mixing::Attention => (
                    Some(push(format!("encoder.{l}.query"), m)),
                    Some(push(format!("encoder.{l}.key"), m)),
                ),
            };
            let bias = push(format!("encoder.{l}.bias"), cfg.hidden_dim);
            layers.push(LayerOffsets { in_dim, self_w, prev_w, mix_w, query_w, key_w, bias });
        }
        let head = match cfg.task {
            TaskMode::Classification => push("head.class".into(), cfg.num_classes * cfg.hidden_dim),
            TaskMode::Span => push("head.span".into(), 2 * cfg.hidden_dim),
        };
        Self { segments, embedding, layers, head, total: offset }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Segment containing flat index `i`.
    pub fn segment_of(&self, i: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| i >= s.offset && i < s.offset + s.len)
    }

    /// Segments whose name starts with `encoder.` or equals `embedding`.
    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        0..self.head
    }
}

/// All trainable parameters as one flat vector plus its segment map.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = Arc::new(Layout::new(cfg));
        Self { values: vec![0.0; layout.total_len()], layout }
    }

    /// Uniform(-s, s) initialisation, one derived stream per segment.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let s = cfg.init_scale;
        let layout = p.layout.clone();
        for (k, seg) in layout.segments().iter().enumerate() {
            let mut rng = derive_rng(seed, DOMAIN_INIT, k as u64);
            for v in &mut p.values[seg.offset..seg.offset + seg.len] {
                *v = if s > 0.0 { rng.gen_range(-s..s) } else { 0.0 };
            }
        }
        p
    }

    pub fn from_values(cfg: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        let layout = Arc::new(Layout::new(cfg));
        if values.len() != layout.total_len() {
            return Err(Error::Format(format!(
                "parameter count {} does not match model ({})",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], layout: self.layout.clone() }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let seg = self.layout.segment(name)?.clone();
        Some(&mut self.values[seg.offset..seg.offset + seg.len])
    }

    /// First segment holding a non-finite value, if any.
    pub fn check_finite(&self) -> Result<()> {
        for seg in self.layout.segments() {
            if self.values[seg.offset..seg.offset + seg.len].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { segment: seg.name.clone() });
            }
        }
        Ok(())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Hex SHA-256 of the little-endian parameter bytes.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_le_bytes()))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mixing: Mixing, task: TaskMode) -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            embed_dim: 3,
            hidden_dim: 4,
            depth: 2,
            num_classes: 5,
            mixing,
            task,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn segments_are_disjoint_and_cover() {
        for mixing in [Mixing::MeanPool, Mixing::Attention] {
            for task in [TaskMode::Classification, TaskMode::Span] {
                let layout = Layout::new(&cfg(mixing, task));
                let mut next = 0;
                for s in layout.segments() {
                    assert_eq!(s.offset, next, "{}", s.name);
                    assert!(s.len > 0);
                    next += s.len;
                }
                assert_eq!(next, layout.total_len());
            }
        }
    }

    #[test]
    fn layout_sizes() {
        let l = Layout::new(&cfg(Mixing::MeanPool, TaskMode::Classification));
        assert_eq!(l.segment("embedding").unwrap().len, 30);
        assert_eq!(l.segment("encoder.0.self").unwrap().len, 12);
        assert_eq!(l.segment("encoder.1.mix").unwrap().len, 16);
        assert_eq!(l.segment("head.class").unwrap().len, 20);
        assert!(l.segment("head.span").is_none());
        let s = Layout::new(&cfg(Mixing::Attention, TaskMode::Span));
        assert_eq!(s.segment("head.span").unwrap().len, 8);
        assert!(s.segment("encoder.1.query").is_some());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = cfg(Mixing::MeanPool, TaskMode::Classification);
        let a = ParamVector::init(&c, 3);
        let b = ParamVector::init(&c, 3);
        let d = ParamVector::init(&c, 4);
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert!(a.values().iter().all(|v| v.abs() < 0.05));
        assert!(a.check_finite().is_ok());
    }

    #[test]
    fn non_finite_reports_segment() {
        let c = cfg(Mixing::MeanPool, TaskMode::Classification);
        let mut p = ParamVector::zeros(&c);
        p.segment_values_mut("encoder.1.bias").unwrap()[2] = f64::NAN;
        match p.check_finite() {
            Err(Error::NonFinite { segment }) => assert_eq!(segment, "encoder.1.bias"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
