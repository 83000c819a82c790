//! Metrics, inference over test sets, forgetting curves and result tables.
//!
//! Dataset names appear here for bookkeeping: test sets come as
//! `(name, examples)` pairs and records carry the name.

mod metrics;
mod tables;

use rayon::prelude::{IntoParallelRefIterator, ParallelIterator};
use serde::{Deserialize, Serialize};

pub use metrics::{macro_accuracy, span_f1, token_f1};
pub use tables::{ablation_table, per_dataset_table, results_table, RunSummary, Table};

use crate::adapt::{predict_adapted, AdaptConfig, AdaptedPrediction};
use crate::data::Example;
use crate::error::Result;
use crate::memory::{EpisodicMemory, KeyNetwork};
use crate::model::{predict, ModelConfig, ParamVector, Prediction, TaskMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Accuracy,
    F1,
}

impl MetricKind {
    pub fn for_task(task: TaskMode) -> Self {
        match task {
            TaskMode::Classification => MetricKind::Accuracy,
            TaskMode::Span => MetricKind::F1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub examples_seen: u64,
    pub dataset: String,
    pub kind: MetricKind,
    pub value: f64,
    pub method: String,
    pub ordering: String,
    pub seed: u64,
}

/// Score of one prediction: 0/1 accuracy or best span F1.
pub fn score(x: &Example, p: &Prediction) -> f64 {
    match p {
        Prediction::Class { label, .. } => (x.target == crate::model::Target::Class(*label)) as u8 as f64,
        Prediction::Span { start, end, .. } => span_f1(&x.span_text(*start, *end).unwrap_or_default(), x.answers()),
    }
}

/// Everything inference needs. Local adaptation runs when both a retrieval
/// source and an adaptation config are present.
#[derive(Clone, Copy)]
pub struct Inference<'a> {
    pub model: &'a ModelConfig,
    pub params: &'a ParamVector,
    pub retrieval: Option<(&'a EpisodicMemory, &'a KeyNetwork)>,
    pub adapt: Option<&'a AdaptConfig>,
}

impl<'a> Inference<'a> {
    pub fn base(model: &'a ModelConfig, params: &'a ParamVector) -> Self {
        Self { model, params, retrieval: None, adapt: None }
    }

    pub fn predict(&self, x: &Example) -> Result<AdaptedPrediction> {
        match (self.retrieval, self.adapt) {
            (Some((memory, keys)), Some(cfg)) => predict_adapted(self.model, self.params, memory, keys, x, cfg),
            _ => Ok(AdaptedPrediction {
                prediction: predict(self.model, self.params, &x.input)?,
                neighbors: Vec::new(),
                fallback: None,
                objective: None,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub predictions: Vec<AdaptedPrediction>,
}

/// Mean score over `test`. With `workers > 1` predictions run on a thread
/// pool; results are identical to the serial order.
pub fn evaluate(inf: &Inference<'_>, test: &[Example], workers: usize) -> Result<Evaluation> {
    let predictions: Vec<AdaptedPrediction> = if workers <= 1 {
        test.iter().map(|x| inf.predict(x)).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| test.par_iter().map(|x| inf.predict(x)).collect::<Result<_>>())?
    };
    let value = if test.is_empty() {
        0.0
    } else {
        test.iter().zip(&predictions).map(|(x, p)| score(x, &p.prediction)).sum::<f64>() / test.len() as f64
    };
    Ok(Evaluation { value, predictions })
}

/// A point on a forgetting curve; `None` marks a missing checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub examples_seen: u64,
    pub value: Option<f64>,
}

/// Parameters and memory length captured during training.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub examples_seen: u64,
    pub params: ParamVector,
    pub memory_len: usize,
}

/// Score on one test set at each snapshot, using the memory as it was at
/// that point. Snapshots at zero examples are skipped.
pub fn forgetting_curve(
    model: &ModelConfig,
    snapshots: &[(u64, Option<&Snapshot>)],
    memory: Option<(&EpisodicMemory, &KeyNetwork)>,
    adapt: Option<&AdaptConfig>,
    test: &[Example],
    workers: usize,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for &(marker, snap) in snapshots {
        if marker == 0 {
            continue;
        }
        let Some(snap) = snap else {
            log::warn!("no checkpoint at {marker} examples; leaving a gap");
            out.push(CurvePoint { examples_seen: marker, value: None });
            continue;
        };
        let prefix = memory.map(|(m, k)| (m.prefix(snap.memory_len), k));
        let inf = Inference {
            model,
            params: &snap.params,
            retrieval: prefix.as_ref().map(|(m, k)| (m, *k)),
            adapt,
        };
        let e = evaluate(&inf, test, workers)?;
        out.push(CurvePoint { examples_seen: snap.examples_seen, value: Some(e.value) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExampleText;
    use crate::memory::WritePolicy;
    use crate::model::{Target, TokenSequence};

    fn ex(w: u32, label: usize) -> Example {
        Example {
            input: TokenSequence::document(&[w, w + 1]),
            target: Target::Class(label),
            text: ExampleText::Document { text: String::new() },
        }
    }

    fn setup() -> (ModelConfig, ParamVector, EpisodicMemory, KeyNetwork, Vec<Example>) {
        let model = ModelConfig { vocab_size: 40, embed_dim: 4, hidden_dim: 4, depth: 1, num_classes: 3, ..ModelConfig::default() };
        let params = ParamVector::init(&model, 1);
        let keys = KeyNetwork::new(model.clone(), ParamVector::init(&model, 2));
        let mut mem = EpisodicMemory::new(4, None);
        let all = WritePolicy::new(1.0, 0).unwrap();
        for i in 0..30 {
            mem.write(&keys, &ex(3 + i % 30, (i % 3) as usize), &all, i as u64).unwrap();
        }
        let test = (0..40).map(|i| ex(3 + (i * 7) % 35, (i % 3) as usize)).collect();
        (model, params, mem, keys, test)
    }

    #[test]
    fn parallel_equals_serial_and_nothing_is_mutated() {
        let (model, params, mem, keys, test) = setup();
        let ac = AdaptConfig { neighbors: 5, steps: 4, learning_rate: 0.1, ..AdaptConfig::default() };
        let inf = Inference { model: &model, params: &params, retrieval: Some((&mem, &keys)), adapt: Some(&ac) };
        let (pd, md) = (params.digest(), mem.to_bytes().unwrap());
        let serial = evaluate(&inf, &test, 1).unwrap();
        let parallel = evaluate(&inf, &test, 4).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(params.digest(), pd);
        assert_eq!(mem.to_bytes().unwrap(), md);
        assert!((0.0..=1.0).contains(&serial.value));
    }

    #[test]
    fn zero_steps_equals_base_inference() {
        let (model, params, mem, keys, test) = setup();
        let ac = AdaptConfig { steps: 0, ..AdaptConfig::default() };
        let adapted = Inference { model: &model, params: &params, retrieval: Some((&mem, &keys)), adapt: Some(&ac) };
        let a = evaluate(&adapted, &test, 1).unwrap();
        let b = evaluate(&Inference::base(&model, &params), &test, 1).unwrap();
        for (x, y) in a.predictions.iter().zip(&b.predictions) {
            assert_eq!(x.prediction, y.prediction);
        }
    }

    #[test]
    fn curve_skips_zero_and_marks_gaps() {
        let (model, params, _, _, test) = setup();
        let snap = Snapshot { examples_seen: 500, params: params.clone(), memory_len: 0 };
        let curve = forgetting_curve(&model, &[(0, None), (500, Some(&snap)), (1000, None)], None, None, &test, 1).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].examples_seen, 500);
        assert!(curve[0].value.is_some());
        assert_eq!(curve[1], CurvePoint { examples_seen: 1000, value: None });
    }
}
