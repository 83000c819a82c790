//! End-to-end runs: prepare data, train one method on one ordering, and
//! evaluate every test set plus the first dataset's forgetting curve.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, NeighborSource};
use crate::data::{build_stream, resolve_ordering, shuffled_union, Example, Ordering, Prepared, DEFAULT_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::eval::{evaluate, forgetting_curve, CurvePoint, Inference, RunSummary, Snapshot};
use crate::memory::{EpisodicMemory, KeyNetwork};
use crate::model::{ModelConfig, ParamVector};
use crate::trainer::{LogRecord, Method, TrainConfig, Trainer};

/// All settings of a run, as written into its output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub ordering: String,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub max_vocab: usize,
    pub max_tokens: Option<usize>,
    /// Evaluation worker threads.
    pub workers: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.json"),
            ordering: "i".into(),
            seeds: vec![0],
            out: PathBuf::from("runs/latest"),
            max_vocab: DEFAULT_VOCAB_SIZE,
            max_tokens: None,
            workers: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.train.validate()?;
        self.adapt.validate()
    }
}

/// Model config with sizes taken from the prepared data.
pub fn fit_model(model: &ModelConfig, data: &Prepared) -> ModelConfig {
    ModelConfig {
        vocab_size: data.vocab.size(),
        num_classes: if data.num_classes() > 0 { data.num_classes() } else { model.num_classes },
        task: data.task,
        ..model.clone()
    }
}

/// The adaptation config a method uses at inference, if any.
pub fn inference_adapt(method: Method, adapt: &AdaptConfig) -> Option<AdaptConfig> {
    let source = match method {
        Method::Mbpa | Method::MbpaPlusPlus => NeighborSource::Knn,
        Method::MbpaRand => NeighborSource::Random,
        _ => return None,
    };
    Some(AdaptConfig { source, ..adapt.clone() })
}

/// Training stream for a method: ordered concatenation, or the global
/// shuffle for MTL.
pub fn method_stream(data: &Prepared, ordering: &Ordering, method: Method, seed: u64) -> Result<(Vec<Example>, Vec<usize>)> {
    let stream = build_stream(&data.datasets, ordering, seed)?;
    let boundaries = stream.boundaries();
    if method == Method::Mtl {
        Ok((shuffled_union(&data.datasets, seed), boundaries))
    } else {
        Ok((stream.examples, boundaries))
    }
}

/// A trained model with snapshots at each dataset boundary.
pub struct TrainedRun {
    pub model: ModelConfig,
    pub method: Method,
    pub ordering: Ordering,
    pub seed: u64,
    pub params: ParamVector,
    pub memory: Option<EpisodicMemory>,
    pub keys: Option<KeyNetwork>,
    pub snapshots: Vec<Snapshot>,
    pub log: Vec<LogRecord>,
}

pub fn train_run(data: &Prepared, ordering: &Ordering, model: &ModelConfig, train: &TrainConfig) -> Result<TrainedRun> {
    let model = fit_model(model, data);
    let (stream, boundaries) = method_stream(data, ordering, train.method, train.seed)?;
    let mut trainer = Trainer::new(model.clone(), train.clone())?;
    let mut snapshots = Vec::new();
    for &b in &boundaries {
        trainer.run_until(&stream, b)?;
        snapshots.push(Snapshot {
            examples_seen: trainer.cursor().examples_seen,
            params: trainer.params().clone(),
            memory_len: trainer.memory().map_or(0, EpisodicMemory::len),
        });
    }
    trainer.run(&stream)?;
    let keys = trainer.key_network().cloned();
    let (params, memory, log) = trainer.into_parts();
    Ok(TrainedRun {
        model,
        method: train.method,
        ordering: ordering.clone(),
        seed: train.seed,
        params,
        memory,
        keys,
        snapshots,
        log,
    })
}

/// Scores of a run under one inference setting.
#[derive(Clone, Debug, PartialEq)]
pub struct RunScores {
    pub summary: RunSummary,
    /// First dataset's score after each dataset boundary.
    pub curve: Vec<CurvePoint>,
}

impl TrainedRun {
    pub fn inference<'a>(&'a self, adapt: Option<&'a AdaptConfig>) -> Inference<'a> {
        Inference {
            model: &self.model,
            params: &self.params,
            retrieval: self.memory.as_ref().zip(self.keys.as_ref()),
            adapt,
        }
    }

    /// Evaluates every test set in stream order, and the first one at each
    /// snapshot when `with_curve` is set.
    pub fn score(&self, data: &Prepared, adapt: Option<&AdaptConfig>, workers: usize, with_curve: bool) -> Result<RunScores> {
        let inf = self.inference(adapt);
        let mut datasets = Vec::new();
        for name in &self.ordering.datasets {
            let d = data.datasets.iter().find(|d| &d.name == name).expect("ordering was resolved against data");
            datasets.push((name.clone(), evaluate(&inf, &d.test, workers)?.value));
        }
        let average = crate::eval::macro_accuracy(&datasets.iter().map(|d| d.1).collect::<Vec<_>>())?;
        let curve = if with_curve {
            let first = data.datasets.iter().find(|d| d.name == self.ordering.datasets[0]).unwrap();
            let marks: Vec<(u64, Option<&Snapshot>)> = self.snapshots.iter().map(|s| (s.examples_seen, Some(s))).collect();
            let retrieval = self.memory.as_ref().zip(self.keys.as_ref());
            forgetting_curve(&self.model, &marks, retrieval, adapt, &first.test, workers)?
        } else {
            Vec::new()
        };
        Ok(RunScores {
            summary: RunSummary {
                method: self.method.name().into(),
                ordering: self.ordering.id.clone(),
                seed: self.seed,
                datasets,
                average,
            },
            curve,
        })
    }
}

/// Trains and scores one method with its own inference path.
pub fn run_method(
    data: &Prepared,
    ordering: &Ordering,
    model: &ModelConfig,
    train: &TrainConfig,
    adapt: &AdaptConfig,
    workers: usize,
    with_curve: bool,
) -> Result<(TrainedRun, RunScores)> {
    let run = train_run(data, ordering, model, train)?;
    let a = inference_adapt(train.method, adapt);
    let scores = run.score(data, a.as_ref(), workers, with_curve)?;
    Ok((run, scores))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    Capacity,
    Neighbors,
    AdaptSteps,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capacity" => Ok(Self::Capacity),
            "neighbors" => Ok(Self::Neighbors),
            "adapt-steps" => Ok(Self::AdaptSteps),
            _ => Err(Error::Config(format!("unknown ablation {s:?}"))),
        }
    }
}

impl AblationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Capacity => "capacity",
            Self::Neighbors => "neighbors",
            Self::AdaptSteps => "adapt-steps",
        }
    }

    /// Grid from the published ablations.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::Capacity => vec![0.1, 0.5, 1.0],
            Self::Neighbors => vec![8.0, 16.0, 32.0, 64.0, 128.0],
            Self::AdaptSteps => vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0],
        }
    }
}

/// One grid point of a sweep, averaged over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub factor: f64,
    pub scores: Vec<f64>,
    pub mean: Option<f64>,
    /// Memory sizes after training (capacity sweep only).
    pub stored: Vec<usize>,
    pub error: Option<String>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Varies one factor of a memory method. Neighbour and step sweeps only
/// change inference, so each seed is trained once and scored at every grid
/// point, which gives the same numbers as retraining. A failing point is
/// reported and the sweep continues.
pub fn ablation_sweep(
    data: &Prepared,
    ordering: &Ordering,
    kind: AblationKind,
    grid: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<AblationPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let method = cfg.train.method;
    let point = |factor: f64, scores: Vec<f64>, stored: Vec<usize>| AblationPoint {
        factor,
        mean: mean(&scores),
        scores,
        stored,
        error: None,
    };
    let failed = |factor: f64, e: Error| {
        log::error!("{} = {factor}: {e}", kind.name());
        AblationPoint { factor, scores: vec![], mean: None, stored: vec![], error: Some(e.to_string()) }
    };
    match kind {
        AblationKind::Capacity => Ok(grid
            .iter()
            .map(|&p| {
                let result = (|| -> Result<(Vec<f64>, Vec<usize>)> {
                    let (mut scores, mut stored) = (Vec::new(), Vec::new());
                    for &seed in &cfg.seeds {
                        let train = TrainConfig { write_prob: p, seed, ..cfg.train.clone() };
                        let (run, s) = run_method(data, ordering, &cfg.model, &train, &cfg.adapt, cfg.workers, false)?;
                        scores.push(s.summary.average);
                        stored.push(run.memory.as_ref().map_or(0, EpisodicMemory::len));
                    }
                    Ok((scores, stored))
                })();
                match result {
                    Ok((s, n)) => point(p, s, n),
                    Err(e) => failed(p, e),
                }
            })
            .collect()),
        AblationKind::Neighbors | AblationKind::AdaptSteps => {
            let mut per_point: Vec<std::result::Result<Vec<f64>, String>> = vec![Ok(Vec::new()); grid.len()];
            for &seed in &cfg.seeds {
                let run = train_run(data, ordering, &cfg.model, &TrainConfig { seed, ..cfg.train.clone() })?;
                for (slot, &g) in per_point.iter_mut().zip(grid) {
                    let Ok(scores) = slot else { continue };
                    let mut a = inference_adapt(method, &cfg.adapt)
                        .ok_or_else(|| Error::Config(format!("{method} does not use local adaptation")))?;
                    if g < 0.0 || g.fract() != 0.0 {
                        *slot = Err(format!("grid value {g} is not a count"));
                        continue;
                    }
                    match kind {
                        AblationKind::Neighbors => a.neighbors = g as usize,
                        _ => a.steps = g as usize,
                    }
                    match a.validate().and_then(|_| run.score(data, Some(&a), cfg.workers, false)) {
                        Ok(s) => scores.push(s.summary.average),
                        Err(e) => *slot = Err(e.to_string()),
                    }
                }
            }
            Ok(grid
                .iter()
                .zip(per_point)
                .map(|(&g, r)| match r {
                    Ok(s) => point(g, s, vec![]),
                    Err(e) => failed(g, Error::Config(e)),
                })
                .collect())
        }
    }
}

/// Resolves an ordering selector against prepared data.
pub fn ordering_for(data: &Prepared, selector: &str) -> Result<Ordering> {
    resolve_ordering(selector, data.task, &data.names())
}
