//! Inference-time local adaptation.
//!
//! For a query, retrieve neighbours from memory, take a few gradient steps
//! on their weighted loss plus an L2 pull towards the trained parameters,
//! predict with the adapted copy and throw it away.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::memory::{EpisodicMemory, KeyNetwork, DEFAULT_NEIGHBORS};
use crate::model::{
    adam_step, predict, weighted_loss, AdamConfig, AdamState, Dropout, ModelConfig, ParamVector, Prediction,
};
use crate::rng::{content_hash, derive_rng, mix, DOMAIN_ADAPT_DROPOUT, DOMAIN_NEIGHBORS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborSource {
    Knn,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptOptimizer {
    /// Plain gradient descent on the full objective.
    Sgd,
    /// Gradient step on the loss, closed-form step on the L2 anchor:
    /// `w' = (w - lr * grad_nll + 2 lr lambda base) / (1 + 2 lr lambda)`.
    /// Agrees with `Sgd` to first order in `lr * lambda` and stays stable
    /// for any `lambda`.
    Proximal,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub neighbors: usize,
    pub steps: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    /// Per-neighbour weights; uniform `1/K` when absent.
    pub weights: Option<Vec<f64>>,
    pub source: NeighborSource,
    pub optimizer: AdaptOptimizer,
    pub dropout: bool,
    /// Abort when the objective exceeds this multiple of its initial value.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            neighbors: DEFAULT_NEIGHBORS,
            steps: 30,
            lambda: 1e-3,
            learning_rate: 5e-3,
            weights: None,
            source: NeighborSource::Knn,
            optimizer: AdaptOptimizer::Sgd,
            dropout: false,
            divergence_factor: 1e6,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be finite and >= 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("adaptation learning rate must be finite and >= 0".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.neighbors || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 || w.iter().any(|&a| a < 0.0) {
                return Err(Error::Config("neighbour weights must be K non-negative values summing to 1".into()));
            }
        }
        Ok(())
    }

    /// Weights for `n` retrieved neighbours.
    pub fn weights_for(&self, n: usize) -> Result<Vec<f64>> {
        match &self.weights {
            None => Ok(vec![1.0 / n as f64; n]),
            Some(w) if w.len() == n => Ok(w.clone()),
            Some(w) => {
                // Fewer neighbours than K: renormalise the leading weights.
                let s: f64 = w[..n.min(w.len())].iter().sum();
                if n > w.len() || s <= 0.0 {
                    return Err(Error::InvalidInput("neighbour weights do not match neighbour count".into()));
                }
                Ok(w[..n].iter().map(|a| a / s).collect())
            }
        }
    }
}

/// `lambda * |w - base|^2 + sum_k alpha_k * nll_k(w)` and its gradient.
pub fn adapt_objective(
    model: &ModelConfig,
    w: &ParamVector,
    base: &ParamVector,
    neighbors: &[Example],
    weights: &[f64],
    lambda: f64,
    dropout: Dropout,
) -> Result<(f64, ParamVector)> {
    if neighbors.is_empty() {
        return Err(Error::InvalidInput("adaptation needs at least one neighbour".into()));
    }
    let (nll, grad) = weighted_loss(model, w, neighbors, weights, dropout, true)?;
    let mut grad = grad.expect("gradient requested");
    let mut reg = 0.0;
    for ((g, &x), &b) in grad.values_mut().iter_mut().zip(w.values()).zip(base.values()) {
        let d = x - b;
        reg += d * d;
        *g += 2.0 * lambda * d;
    }
    let value = lambda * reg + nll;
    if !value.is_finite() {
        return Err(Error::NonFinite { segment: "adaptation objective".into() });
    }
    grad.check_finite()?;
    Ok((value, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adapted {
    pub params: ParamVector,
    /// True when adaptation was abandoned and `params` equals the base.
    pub diverged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// `L` steps from `base` on the adaptation objective. `base` is never
/// modified; on divergence the base parameters are returned.
pub fn locally_adapt(
    model: &ModelConfig,
    base: &ParamVector,
    neighbors: &[Example],
    cfg: &AdaptConfig,
    dropout_seed: u64,
) -> Result<Adapted> {
    let weights = cfg.weights_for(neighbors.len())?;
    let dropout = |step: u64| {
        if cfg.dropout {
            Dropout::Seeded(mix(dropout_seed, DOMAIN_ADAPT_DROPOUT, step))
        } else {
            Dropout::Off
        }
    };
    let fallback = |initial: f64, why: &str| {
        log::debug!("local adaptation abandoned: {why}");
        Adapted { params: base.clone(), diverged: true, initial_objective: initial, final_objective: initial }
    };
    let mut w = base.clone();
    let mut adam = (cfg.optimizer == AdaptOptimizer::Adam).then(|| AdamState::new(w.len()));
    let mut initial = f64::NAN;
    for step in 0..=cfg.steps {
        let is_last = step == cfg.steps;
        let (value, grad) = match adapt_objective(model, &w, base, neighbors, &weights, cfg.lambda, dropout(step as u64)) {
            Ok(v) => v,
            Err(e) if e.is_numerical() => return Ok(fallback(initial, "non-finite objective")),
            Err(e) => return Err(e),
        };
        if step == 0 {
            initial = value;
        } else if value > cfg.divergence_factor * initial.max(f64::MIN_POSITIVE) {
            return Ok(fallback(initial, "objective diverged"));
        }
        if is_last {
            return Ok(Adapted { params: w, diverged: false, initial_objective: initial, final_objective: value });
        }
        match adam.as_mut() {
            Some(state) => {
                if adam_step(&mut w, &grad, state, cfg.learning_rate, &AdamConfig::default()).is_err() {
                    return Ok(fallback(initial, "non-finite Adam step"));
                }
            }
            None if cfg.optimizer == AdaptOptimizer::Proximal => {
                let c = 2.0 * cfg.learning_rate * cfg.lambda;
                for ((x, g), &b) in w.values_mut().iter_mut().zip(grad.values()).zip(base.values()) {
                    let g_nll = g - 2.0 * cfg.lambda * (*x - b);
                    *x = (*x - cfg.learning_rate * g_nll + c * b) / (1.0 + c);
                }
            }
            None => {
                for (x, g) in w.values_mut().iter_mut().zip(grad.values()) {
                    *x -= cfg.learning_rate * g;
                }
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// A retrieved neighbour, by insertion index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRef {
    pub index: u64,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    EmptyMemory,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedPrediction {
    pub prediction: Prediction,
    pub neighbors: Vec<NeighborRef>,
    pub fallback: Option<Fallback>,
    pub objective: Option<(f64, f64)>,
}

/// Neighbours of `x`: exact KNN on the frozen key, or a uniform sample seeded
/// by the query's tokens so the choice does not depend on evaluation order.
pub fn retrieve(
    keys: &KeyNetwork,
    memory: &EpisodicMemory,
    x: &Example,
    cfg: &AdaptConfig,
) -> Result<Vec<NeighborRef>> {
    let query = keys.compute_key(x)?;
    match cfg.source {
        NeighborSource::Knn => Ok(memory
            .knn(&query, cfg.neighbors)?
            .into_iter()
            .map(|n| NeighborRef { index: n.entry.index, distance: n.distance })
            .collect()),
        NeighborSource::Random => {
            if memory.is_empty() {
                return Err(Error::RetrievalUnavailable);
            }
            let mut rng = derive_rng(cfg.seed, DOMAIN_NEIGHBORS, content_hash(x.input.tokens()));
            Ok(memory
                .sample_uniform(cfg.neighbors, &mut rng)
                .into_iter()
                .map(|e| {
                    let d = e.key.iter().zip(&query).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>();
                    NeighborRef { index: e.index, distance: d.sqrt() }
                })
                .collect())
        }
    }
}

fn lookup<'a>(memory: &'a EpisodicMemory, index: u64) -> &'a Example {
    let entries = memory.entries();
    let pos = entries.binary_search_by_key(&index, |e| e.index).expect("neighbour index comes from this memory");
    &entries[pos].value
}

pub fn predict_adapted(
    model: &ModelConfig,
    base: &ParamVector,
    memory: &EpisodicMemory,
    keys: &KeyNetwork,
    x: &Example,
    cfg: &AdaptConfig,
) -> Result<AdaptedPrediction> {
    let neighbors = match retrieve(keys, memory, x, cfg) {
        Ok(n) => n,
        Err(Error::RetrievalUnavailable) => {
            return Ok(AdaptedPrediction {
                prediction: predict(model, base, &x.input)?,
                neighbors: Vec::new(),
                fallback: Some(Fallback::EmptyMemory),
                objective: None,
            })
        }
        Err(e) => return Err(e),
    };
    if cfg.steps == 0 {
        return Ok(AdaptedPrediction {
            prediction: predict(model, base, &x.input)?,
            neighbors,
            fallback: None,
            objective: None,
        });
    }
    let examples: Vec<Example> = neighbors.iter().map(|n| lookup(memory, n.index).clone()).collect();
    let adapted = locally_adapt(model, base, &examples, cfg, content_hash(x.input.tokens()))?;
    Ok(AdaptedPrediction {
        prediction: predict(model, &adapted.params, &x.input)?,
        neighbors,
        fallback: adapted.diverged.then_some(Fallback::Diverged),
        objective: Some((adapted.initial_objective, adapted.final_objective)),
    })
}

/// One line of the neighbour dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborDump {
    pub query: String,
    pub neighbors: Vec<String>,
    pub distances: Vec<f64>,
}

impl NeighborDump {
    pub fn new(x: &Example, memory: &EpisodicMemory, neighbors: &[NeighborRef]) -> Self {
        Self {
            query: x.display_text().to_string(),
            neighbors: neighbors.iter().map(|n| lookup(memory, n.index).display_text().to_string()).collect(),
            distances: neighbors.iter().map(|n| n.distance).collect(),
        }
    }
}
