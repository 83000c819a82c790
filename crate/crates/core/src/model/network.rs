//! Task heads, probabilities, losses and gradients.

use serde::{Deserialize, Serialize};

use super::config::{LossReduction, ModelConfig, TaskMode};
use super::encoder::{self, matvec_add, matvec_t_add, outer_add, Dropout};
use super::params::ParamVector;
use super::sequence::TokenSequence;
use crate::error::{Error, Result};
use crate::rng::DOMAIN_DROPOUT;

/// Gold output for one input. Span indices are token positions within the
/// context, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Class(usize),
    Span { start: usize, end: usize },
}

/// Anything that pairs a model input with its gold output.
pub trait Labeled {
    fn input(&self) -> &TokenSequence;
    fn target(&self) -> &Target;
}

impl<T: Labeled + ?Sized> Labeled for &T {
    fn input(&self) -> &TokenSequence {
        (**self).input()
    }
    fn target(&self) -> &Target {
        (**self).target()
    }
}

impl Labeled for (TokenSequence, Target) {
    fn input(&self) -> &TokenSequence {
        &self.0
    }
    fn target(&self) -> &Target {
        &self.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prediction {
    Class { probs: Vec<f64>, label: usize },
    Span { start: usize, end: usize, prob: f64 },
}

impl Prediction {
    pub fn as_target(&self) -> Target {
        match *self {
            Prediction::Class { label, .. } => Target::Class(label),
            Prediction::Span { start, end, .. } => Target::Span { start, end },
        }
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut v = logits.to_vec();
    softmax_in_place(&mut v);
    v
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Lowest index among the maxima.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn require_task(cfg: &ModelConfig, task: TaskMode) -> Result<()> {
    if cfg.task != task {
        return Err(Error::InvalidInput(format!("model is configured for {:?}", cfg.task)));
    }
    Ok(())
}

fn context_len(x: &TokenSequence) -> Result<usize> {
    match x.context_len() {
        Some(m) if m >= 1 => Ok(m),
        Some(_) => Err(Error::InvalidInput("empty context".into())),
        None => Err(Error::InvalidInput("span prediction needs a QA sequence".into())),
    }
}

fn class_logits(cfg: &ModelConfig, params: &ParamVector, first: &[f64]) -> Vec<f64> {
    let dh = cfg.hidden_dim;
    let head = params.layout().head;
    let w = &params.values()[head..head + cfg.num_classes * dh];
    let mut logits = vec![0.0; cfg.num_classes];
    matvec_add(w, cfg.num_classes, dh, first, &mut logits);
    logits
}

fn span_logits(cfg: &ModelConfig, params: &ParamVector, enc: &encoder::Encoded, m: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = cfg.hidden_dim;
    let head = params.layout().head;
    let p = params.values();
    let (ws, we) = (&p[head..head + dh], &p[head + dh..head + 2 * dh]);
    let dot = |w: &[f64], r: &[f64]| w.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
    (0..m)
        .map(|c| {
            let row = enc.row(c + 1);
            (dot(ws, row), dot(we, row))
        })
        .unzip()
}

/// Class distribution `softmax(W h_0)`, dropout off.
pub fn classify(cfg: &ModelConfig, params: &ParamVector, x: &TokenSequence) -> Result<Vec<f64>> {
    require_task(cfg, TaskMode::Classification)?;
    let enc = encoder::encode(cfg, params, x, Dropout::Off)?;
    Ok(softmax(&class_logits(cfg, params, enc.row(0))))
}

/// Start and end distributions over context tokens, dropout off.
pub fn span_distributions(cfg: &ModelConfig, params: &ParamVector, x: &TokenSequence) -> Result<(Vec<f64>, Vec<f64>)> {
    require_task(cfg, TaskMode::Span)?;
    let m = context_len(x)?;
    let enc = encoder::encode(cfg, params, x, Dropout::Off)?;
    let (s, e) = span_logits(cfg, params, &enc, m);
    Ok((softmax(&s), softmax(&e)))
}

/// Highest-probability span with `start <= end`. Ties go to the earliest
/// start, then the shortest span.
pub fn best_span(p_start: &[f64], p_end: &[f64]) -> (usize, usize, f64) {
    assert!(!p_start.is_empty() && p_start.len() == p_end.len());
    let mut prefix_best = 0;
    let mut best = (0, 0, p_start[0] * p_end[0]);
    for end in 0..p_start.len() {
        if p_start[end] > p_start[prefix_best] {
            prefix_best = end;
        }
        let score = p_start[prefix_best] * p_end[end];
        let (bs, _, bp) = best;
        if score > bp || (score == bp && prefix_best < bs) {
            best = (prefix_best, end, score);
        }
    }
    best
}

pub fn predict_span(cfg: &ModelConfig, params: &ParamVector, x: &TokenSequence) -> Result<(usize, usize, f64)> {
    let (ps, pe) = span_distributions(cfg, params, x)?;
    Ok(best_span(&ps, &pe))
}

pub fn predict(cfg: &ModelConfig, params: &ParamVector, x: &TokenSequence) -> Result<Prediction> {
    match cfg.task {
        TaskMode::Classification => {
            let probs = classify(cfg, params, x)?;
            let label = argmax(&probs);
            Ok(Prediction::Class { probs, label })
        }
        TaskMode::Span => {
            let (start, end, prob) = predict_span(cfg, params, x)?;
            Ok(Prediction::Span { start, end, prob })
        }
    }
}

fn check_target(cfg: &ModelConfig, x: &TokenSequence, y: &Target) -> Result<()> {
    match (cfg.task, *y) {
        (TaskMode::Classification, Target::Class(c)) if c < cfg.num_classes => Ok(()),
        (TaskMode::Classification, Target::Class(c)) => {
            Err(Error::InvalidInput(format!("label {c} outside {} classes", cfg.num_classes)))
        }
        (TaskMode::Span, Target::Span { start, end }) => {
            let m = context_len(x)?;
            if start <= end && end < m {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("gold span ({start}, {end}) outside context of {m} tokens")))
            }
        }
        _ => Err(Error::InvalidInput("target does not match task mode".into())),
    }
}

/// Per-example weights for the configured reduction.
pub fn reduction_weights(cfg: &ModelConfig, n: usize) -> Vec<f64> {
    match cfg.reduction {
        LossReduction::Mean => vec![1.0 / n as f64; n],
        LossReduction::Sum => vec![1.0; n],
    }
}

/// Single-example loss; accumulates `weight * d loss / d params` when
/// `grad` is given.
fn example_loss(
    cfg: &ModelConfig,
    params: &ParamVector,
    x: &TokenSequence,
    y: &Target,
    dropout: Dropout,
    index: u64,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    x.validate(cfg.vocab_size)?;
    check_target(cfg, x, y)?;
    let mut rng = dropout.rng(cfg, DOMAIN_DROPOUT, index);
    let (enc, cache) = encoder::forward(cfg, params, x.tokens(), rng.as_mut());
    let dh = cfg.hidden_dim;
    let head = params.layout().head;

    match *y {
        Target::Class(label) => {
            let logits = class_logits(cfg, params, enc.row(0));
            let loss = log_sum_exp(&logits) - logits[label];
            if let Some(grad) = grad {
                let mut dlogits = softmax(&logits);
                dlogits[label] -= 1.0;
                dlogits.iter_mut().for_each(|d| *d *= weight);
                let c = cfg.num_classes;
                outer_add(&mut grad[head..head + c * dh], c, dh, &dlogits, enc.row(0));
                let mut grad_out = vec![0.0; enc.states.len()];
                matvec_t_add(&params.values()[head..head + c * dh], c, dh, &dlogits, &mut grad_out[..dh]);
                encoder::backward(cfg, params, x.tokens(), &cache, grad_out, grad);
            }
            Ok(loss)
        }
        Target::Span { start, end } => {
            let m = context_len(x)?;
            let (ls, le) = span_logits(cfg, params, &enc, m);
            let loss = (log_sum_exp(&ls) - ls[start]) + (log_sum_exp(&le) - le[end]);
            if let Some(grad) = grad {
                let mut ds = softmax(&ls);
                ds[start] -= 1.0;
                let mut de = softmax(&le);
                de[end] -= 1.0;
                let p = params.values();
                let (ws, we) = (&p[head..head + dh], &p[head + dh..head + 2 * dh]);
                let mut grad_out = vec![0.0; enc.states.len()];
                for c in 0..m {
                    let (gs, ge) = (weight * ds[c], weight * de[c]);
                    let row = enc.row(c + 1);
                    for k in 0..dh {
                        grad[head + k] += gs * row[k];
                        grad[head + dh + k] += ge * row[k];
                        grad_out[(c + 1) * dh + k] = gs * ws[k] + ge * we[k];
                    }
                }
                encoder::backward(cfg, params, x.tokens(), &cache, grad_out, grad);
            }
            Ok(loss)
        }
    }
}

/// `sum_k weights[k] * (-log p(y_k | x_k))`, optionally with its gradient.
/// Example `k` draws its dropout masks from stream `k` of the seed.
pub fn weighted_loss<E: Labeled>(
    cfg: &ModelConfig,
    params: &ParamVector,
    batch: &[E],
    weights: &[f64],
    dropout: Dropout,
    with_grad: bool,
) -> Result<(f64, Option<ParamVector>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if weights.len() != batch.len() {
        return Err(Error::InvalidInput("weights do not match batch".into()));
    }
    let mut grad = with_grad.then(|| params.zeros_like());
    let mut total = 0.0;
    for (k, (e, &w)) in batch.iter().zip(weights).enumerate() {
        let g = grad.as_mut().map(|g| g.values_mut());
        total += w * example_loss(cfg, params, e.input(), e.target(), dropout, k as u64, w, g)?;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { segment: "loss".into() });
    }
    if let Some(g) = &grad {
        g.check_finite()?;
    }
    Ok((total, grad))
}

pub fn nll_loss<E: Labeled>(cfg: &ModelConfig, params: &ParamVector, batch: &[E], dropout: Dropout) -> Result<f64> {
    let w = reduction_weights(cfg, batch.len());
    Ok(weighted_loss(cfg, params, batch, &w, dropout, false)?.0)
}

pub fn loss_grad<E: Labeled>(
    cfg: &ModelConfig,
    params: &ParamVector,
    batch: &[E],
    dropout: Dropout,
) -> Result<(f64, ParamVector)> {
    let w = reduction_weights(cfg, batch.len());
    let (loss, grad) = weighted_loss(cfg, params, batch, &w, dropout, true)?;
    Ok((loss, grad.expect("gradient requested")))
}
