//! Token encoder with hand-written backward pass.
//!
//! Each layer computes, per position `i`,
//! `h'_i = tanh(S h_i + P h_{i-1} + c_i + b)` where `c_i` mixes the whole
//! sequence: either `M mean(h)` or single-head attention with values `M h_j`.
//! Dropout follows the embedding lookup and every layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mixing, ModelConfig};
use super::params::{LayerOffsets, ParamVector};
use super::sequence::TokenSequence;
use crate::error::Result;
use crate::rng::derive_rng;

/// Dropout behaviour for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dropout {
    Off,
    /// Masks drawn from a generator derived from this seed.
    Seeded(u64),
}

impl Dropout {
    pub(crate) fn rng(self, cfg: &ModelConfig, domain: u64, index: u64) -> Option<ChaCha8Rng> {
        match self {
            Dropout::Seeded(seed) if cfg.dropout > 0.0 => Some(derive_rng(seed, domain, index)),
            _ => None,
        }
    }
}

/// Per-token hidden states, row-major `[len, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub states: Vec<f64>,
    pub len: usize,
    pub dim: usize,
}

impl Encoded {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

enum MixCache {
    Mean(Vec<f64>),
    Attention { q: Vec<f64>, k: Vec<f64>, v: Vec<f64>, weights: Vec<f64> },
}

struct LayerCache {
    input: Vec<f64>,
    act: Vec<f64>,
    mask: Option<Vec<f64>>,
    mix: MixCache,
}

pub(crate) struct EncoderCache {
    embed_mask: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
}

/// Runs the encoder. Validates the sequence against the vocabulary.
pub fn encode(cfg: &ModelConfig, params: &ParamVector, x: &TokenSequence, dropout: Dropout) -> Result<Encoded> {
    x.validate(cfg.vocab_size)?;
    let mut rng = dropout.rng(cfg, crate::rng::DOMAIN_DROPOUT, 0);
    Ok(forward(cfg, params, x.tokens(), rng.as_mut()).0)
}

pub(crate) fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn matvec_t_add(w: &[f64], rows: usize, cols: usize, dz: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let g = dz[r];
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * g;
        }
    }
}

pub(crate) fn outer_add(g: &mut [f64], rows: usize, cols: usize, dz: &[f64], x: &[f64]) {
    for r in 0..rows {
        let d = dz[r];
        if d == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (o, a) in row.iter_mut().zip(x) {
            *o += d * a;
        }
    }
}

fn dropout_mask(rng: Option<&mut ChaCha8Rng>, len: usize, rate: f64) -> Option<Vec<f64>> {
    let rng = rng?;
    let keep = 1.0 / (1.0 - rate);
    Some((0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
}

fn apply_mask(values: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in values.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

pub(crate) fn forward(
    cfg: &ModelConfig,
    params: &ParamVector,
    tokens: &[u32],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Encoded, EncoderCache) {
    let p = params.values();
    let layout = params.layout();
    let n = tokens.len();
    let de = cfg.embed_dim;
    let dh = cfg.hidden_dim;

    let mut h = Vec::with_capacity(n * de);
    for &t in tokens {
        let at = layout.embedding + t as usize * de;
        h.extend_from_slice(&p[at..at + de]);
    }
    let embed_mask = dropout_mask(rng.as_deref_mut(), h.len(), cfg.dropout);
    apply_mask(&mut h, &embed_mask);

    let mut layers = Vec::with_capacity(cfg.depth);
    for lo in &layout.layers {
        let (out, cache) = layer_forward(cfg.mixing, lo, p, h, n, dh, rng.as_deref_mut(), cfg.dropout);
        layers.push(cache);
        h = out;
    }
    (Encoded { states: h, len: n, dim: dh }, EncoderCache { embed_mask, layers })
}

#[allow(clippy::too_many_arguments)]
fn layer_forward(
    mixing: Mixing,
    lo: &LayerOffsets,
    p: &[f64],
    input: Vec<f64>,
    n: usize,
    dh: usize,
    rng: Option<&mut ChaCha8Rng>,
    rate: f64,
) -> (Vec<f64>, LayerCache) {
    let di = lo.in_dim;
    let m = dh * di;
    let w_self = &p[lo.self_w..lo.self_w + m];
    let w_prev = &p[lo.prev_w..lo.prev_w + m];
    let w_mix = &p[lo.mix_w..lo.mix_w + m];
    let bias = &p[lo.bias..lo.bias + dh];

    let mut z = vec![0.0; n * dh];
    for i in 0..n {
        let zi = &mut z[i * dh..(i + 1) * dh];
        zi.copy_from_slice(bias);
        matvec_add(w_self, dh, di, &input[i * di..(i + 1) * di], zi);
        if i > 0 {
            matvec_add(w_prev, dh, di, &input[(i - 1) * di..i * di], zi);
        }
    }

    let mix = match mixing {
        Mixing::MeanPool => {
            let mut mean = vec![0.0; di];
            for i in 0..n {
                for (a, x) in mean.iter_mut().zip(&input[i * di..(i + 1) * di]) {
                    *a += x;
                }
            }
            let inv = 1.0 / n as f64;
            mean.iter_mut().for_each(|a| *a *= inv);
            let mut c = vec![0.0; dh];
            matvec_add(w_mix, dh, di, &mean, &mut c);
            for i in 0..n {
                for (zv, cv) in z[i * dh..(i + 1) * dh].iter_mut().zip(&c) {
                    *zv += cv;
                }
            }
            MixCache::Mean(mean)
        }
        Mixing::Attention => {
            let wq = &p[lo.query_w.expect("attention layout")..][..m];
            let wk = &p[lo.key_w.expect("attention layout")..][..m];
            let mut q = vec![0.0; n * dh];
            let mut k = vec![0.0; n * dh];
            let mut v = vec![0.0; n * dh];
            for i in 0..n {
                let x = &input[i * di..(i + 1) * di];
                matvec_add(wq, dh, di, x, &mut q[i * dh..(i + 1) * dh]);
                matvec_add(wk, dh, di, x, &mut k[i * dh..(i + 1) * dh]);
                matvec_add(w_mix, dh, di, x, &mut v[i * dh..(i + 1) * dh]);
            }
            let scale = 1.0 / (dh as f64).sqrt();
            let mut weights = vec![0.0; n * n];
            for i in 0..n {
                let qi = &q[i * dh..(i + 1) * dh];
                let row = &mut weights[i * n..(i + 1) * n];
                for j in 0..n {
                    row[j] = scale * qi.iter().zip(&k[j * dh..(j + 1) * dh]).map(|(a, b)| a * b).sum::<f64>();
                }
                super::network::softmax_in_place(row);
                let zi = &mut z[i * dh..(i + 1) * dh];
                for j in 0..n {
                    let a = row[j];
                    for (zv, vv) in zi.iter_mut().zip(&v[j * dh..(j + 1) * dh]) {
                        *zv += a * vv;
                    }
                }
            }
            MixCache::Attention { q, k, v, weights }
        }
    };

    let act: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
    let mask = dropout_mask(rng, act.len(), rate);
    let mut out = act.clone();
    apply_mask(&mut out, &mask);
    (out, LayerCache { input, act, mask, mix })
}

/// Accumulates parameter gradients of `dot(grad_out, encoder output)` into
/// `grad`, which must have the flat parameter shape.
pub(crate) fn backward(
    cfg: &ModelConfig,
    params: &ParamVector,
    tokens: &[u32],
    cache: &EncoderCache,
    grad_out: Vec<f64>,
    grad: &mut [f64],
) {
    let p = params.values();
    let layout = params.layout();
    let n = tokens.len();
    let dh = cfg.hidden_dim;
    let mut g = grad_out;
    for (lo, lc) in layout.layers.iter().zip(&cache.layers).rev() {
        g = layer_backward(cfg.mixing, lo, p, lc, n, dh, g, grad);
    }
    apply_mask(&mut g, &cache.embed_mask);
    let de = cfg.embed_dim;
    for (i, &t) in tokens.iter().enumerate() {
        let at = layout.embedding + t as usize * de;
        for (o, v) in grad[at..at + de].iter_mut().zip(&g[i * de..(i + 1) * de]) {
            *o += v;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    mixing: Mixing,
    lo: &LayerOffsets,
    p: &[f64],
    lc: &LayerCache,
    n: usize,
    dh: usize,
    mut g: Vec<f64>,
    grad: &mut [f64],
) -> Vec<f64> {
    let di = lo.in_dim;
    let m = dh * di;
    apply_mask(&mut g, &lc.mask);
    let dz: Vec<f64> = g.iter().zip(&lc.act).map(|(gv, a)| gv * (1.0 - a * a)).collect();
    let input = &lc.input;
    let mut dx = vec![0.0; n * di];

    for i in 0..n {
        let dzi = &dz[i * dh..(i + 1) * dh];
        for (b, d) in grad[lo.bias..lo.bias + dh].iter_mut().zip(dzi) {
            *b += d;
        }
        outer_add(&mut grad[lo.self_w..lo.self_w + m], dh, di, dzi, &input[i * di..(i + 1) * di]);
        matvec_t_add(&p[lo.self_w..lo.self_w + m], dh, di, dzi, &mut dx[i * di..(i + 1) * di]);
        if i > 0 {
            outer_add(&mut grad[lo.prev_w..lo.prev_w + m], dh, di, dzi, &input[(i - 1) * di..i * di]);
            matvec_t_add(&p[lo.prev_w..lo.prev_w + m], dh, di, dzi, &mut dx[(i - 1) * di..i * di]);
        }
    }

    match (&lc.mix, mixing) {
        (MixCache::Mean(mean), _) => {
            let mut s = vec![0.0; dh];
            for i in 0..n {
                for (a, d) in s.iter_mut().zip(&dz[i * dh..(i + 1) * dh]) {
                    *a += d;
                }
            }
            outer_add(&mut grad[lo.mix_w..lo.mix_w + m], dh, di, &s, mean);
            let mut dmean = vec![0.0; di];
            matvec_t_add(&p[lo.mix_w..lo.mix_w + m], dh, di, &s, &mut dmean);
            let inv = 1.0 / n as f64;
            for i in 0..n {
                for (o, d) in dx[i * di..(i + 1) * di].iter_mut().zip(&dmean) {
                    *o += d * inv;
                }
            }
        }
        (MixCache::Attention { q, k, v, weights }, _) => {
            let scale = 1.0 / (dh as f64).sqrt();
            let mut dq = vec![0.0; n * dh];
            let mut dk = vec![0.0; n * dh];
            let mut dv = vec![0.0; n * dh];
            let mut da = vec![0.0; n];
            for i in 0..n {
                let dci = &dz[i * dh..(i + 1) * dh];
                let a = &weights[i * n..(i + 1) * n];
                for j in 0..n {
                    let vj = &v[j * dh..(j + 1) * dh];
                    da[j] = dci.iter().zip(vj).map(|(x, y)| x * y).sum();
                    for (o, d) in dv[j * dh..(j + 1) * dh].iter_mut().zip(dci) {
                        *o += a[j] * d;
                    }
                }
                let centre: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    let ds = a[j] * (da[j] - centre) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * dh + c] += ds * k[j * dh + c];
                        dk[j * dh + c] += ds * q[i * dh + c];
                    }
                }
            }
            let qw = lo.query_w.expect("attention layout");
            let kw = lo.key_w.expect("attention layout");
            for i in 0..n {
                let x = &input[i * di..(i + 1) * di];
                let dxi = &mut dx[i * di..(i + 1) * di];
                for (off, d) in [(lo.mix_w, &dv), (qw, &dq), (kw, &dk)] {
                    let di_row = &d[i * dh..(i + 1) * dh];
                    outer_add(&mut grad[off..off + m], dh, di, di_row, x);
                    matvec_t_add(&p[off..off + m], dh, di, di_row, dxi);
                }
            }
        }
    }
    dx
}
