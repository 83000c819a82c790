use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn cfg(task: TaskMode, mixing: Mixing) -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        embed_dim: 4,
        hidden_dim: 5,
        depth: 2,
        num_classes: 3,
        dropout: 0.1,
        task,
        mixing,
        reduction: LossReduction::Mean,
        init_scale: 0.5,
    }
}

fn random_doc(rng: &mut ChaCha8Rng, vocab: usize) -> TokenSequence {
    let n = rng.gen_range(1..7);
    let words: Vec<u32> = (0..n).map(|_| rng.gen_range(FIRST_WORD_ID..vocab as u32)).collect();
    TokenSequence::document(&words)
}

fn random_qa(rng: &mut ChaCha8Rng, vocab: usize) -> (TokenSequence, Target) {
    let m = rng.gen_range(1..6);
    let q = rng.gen_range(1..4);
    let ctx: Vec<u32> = (0..m).map(|_| rng.gen_range(FIRST_WORD_ID..vocab as u32)).collect();
    let qs: Vec<u32> = (0..q).map(|_| rng.gen_range(FIRST_WORD_ID..vocab as u32)).collect();
    let start = rng.gen_range(0..m);
    let end = rng.gen_range(start..m);
    (TokenSequence::question_answer(&ctx, &qs), Target::Span { start, end })
}

fn random_batch(rng: &mut ChaCha8Rng, c: &ModelConfig, n: usize) -> Vec<(TokenSequence, Target)> {
    (0..n)
        .map(|_| match c.task {
            TaskMode::Classification => {
                (random_doc(rng, c.vocab_size), Target::Class(rng.gen_range(0..c.num_classes)))
            }
            TaskMode::Span => random_qa(rng, c.vocab_size),
        })
        .collect()
}

/// Central-difference oracle on the scalar loss.
fn finite_difference(c: &ModelConfig, p: &ParamVector, batch: &[(TokenSequence, Target)], i: usize, h: f64) -> f64 {
    let mut plus = p.clone();
    plus.values_mut()[i] += h;
    let mut minus = p.clone();
    minus.values_mut()[i] -= h;
    let lp = nll_loss(c, &plus, batch, Dropout::Seeded(99)).unwrap();
    let lm = nll_loss(c, &minus, batch, Dropout::Seeded(99)).unwrap();
    (lp - lm) / (2.0 * h)
}

#[test]
fn encode_shape_and_determinism() {
    for mixing in [Mixing::MeanPool, Mixing::Attention] {
        let c = cfg(TaskMode::Classification, mixing);
        let p = ParamVector::init(&c, 1);
        let x = TokenSequence::document(&[3, 4, 5]);
        let a = encode(&c, &p, &x, Dropout::Off).unwrap();
        let b = encode(&c, &p, &x, Dropout::Off).unwrap();
        assert_eq!(a.len, 4);
        assert_eq!(a.dim, c.hidden_dim);
        assert_eq!(a.states.len(), 4 * c.hidden_dim);
        assert_eq!(a, b);
        let d = encode(&c, &p, &x, Dropout::Seeded(5)).unwrap();
        assert_ne!(a, d);
    }
}

#[test]
fn encode_rejects_out_of_vocabulary() {
    let c = cfg(TaskMode::Classification, Mixing::MeanPool);
    let p = ParamVector::init(&c, 1);
    let x = TokenSequence::document(&[3, 12]);
    assert!(matches!(encode(&c, &p, &x, Dropout::Off), Err(Error::InvalidInput(_))));
}

#[test]
fn duplicated_token_changes_first_position() {
    // Both mixings see the whole sequence from position 0.
    for mixing in [Mixing::MeanPool, Mixing::Attention] {
        let c = cfg(TaskMode::Classification, mixing);
        let p = ParamVector::init(&c, 2);
        let one = encode(&c, &p, &TokenSequence::document(&[7]), Dropout::Off).unwrap();
        let two = encode(&c, &p, &TokenSequence::document(&[7, 7]), Dropout::Off).unwrap();
        assert_ne!(one.row(0), two.row(0));
    }
}

#[test]
fn zero_head_is_uniform() {
    let mut c = cfg(TaskMode::Classification, Mixing::MeanPool);
    c.num_classes = 33;
    let mut p = ParamVector::init(&c, 3);
    p.segment_values_mut("head.class").unwrap().iter_mut().for_each(|v| *v = 0.0);
    let probs = classify(&c, &p, &TokenSequence::document(&[3, 4])).unwrap();
    assert_eq!(probs.len(), 33);
    for q in probs {
        assert!((q - 1.0 / 33.0).abs() < 1e-15);
    }
}

#[test]
fn hand_set_logits_give_three_to_one() {
    let mut c = cfg(TaskMode::Classification, Mixing::MeanPool);
    c.num_classes = 2;
    c.hidden_dim = 1;
    c.depth = 1;
    let mut p = ParamVector::zeros(&c);
    // All weights zero, bias 0.5 -> h_0 = tanh(0.5).
    p.segment_values_mut("encoder.0.bias").unwrap()[0] = 0.5;
    let h0 = 0.5f64.tanh();
    p.segment_values_mut("head.class").unwrap().copy_from_slice(&[3f64.ln() / h0, 0.0]);
    let probs = classify(&c, &p, &TokenSequence::document(&[5])).unwrap();
    assert!((probs[0] - 0.75).abs() < 1e-12);
    assert!((probs[1] - 0.25).abs() < 1e-12);
}

#[test]
fn classify_requires_classification_mode() {
    let c = cfg(TaskMode::Span, Mixing::MeanPool);
    let p = ParamVector::init(&c, 1);
    assert!(classify(&c, &p, &TokenSequence::question_answer(&[3], &[4])).is_err());
}

#[test]
fn single_token_context_span() {
    let c = cfg(TaskMode::Span, Mixing::MeanPool);
    let p = ParamVector::init(&c, 4);
    let (s, e, prob) = predict_span(&c, &p, &TokenSequence::question_answer(&[5], &[6, 7])).unwrap();
    assert_eq!((s, e), (0, 0));
    assert!((prob - 1.0).abs() < 1e-12);
}

#[test]
fn uniform_span_logits_pick_first_single_token() {
    let c = cfg(TaskMode::Span, Mixing::MeanPool);
    let mut p = ParamVector::init(&c, 4);
    p.segment_values_mut("head.span").unwrap().iter_mut().for_each(|v| *v = 0.0);
    let x = TokenSequence::question_answer(&[5, 6, 7, 8], &[9]);
    let (ps, pe) = span_distributions(&c, &p, &x).unwrap();
    // Enumerate all M(M+1)/2 valid spans.
    for m in 0..4 {
        for n in m..4 {
            assert!((ps[m] * pe[n] - 1.0 / 16.0).abs() < 1e-15);
        }
    }
    let (s, e, prob) = predict_span(&c, &p, &x).unwrap();
    assert_eq!((s, e), (0, 0));
    assert!((prob - 1.0 / 16.0).abs() < 1e-15);
}

#[test]
fn empty_context_rejected() {
    let c = cfg(TaskMode::Span, Mixing::MeanPool);
    let p = ParamVector::init(&c, 4);
    let x = TokenSequence::question_answer(&[], &[9]);
    assert!(matches!(predict_span(&c, &p, &x), Err(Error::InvalidInput(_))));
}

/// Exhaustive scan of valid spans ordered by (score desc, start asc, end asc).
fn brute_force_span(ps: &[f64], pe: &[f64]) -> (usize, usize, f64) {
    let mut all = Vec::new();
    for m in 0..ps.len() {
        for n in m..pe.len() {
            all.push((m, n, ps[m] * pe[n]));
        }
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all[0]
}

#[test]
fn inverted_peaks_never_return_invalid_span() {
    let ps = softmax(&[0.0, 0.0, 0.0, 5.0, 0.0]);
    let pe = softmax(&[0.0, 5.0, 0.0, 0.0, 0.0]);
    let got = best_span(&ps, &pe);
    assert_ne!((got.0, got.1), (3, 1));
    assert!(got.0 <= got.1);
    let oracle = brute_force_span(&ps, &pe);
    assert_eq!(got, oracle);
}

proptest! {
    #[test]
    fn span_matches_exhaustive_argmax(
        ls in proptest::collection::vec(-3.0f64..3.0, 1..=16),
        seed in any::<u64>(),
        quantise in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ls.len();
        let mut start: Vec<f64> = ls.clone();
        let mut end: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        if quantise {
            // Coarse logits produce many exact ties.
            start.iter_mut().for_each(|v| *v = v.round());
            end.iter_mut().for_each(|v| *v = v.round());
        }
        let ps = softmax(&start);
        let pe = softmax(&end);
        let got = best_span(&ps, &pe);
        prop_assert!(got.0 <= got.1 && got.1 < m);
        prop_assert_eq!(got, brute_force_span(&ps, &pe));
    }

    #[test]
    fn distributions_are_normalised(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg(TaskMode::Classification, Mixing::Attention);
        let p = ParamVector::init(&c, seed);
        let probs = classify(&c, &p, &random_doc(&mut rng, c.vocab_size)).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(probs.iter().all(|&q| (0.0..=1.0).contains(&q)));
        let s = cfg(TaskMode::Span, Mixing::MeanPool);
        let ps = ParamVector::init(&s, seed);
        let (x, _) = random_qa(&mut rng, s.vocab_size);
        let (a, b) = span_distributions(&s, &ps, &x).unwrap();
        for d in [a, b] {
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(d.iter().all(|&q| (0.0..=1.0).contains(&q)));
        }
    }
}

#[test]
fn confident_correct_model_has_zero_loss() {
    let mut c = cfg(TaskMode::Classification, Mixing::MeanPool);
    c.hidden_dim = 1;
    c.depth = 1;
    c.num_classes = 2;
    let mut p = ParamVector::zeros(&c);
    p.segment_values_mut("encoder.0.bias").unwrap()[0] = 1.0;
    p.segment_values_mut("head.class").unwrap().copy_from_slice(&[1e3, -1e3]);
    let batch = vec![(TokenSequence::document(&[3]), Target::Class(0))];
    let loss = nll_loss(&c, &p, &batch, Dropout::Off).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn uniform_classifier_loss_is_log_classes() {
    let mut c = cfg(TaskMode::Classification, Mixing::MeanPool);
    c.num_classes = 33;
    let mut p = ParamVector::init(&c, 1);
    p.segment_values_mut("head.class").unwrap().iter_mut().for_each(|v| *v = 0.0);
    let batch = vec![(TokenSequence::document(&[3, 4]), Target::Class(17))];
    let loss = nll_loss(&c, &p, &batch, Dropout::Off).unwrap();
    assert!((loss - 33f64.ln()).abs() < 1e-12);
    assert!((loss - 3.4965).abs() < 1e-4);
}

#[test]
fn batch_loss_is_mean_of_singletons() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for task in [TaskMode::Classification, TaskMode::Span] {
        let c = cfg(task, Mixing::MeanPool);
        let p = ParamVector::init(&c, 5);
        let batch = random_batch(&mut rng, &c, 2);
        let both = nll_loss(&c, &p, &batch, Dropout::Off).unwrap();
        let a = nll_loss(&c, &p, &batch[..1], Dropout::Off).unwrap();
        let b = nll_loss(&c, &p, &batch[1..], Dropout::Off).unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-9);
    }
}

#[test]
fn sum_reduction_adds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut c = cfg(TaskMode::Classification, Mixing::MeanPool);
    let batch = random_batch(&mut rng, &c, 3);
    let p = ParamVector::init(&c, 5);
    let mean = nll_loss(&c, &p, &batch, Dropout::Off).unwrap();
    c.reduction = LossReduction::Sum;
    let sum = nll_loss(&c, &p, &batch, Dropout::Off).unwrap();
    assert!((sum - 3.0 * mean).abs() < 1e-9);
}

#[test]
fn span_loss_is_start_plus_end() {
    let c = cfg(TaskMode::Span, Mixing::MeanPool);
    let p = ParamVector::init(&c, 8);
    let x = TokenSequence::question_answer(&[3, 4, 5], &[6]);
    let (ps, pe) = span_distributions(&c, &p, &x).unwrap();
    let batch = vec![(x, Target::Span { start: 1, end: 2 })];
    let loss = nll_loss(&c, &p, &batch, Dropout::Off).unwrap();
    assert!((loss - (-ps[1].ln() - pe[2].ln())).abs() < 1e-12);
}

#[test]
fn gold_span_outside_context_rejected() {
    let c = cfg(TaskMode::Span, Mixing::MeanPool);
    let p = ParamVector::init(&c, 8);
    let x = TokenSequence::question_answer(&[3, 4], &[6]);
    for t in [Target::Span { start: 0, end: 2 }, Target::Span { start: 1, end: 0 }] {
        let batch = vec![(x.clone(), t)];
        assert!(matches!(nll_loss(&c, &p, &batch, Dropout::Off), Err(Error::InvalidInput(_))));
    }
}

#[test]
fn loss_grad_loss_is_bitwise_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for task in [TaskMode::Classification, TaskMode::Span] {
        let c = cfg(task, Mixing::Attention);
        let p = ParamVector::init(&c, 6);
        let batch = random_batch(&mut rng, &c, 4);
        let (l, g) = loss_grad(&c, &p, &batch, Dropout::Seeded(21)).unwrap();
        let n = nll_loss(&c, &p, &batch, Dropout::Seeded(21)).unwrap();
        assert_eq!(l.to_bits(), n.to_bits());
        assert_eq!(g.len(), p.len());
        let again = nll_loss(&c, &p, &batch, Dropout::Seeded(21)).unwrap();
        assert_eq!(n.to_bits(), again.to_bits());
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for task in [TaskMode::Classification, TaskMode::Span] {
        for mixing in [Mixing::MeanPool, Mixing::Attention] {
            for trial in 0..3 {
                let c = cfg(task, mixing);
                let p = ParamVector::init(&c, 100 + trial);
                let batch = random_batch(&mut rng, &c, 3);
                let (_, g) = loss_grad(&c, &p, &batch, Dropout::Seeded(99)).unwrap();
                for _ in 0..10 {
                    let i = rng.gen_range(0..p.len());
                    let fd = finite_difference(&c, &p, &batch, i, 1e-4);
                    let a = g.values()[i];
                    let rel = (a - fd).abs() / (a.abs() + 1e-8);
                    let seg = &p.layout().segment_of(i).unwrap().name;
                    assert!(rel < 1e-3, "{task:?}/{mixing:?} {seg}[{i}]: analytic {a} fd {fd}");
                }
            }
        }
    }
}

#[test]
fn gradient_vanishes_at_convex_head_optimum() {
    let mut c = cfg(TaskMode::Classification, Mixing::MeanPool);
    c.dropout = 0.0;
    c.hidden_dim = 2;
    c.init_scale = 1.0;
    c.num_classes = 2;
    let mut p = ParamVector::init(&c, 31);
    // Each input appears with both labels, so the logistic optimum is finite.
    let a = TokenSequence::document(&[3, 4]);
    let b = TokenSequence::document(&[5]);
    let batch = vec![
        (a.clone(), Target::Class(0)),
        (a.clone(), Target::Class(1)),
        (a, Target::Class(0)),
        (b.clone(), Target::Class(1)),
        (b, Target::Class(0)),
    ];
    let head = p.layout().segment("head.class").unwrap().clone();
    for _ in 0..20_000 {
        let (_, g) = loss_grad(&c, &p, &batch, Dropout::Off).unwrap();
        for i in head.offset..head.offset + head.len {
            p.values_mut()[i] -= 2.0 * g.values()[i];
        }
    }
    let (_, g) = loss_grad(&c, &p, &batch, Dropout::Off).unwrap();
    let max = g.values()[head.offset..head.offset + head.len].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max < 1e-5, "head gradient {max}");
}

#[test]
fn empty_batch_rejected() {
    let c = cfg(TaskMode::Classification, Mixing::MeanPool);
    let p = ParamVector::init(&c, 1);
    let batch: Vec<(TokenSequence, Target)> = Vec::new();
    assert!(nll_loss(&c, &p, &batch, Dropout::Off).is_err());
}

#[test]
fn non_finite_gradient_names_segment() {
    let c = cfg(TaskMode::Classification, Mixing::MeanPool);
    let mut p = ParamVector::init(&c, 1);
    p.segment_values_mut("head.class").unwrap()[0] = f64::NAN;
    let batch = vec![(TokenSequence::document(&[3]), Target::Class(0))];
    let err = loss_grad(&c, &p, &batch, Dropout::Off).unwrap_err();
    assert!(err.is_numerical());
}
