use std::collections::HashMap;

use crate::data::normalize;
use crate::error::{Error, Result};

/// Unweighted mean of per-dataset scores.
pub fn macro_accuracy(per_dataset: &[f64]) -> Result<f64> {
    if per_dataset.is_empty() {
        return Err(Error::InvalidInput("macro average of no datasets".into()));
    }
    Ok(per_dataset.iter().sum::<f64>() / per_dataset.len() as f64)
}

fn bag(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Bag-of-tokens F1 after the tokenizer's normalisation.
pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    let (p, g) = (normalize(predicted), normalize(gold));
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let (bp, bg) = (bag(&p), bag(&g));
    let common: usize = bp.iter().map(|(t, &c)| c.min(*bg.get(t).unwrap_or(&0))).sum();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best F1 over the gold answers; 0 when there are none.
pub fn span_f1<S: AsRef<str>>(predicted: &str, golds: &[S]) -> f64 {
    golds.iter().map(|g| token_f1(predicted, g.as_ref())).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn macro_average() {
        assert_eq!(macro_accuracy(&[1.0, 1.0]).unwrap(), 1.0);
        assert!((macro_accuracy(&[0.2, 0.4, 0.9]).unwrap() - 0.5).abs() < 1e-12);
        assert!(macro_accuracy(&[]).is_err());
    }

    #[test]
    fn f1_hand_cases() {
        assert_eq!(span_f1("the cat", &["the cat"]), 1.0);
        assert_eq!(span_f1("a b", &["c d"]), 0.0);
        assert_eq!(span_f1("a b c", &["b c d"]), 2.0 / 3.0);
        assert_eq!(span_f1("a b c", &["x", "b c d", "a b c"]), 1.0);
        assert_eq!(span_f1("", &[""]), 1.0);
        assert_eq!(span_f1("", &["a"]), 0.0);
        assert_eq!(span_f1("A, b!", &["a b"]), 1.0);
        assert_eq!(span_f1::<&str>("a", &[]), 0.0);
    }

    proptest! {
        #[test]
        fn f1_is_symmetric_and_bounded(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
            let f = token_f1(&a, &b);
            prop_assert_eq!(f, token_f1(&b, &a));
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn macro_lies_between_extremes(v in proptest::collection::vec(0.0f64..=1.0, 1..10)) {
            let m = macro_accuracy(&v).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }
}
