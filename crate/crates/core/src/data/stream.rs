//! Balancing, dataset orderings and stream construction.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::example::Example;
use crate::error::{Error, Result};
use crate::model::TaskMode;
use crate::rng::{derive_rng, DOMAIN_BALANCE, DOMAIN_SHUFFLE};

/// Both splits of one named dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub train: Vec<T>,
    pub test: Vec<T>,
}

fn sample<T: Clone>(items: &[T], n: usize, seed: u64, split: u64, name: &str) -> Vec<T> {
    if n >= items.len() {
        if n > items.len() {
            log::warn!("{name}: requested {n} examples but only {} available; taking all", items.len());
        }
        return items.to_vec();
    }
    let mut rng = derive_rng(seed, DOMAIN_BALANCE, split);
    let mut picked = index::sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Seeded uniform sample without replacement of each split, kept in the
/// original file order.
pub fn balance<T: Clone>(dataset: &Dataset<T>, train_n: usize, test_n: usize, seed: u64) -> Dataset<T> {
    Dataset {
        name: dataset.name.clone(),
        train: sample(&dataset.train, train_n, seed, 0, &dataset.name),
        test: sample(&dataset.test, test_n, seed, 1, &dataset.name),
    }
}

/// A sequence of dataset names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    pub id: String,
    pub datasets: Vec<String>,
}

const ROMAN: [&str; 4] = ["i", "ii", "iii", "iv"];

pub fn published_orderings(task: TaskMode) -> Vec<Ordering> {
    let lists: [[&str; 5]; 4] = match task {
        TaskMode::Classification => [
            ["yelp", "agnews", "dbpedia", "amazon", "yahoo"],
            ["dbpedia", "yahoo", "agnews", "amazon", "yelp"],
            ["yelp", "yahoo", "amazon", "dbpedia", "agnews"],
            ["agnews", "yelp", "amazon", "yahoo", "dbpedia"],
        ],
        TaskMode::Span => [
            ["quac", "trweb", "trwik", "squad", ""],
            ["squad", "trwik", "quac", "trweb", ""],
            ["trweb", "trwik", "squad", "quac", ""],
            ["trwik", "quac", "trweb", "squad", ""],
        ],
    };
    lists
        .iter()
        .zip(ROMAN)
        .map(|(l, id)| Ordering {
            id: id.into(),
            datasets: l.iter().filter(|n| !n.is_empty()).map(|n| n.to_string()).collect(),
        })
        .collect()
}

/// Accepts `i`..`iv`, `manifest` (the given order), or a comma-separated
/// list of names. The result must be a permutation of `available`.
pub fn resolve_ordering(selector: &str, task: TaskMode, available: &[String]) -> Result<Ordering> {
    let selector = selector.trim();
    let ordering = if let Some(o) = published_orderings(task).into_iter().find(|o| o.id == selector) {
        o
    } else if selector == "manifest" {
        Ordering { id: "manifest".into(), datasets: available.to_vec() }
    } else {
        Ordering {
            id: selector.into(),
            datasets: selector.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        }
    };
    for name in &ordering.datasets {
        if !available.contains(name) {
            return Err(Error::Config(format!("ordering {:?} names unknown dataset {name:?}", ordering.id)));
        }
    }
    let mut a = ordering.datasets.clone();
    let mut b = available.to_vec();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::Config(format!("ordering {:?} is not a permutation of the datasets", ordering.id)));
    }
    Ok(ordering)
}

/// Where one dataset sits in a stream. Evaluation bookkeeping only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSegment {
    pub dataset: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub examples: Vec<Example>,
    pub segments: Vec<StreamSegment>,
}

impl Stream {
    /// Example counts at which each dataset is complete.
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.end).collect()
    }
}

/// Concatenates training splits in ordering sequence, shuffling within each
/// dataset.
pub fn build_stream(datasets: &[Dataset<Example>], ordering: &Ordering, seed: u64) -> Result<Stream> {
    let mut examples = Vec::new();
    let mut segments = Vec::new();
    for (pos, name) in ordering.datasets.iter().enumerate() {
        let d = datasets
            .iter()
            .find(|d| &d.name == name)
            .ok_or_else(|| Error::Config(format!("unknown dataset {name:?} in ordering")))?;
        let mut part = d.train.clone();
        part.shuffle(&mut derive_rng(seed, DOMAIN_SHUFFLE, pos as u64));
        let start = examples.len();
        examples.extend(part);
        segments.push(StreamSegment { dataset: name.clone(), start, end: examples.len() });
    }
    Ok(Stream { examples, segments })
}

/// Globally shuffled union of all training splits.
pub fn shuffled_union(datasets: &[Dataset<Example>], seed: u64) -> Vec<Example> {
    let mut all: Vec<Example> = datasets.iter().flat_map(|d| d.train.iter().cloned()).collect();
    all.shuffle(&mut derive_rng(seed, DOMAIN_SHUFFLE, u64::MAX));
    all
}
