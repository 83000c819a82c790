//! Dataset ingestion, tokenisation and stream construction.
//!
//! Dataset names live in [`DatasetSpec`] and [`Dataset`] only. The trainer
//! sees a flat list of [`Example`]s, which have no dataset field.

mod example;
pub mod io;
mod labels;
mod stream;
pub mod synth;
mod tokenize;

use std::path::Path;

pub use example::{Answer, Example, ExampleText, RawExample};
pub use io::Manifest;
pub use labels::{
    build_label_space, classification_specs, qa_specs, DatasetSpec, LabelSpace, BALANCED_TEST_SIZE, BALANCED_TRAIN_SIZE,
};
pub use stream::{
    balance, build_stream, published_orderings, resolve_ordering, shuffled_union, Dataset, Ordering, Stream, StreamSegment,
};
pub use synth::{synth_generate, SynthConfig};
pub use tokenize::{
    align_answer, normalize, split_words, tokenize_all, tokenize_document, tokenize_example, TokenizeOptions,
    Vocabulary, Word, DEFAULT_VOCAB_SIZE,
};

use crate::error::Result;
use crate::model::TaskMode;

/// Balanced, tokenised datasets ready for stream construction.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub task: TaskMode,
    pub labels: Option<LabelSpace>,
    pub vocab: Vocabulary,
    pub datasets: Vec<Dataset<Example>>,
}

impl Prepared {
    pub fn names(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.name.clone()).collect()
    }

    /// Class count for classification, 0 for QA.
    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().map_or(0, LabelSpace::len)
    }

    pub fn test_sets(&self) -> Vec<(String, Vec<Example>)> {
        self.datasets.iter().map(|d| (d.name.clone(), d.test.clone())).collect()
    }
}

/// Loads a manifest, balances each dataset to its requested sizes, builds
/// the vocabulary from the balanced training splits and tokenises.
pub fn prepare(manifest_path: &Path, seed: u64, max_vocab: usize, opts: &TokenizeOptions) -> Result<Prepared> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let labels = match manifest.task {
        TaskMode::Classification => Some(build_label_space(&manifest.datasets)?),
        TaskMode::Span => None,
    };
    let empty = LabelSpace::default();
    let raw = io::load_datasets(&manifest, base, labels.as_ref().unwrap_or(&empty))?;
    let balanced: Vec<Dataset<RawExample>> = raw
        .iter()
        .zip(&manifest.datasets)
        .enumerate()
        .map(|(i, (d, spec))| {
            let train_n = spec.train_size.unwrap_or(d.train.len());
            let test_n = spec.test_size.unwrap_or(d.test.len());
            balance(d, train_n, test_n, crate::rng::mix(seed, crate::rng::DOMAIN_BALANCE, i as u64))
        })
        .collect();
    let vocab = Vocabulary::from_examples(balanced.iter().flat_map(|d| d.train.iter()), max_vocab);
    let datasets = balanced
        .iter()
        .map(|d| {
            Ok(Dataset { name: d.name.clone(), train: tokenize_all(&d.train, &vocab, opts)?, test: tokenize_all(&d.test, &vocab, opts)? })
        })
        .collect::<Result<_>>()?;
    Ok(Prepared { task: manifest.task, labels, vocab, datasets })
}
