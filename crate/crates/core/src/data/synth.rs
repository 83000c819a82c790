//! Synthetic desk-scale datasets.
//!
//! Every word is a pronounceable nonsense token. Each classification class
//! owns a handful of keywords, each dataset owns a few topic words, and
//! filler words are shared by everything. Keyword pools are disjoint across
//! datasets, so a later dataset gives no signal about an earlier one.
//!
//! QA contexts are lists of `its <attribute> is <value>` facts; questions ask
//! for one attribute through a few paraphrase templates.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::example::{Answer, RawExample};
use super::io::{write_classification_csv, write_qa_jsonl, Manifest};
use super::labels::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::TaskMode;
use crate::rng::{derive_rng, DOMAIN_SYNTH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub task: TaskMode,
    pub datasets: usize,
    pub classes_per_dataset: usize,
    /// Generated per class (classification) or per dataset (QA).
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Sizes written into the manifest for balancing.
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub keywords_per_class: usize,
    pub topic_words: usize,
    pub filler_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub keyword_prob: f64,
    pub topic_prob: f64,
    /// QA: attributes per dataset, values per attribute, facts per context.
    pub attributes: usize,
    pub values_per_attribute: usize,
    pub facts_per_context: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            task: TaskMode::Classification,
            datasets: 2,
            classes_per_dataset: 3,
            train_per_class: 200,
            test_per_class: 100,
            train_size: Some(500),
            test_size: Some(200),
            keywords_per_class: 6,
            topic_words: 8,
            filler_words: 30,
            min_len: 10,
            max_len: 20,
            keyword_prob: 0.2,
            topic_prob: 0.25,
            attributes: 6,
            values_per_attribute: 8,
            facts_per_context: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn qa() -> Self {
        Self { task: TaskMode::Span, train_per_class: 600, test_per_class: 300, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.datasets,
            self.train_per_class,
            self.test_per_class,
            self.keywords_per_class,
            self.filler_words,
            self.min_len,
            self.attributes,
            self.values_per_attribute,
            self.facts_per_context,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("synthetic generator sizes must be positive".into()));
        }
        if self.task == TaskMode::Classification && self.classes_per_dataset < 2 && self.datasets < 2 {
            return Err(Error::Config("need at least two classes overall".into()));
        }
        if self.classes_per_dataset == 0 || self.max_len < self.min_len {
            return Err(Error::Config("bad class count or length range".into()));
        }
        if !(0.0..=1.0).contains(&(self.keyword_prob + self.topic_prob)) || self.keyword_prob < 0.0 || self.topic_prob < 0.0
        {
            return Err(Error::Config("word probabilities must be in [0, 1] and sum to at most 1".into()));
        }
        Ok(())
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
/// Words the QA templates use; never generated as pseudo-words.
const RESERVED: [&str; 9] = ["its", "is", "what", "the", "which", "tell", "me", "find", "of"];

struct WordPool {
    used: HashSet<String>,
    rng: ChaCha8Rng,
}

impl WordPool {
    fn new(seed: u64) -> Self {
        Self { used: RESERVED.iter().map(|w| w.to_string()).collect(), rng: derive_rng(seed, DOMAIN_SYNTH, 0) }
    }

    fn fresh(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(&mut self.rng).unwrap(), VOWELS.choose(&mut self.rng).unwrap()))
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn take(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

fn dataset_name(d: usize) -> String {
    format!("syn{}", d + 1)
}

fn document(rng: &mut ChaCha8Rng, cfg: &SynthConfig, keywords: &[String], topic: &[String], filler: &[String]) -> String {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let words: Vec<&str> = (0..len)
        .map(|_| {
            let u: f64 = rng.gen();
            let pool = if u < cfg.keyword_prob {
                keywords
            } else if u < cfg.keyword_prob + cfg.topic_prob && !topic.is_empty() {
                topic
            } else {
                filler
            };
            pool.choose(rng).unwrap().as_str()
        })
        .collect();
    words.join(" ")
}

fn qa_example(rng: &mut ChaCha8Rng, cfg: &SynthConfig, attrs: &[String], values: &[Vec<String>], filler: &[String]) -> RawExample {
    let n = cfg.facts_per_context.min(attrs.len());
    let chosen: Vec<usize> = rand::seq::index::sample(rng, attrs.len(), n).into_vec();
    let asked = chosen[rng.gen_range(0..n)];
    let mut context = String::new();
    let mut answer = None;
    for &a in &chosen {
        if rng.gen_bool(0.5) {
            context.push_str(filler.choose(rng).unwrap());
            context.push(' ');
        }
        let value = values[a].choose(rng).unwrap();
        context.push_str(&format!("its {} is ", attrs[a]));
        if a == asked {
            answer = Some(Answer { text: value.clone(), answer_start: context.chars().count() });
        }
        context.push_str(value);
        context.push_str(". ");
    }
    let attr = &attrs[asked];
    let question = match rng.gen_range(0..4) {
        0 => format!("what is its {attr}?"),
        1 => format!("which {attr}?"),
        2 => format!("tell me the {attr}"),
        _ => format!("find the {attr} of it"),
    };
    RawExample::Qa { context: context.trim_end().to_string(), question, answers: vec![answer.unwrap()] }
}

struct Generated {
    spec: DatasetSpec,
    train: Vec<RawExample>,
    test: Vec<RawExample>,
}

fn generate(cfg: &SynthConfig) -> Vec<Generated> {
    let mut pool = WordPool::new(cfg.seed);
    let filler = pool.take(cfg.filler_words);
    let mut out = Vec::new();
    for d in 0..cfg.datasets {
        let name = dataset_name(d);
        let mut rng = derive_rng(cfg.seed, DOMAIN_SYNTH, 1 + d as u64);
        let ext = if cfg.task == TaskMode::Classification { "csv" } else { "jsonl" };
        let mut spec = match cfg.task {
            TaskMode::Classification => {
                let classes: Vec<String> = (0..cfg.classes_per_dataset).map(|c| format!("{name}-c{}", c + 1)).collect();
                let refs: Vec<&str> = classes.iter().map(String::as_str).collect();
                DatasetSpec::new(&name, cfg.task, &refs)
            }
            TaskMode::Span => DatasetSpec::new(&name, cfg.task, &[]),
        };
        spec.train_path = format!("{name}.train.{ext}");
        spec.test_path = format!("{name}.test.{ext}");
        spec.train_size = cfg.train_size;
        spec.test_size = cfg.test_size;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        match cfg.task {
            TaskMode::Classification => {
                let topic = pool.take(cfg.topic_words);
                let keywords: Vec<Vec<String>> =
                    (0..cfg.classes_per_dataset).map(|_| pool.take(cfg.keywords_per_class)).collect();
                for (split, n) in [(&mut train, cfg.train_per_class), (&mut test, cfg.test_per_class)] {
                    for _ in 0..n {
                        for (c, kw) in keywords.iter().enumerate() {
                            // Labels here are local and 0-based; the writer makes them 1-based.
                            split.push(RawExample::Classification {
                                text: document(&mut rng, cfg, kw, &topic, &filler),
                                label: c,
                            });
                        }
                    }
                }
            }
            TaskMode::Span => {
                let attrs = pool.take(cfg.attributes);
                let values: Vec<Vec<String>> = attrs.iter().map(|_| pool.take(cfg.values_per_attribute)).collect();
                for _ in 0..cfg.train_per_class {
                    train.push(qa_example(&mut rng, cfg, &attrs, &values, &filler));
                }
                for _ in 0..cfg.test_per_class {
                    test.push(qa_example(&mut rng, cfg, &attrs, &values, &filler));
                }
            }
        }
        spec.task = cfg.task;
        out.push(Generated { spec, train, test });
    }
    out
}

/// Writes dataset files and `manifest.json` into `dir`. Returns the manifest.
pub fn synth_generate(cfg: &SynthConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let generated = generate(cfg);
    for g in &generated {
        for (path, rows) in [(&g.spec.train_path, &g.train), (&g.spec.test_path, &g.test)] {
            let path = dir.join(path);
            match cfg.task {
                TaskMode::Classification => {
                    let rows: Vec<(usize, String)> = rows
                        .iter()
                        .map(|r| match r {
                            RawExample::Classification { text, label } => (label + 1, text.clone()),
                            RawExample::Qa { .. } => unreachable!(),
                        })
                        .collect();
                    write_classification_csv(&path, &rows)?;
                }
                TaskMode::Span => write_qa_jsonl(&path, rows)?,
            }
        }
    }
    let manifest = Manifest {
        task: cfg.task,
        seed: Some(cfg.seed),
        datasets: generated.into_iter().map(|g| g.spec).collect(),
        generator: Some(serde_json::to_value(cfg)?),
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::{read_classification_csv, read_qa_jsonl};
    use crate::data::labels::build_label_space;
    use crate::data::tokenize::{split_words, Vocabulary};
    use crate::data::{tokenize_example, TokenizeOptions};
    use crate::model::Target;

    fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn fixed_seed_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = SynthConfig { seed: 11, ..SynthConfig::default() };
        synth_generate(&cfg, a.path()).unwrap();
        synth_generate(&cfg, b.path()).unwrap();
        assert_eq!(files(a.path()), files(b.path()));
        let c = tempfile::tempdir().unwrap();
        synth_generate(&SynthConfig { seed: 12, ..cfg }, c.path()).unwrap();
        assert_ne!(files(a.path()), files(c.path()));
    }

    #[test]
    fn default_is_two_datasets_of_three_classes() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_generate(&SynthConfig::default(), dir.path()).unwrap();
        assert_eq!(m.datasets.len(), 2);
        assert!(m.datasets.iter().all(|d| d.classes.len() == 3));
        let space = build_label_space(&m.datasets).unwrap();
        assert_eq!(space.len(), 6);
        let rows = read_classification_csv(&dir.path().join(&m.datasets[1].train_path), "syn2", &space).unwrap();
        assert_eq!(rows.len(), 600);
        assert!(rows.iter().all(|r| matches!(r, RawExample::Classification { label, .. } if (3..6).contains(label))));
    }

    #[test]
    fn class_vocabularies_are_disjoint_across_datasets() {
        let cfg = SynthConfig::default();
        let g = generate(&cfg);
        let words = |d: usize| -> HashSet<String> {
            g[d].train
                .iter()
                .flat_map(|r| match r {
                    RawExample::Classification { text, .. } => {
                        split_words(text).into_iter().map(|w| w.text).collect::<Vec<_>>()
                    }
                    RawExample::Qa { .. } => vec![],
                })
                .collect()
        };
        let (a, b) = (words(0), words(1));
        // Only the shared filler vocabulary overlaps.
        assert!(a.intersection(&b).count() <= cfg.filler_words);
    }

    #[test]
    fn qa_spans_lie_inside_context() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_generate(&SynthConfig { train_per_class: 100, test_per_class: 20, ..SynthConfig::qa() }, dir.path())
            .unwrap();
        let raw = read_qa_jsonl(&dir.path().join(&m.datasets[0].train_path)).unwrap();
        let vocab = Vocabulary::from_examples(&raw, 1000);
        for r in &raw {
            let RawExample::Qa { context, answers, .. } = r else { panic!() };
            let a = &answers[0];
            let got: String = context.chars().skip(a.answer_start).take(a.text.chars().count()).collect();
            assert_eq!(got, a.text);
            let ex = tokenize_example(r, &vocab, &TokenizeOptions::default()).unwrap().unwrap();
            let Target::Span { start, end } = ex.target else { panic!() };
            assert!(start <= end && end < ex.input.context_len().unwrap());
            assert_eq!(ex.span_text(start, end).unwrap(), a.text);
        }
    }
}
