//! Word-level tokenisation and vocabulary.
//!
//! Text is lowercased and split into maximal alphanumeric runs; everything
//! else separates words and is dropped.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::example::{Answer, Example, ExampleText, RawExample};
use crate::error::{Error, Result};
use crate::model::{Target, TokenSequence, FIRST_WORD_ID, UNK_ID};

pub const DEFAULT_VOCAB_SIZE: usize = 20_000;

/// A normalised word and its character span `[start, end)` in the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

pub fn split_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (i, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            words.push(Word { text: std::mem::take(&mut current), start, end: i });
        }
    }
    if !current.is_empty() {
        let end = text.chars().count();
        words.push(Word { text: current, start, end });
    }
    words
}

/// Normalised word strings of `text`.
pub fn normalize(text: &str) -> Vec<String> {
    split_words(text).into_iter().map(|w| w.text).collect()
}

/// Frequency-ranked word vocabulary; ids below `FIRST_WORD_ID` are the
/// unknown, begin and separator symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32 + FIRST_WORD_ID)).collect();
        Self { words, index }
    }

    /// Keep the `max_words` most frequent words; ties break alphabetically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_words: usize) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for t in texts {
            for w in normalize(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_words);
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect())
    }

    /// Vocabulary over every text field of the given raw examples.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a RawExample>, max_words: usize) -> Self {
        let texts = examples.into_iter().flat_map(|e| match e {
            RawExample::Classification { text, .. } => vec![text.as_str()],
            RawExample::Qa { context, question, .. } => vec![context.as_str(), question.as_str()],
        });
        Self::build(texts, max_words)
    }

    /// Total model vocabulary size including the special symbols.
    pub fn size(&self) -> usize {
        self.words.len() + FIRST_WORD_ID as usize
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.words)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let words: Vec<String> = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok(Self::from_words(words))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeOptions {
    /// Cap on document tokens or context tokens (QA); `None` keeps all.
    pub max_tokens: Option<usize>,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        Self { max_tokens: None }
    }
}

pub fn tokenize_document(text: &str, vocab: &Vocabulary, opts: &TokenizeOptions) -> TokenSequence {
    let mut ids: Vec<u32> = normalize(text).iter().map(|w| vocab.id(w)).collect();
    if let Some(max) = opts.max_tokens {
        ids.truncate(max);
    }
    TokenSequence::document(&ids)
}

/// Token span covering the answer's characters. Answers that start or end
/// inside a word are widened to whole words.
pub fn align_answer(words: &[Word], answer: &Answer) -> Result<(usize, usize)> {
    let a_start = answer.answer_start;
    let a_end = a_start + answer.text.chars().count();
    let covering: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| w.start < a_end && w.end > a_start)
        .map(|(i, _)| i)
        .collect();
    let (first, last) = match (covering.first(), covering.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => {
            return Err(Error::Data(format!(
                "answer {:?} at {} does not overlap any context word",
                answer.text, a_start
            )))
        }
    };
    if words[first].start != a_start || words[last].end != a_end {
        log::debug!("answer {:?} snapped to word boundaries", answer.text);
    }
    Ok((first, last))
}

/// Tokenise one raw example. Returns `Ok(None)` when truncation removed the
/// gold answer.
pub fn tokenize_example(raw: &RawExample, vocab: &Vocabulary, opts: &TokenizeOptions) -> Result<Option<Example>> {
    match raw {
        RawExample::Classification { text, label } => Ok(Some(Example {
            input: tokenize_document(text, vocab, opts),
            target: Target::Class(*label),
            text: ExampleText::Document { text: text.clone() },
        })),
        RawExample::Qa { context, question, answers } => {
            let first = answers
                .first()
                .ok_or_else(|| Error::Data(format!("QA example without answers: {question:?}")))?;
            let mut words = split_words(context);
            let (start, end) = align_answer(&words, first)?;
            if let Some(max) = opts.max_tokens {
                if end >= max {
                    log::debug!("dropping QA example whose answer lies past {max} context tokens");
                    return Ok(None);
                }
                words.truncate(max);
            }
            let ctx: Vec<u32> = words.iter().map(|w| vocab.id(&w.text)).collect();
            let q: Vec<u32> = normalize(question).iter().map(|w| vocab.id(w)).collect();
            Ok(Some(Example {
                input: TokenSequence::question_answer(&ctx, &q),
                target: Target::Span { start, end },
                text: ExampleText::Qa {
                    context: context.clone(),
                    question: question.clone(),
                    answers: answers.iter().map(|a| a.text.clone()).collect(),
                    context_words: words.into_iter().map(|w| w.text).collect(),
                },
            }))
        }
    }
}

pub fn tokenize_all(raw: &[RawExample], vocab: &Vocabulary, opts: &TokenizeOptions) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        if let Some(e) = tokenize_example(r, vocab, opts)? {
            out.push(e);
        }
    }
    Ok(out)
}
