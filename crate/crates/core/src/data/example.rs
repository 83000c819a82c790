use serde::{Deserialize, Serialize};

use crate::model::{Labeled, Target, TokenSequence};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character offset into the context.
    pub answer_start: usize,
}

/// An example as read from disk, before tokenisation. There is no field
/// naming the dataset an example came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RawExample {
    Classification { text: String, label: usize },
    Qa { context: String, question: String, answers: Vec<Answer> },
}

/// Original text kept alongside the token ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExampleText {
    Document {
        text: String,
    },
    Qa {
        context: String,
        question: String,
        answers: Vec<String>,
        /// Normalised context words, aligned with the context tokens.
        context_words: Vec<String>,
    },
}

/// A tokenised training or test instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: TokenSequence,
    pub target: Target,
    pub text: ExampleText,
}

impl Example {
    /// Text shown when listing retrieved neighbours: the document, or the
    /// question for QA.
    pub fn display_text(&self) -> &str {
        match &self.text {
            ExampleText::Document { text } => text,
            ExampleText::Qa { question, .. } => question,
        }
    }

    /// Gold answers for QA examples.
    pub fn answers(&self) -> &[String] {
        match &self.text {
            ExampleText::Qa { answers, .. } => answers,
            ExampleText::Document { .. } => &[],
        }
    }

    /// Context words `start..=end`, joined by spaces.
    pub fn span_text(&self, start: usize, end: usize) -> Option<String> {
        match &self.text {
            ExampleText::Qa { context_words, .. } if start <= end && end < context_words.len() => {
                Some(context_words[start..=end].join(" "))
            }
            _ => None,
        }
    }
}

impl Labeled for Example {
    fn input(&self) -> &TokenSequence {
        &self.input
    }
    fn target(&self) -> &Target {
        &self.target
    }
}
