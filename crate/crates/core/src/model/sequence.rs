use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const FIRST_WORD_ID: u32 = 3;

/// Token indices for one model input.
///
/// Documents are `[BOS, w...]`. Question answering inputs are
/// `[BOS, context..., SEP, question...]` with `context_len` recording `M`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    context_len: Option<usize>,
}

impl TokenSequence {
    pub fn document(words: &[u32]) -> Self {
        let mut tokens = Vec::with_capacity(words.len() + 1);
        tokens.push(BOS_ID);
        tokens.extend_from_slice(words);
        Self { tokens, context_len: None }
    }

    pub fn question_answer(context: &[u32], question: &[u32]) -> Self {
        let mut tokens = Vec::with_capacity(context.len() + question.len() + 2);
        tokens.push(BOS_ID);
        tokens.extend_from_slice(context);
        tokens.push(SEP_ID);
        tokens.extend_from_slice(question);
        Self { tokens, context_len: Some(context.len()) }
    }

    /// Rebuild from raw parts, checking the structural invariants.
    pub fn from_parts(tokens: Vec<u32>, context_len: Option<usize>) -> Result<Self> {
        let seq = Self { tokens, context_len };
        seq.check_structure()?;
        Ok(seq)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn context_len(&self) -> Option<usize> {
        self.context_len
    }

    pub fn is_question_answer(&self) -> bool {
        self.context_len.is_some()
    }

    /// Position of the separator, for QA sequences.
    pub fn separator(&self) -> Option<usize> {
        self.context_len.map(|m| m + 1)
    }

    /// Context token ids (QA only).
    pub fn context(&self) -> Option<&[u32]> {
        self.context_len.map(|m| &self.tokens[1..1 + m])
    }

    /// Question token ids (QA only).
    pub fn question(&self) -> Option<&[u32]> {
        self.context_len.map(|m| &self.tokens[m + 2..])
    }

    fn check_structure(&self) -> Result<()> {
        if self.tokens.first() != Some(&BOS_ID) {
            return Err(Error::InvalidInput("sequence must start with the begin symbol".into()));
        }
        let seps = self.tokens.iter().filter(|&&t| t == SEP_ID).count();
        match self.context_len {
            None if seps > 0 => Err(Error::InvalidInput("document contains a separator".into())),
            None => Ok(()),
            Some(m) => {
                if seps != 1 || self.tokens.get(m + 1) != Some(&SEP_ID) {
                    Err(Error::InvalidInput(
                        "QA sequence needs exactly one separator after the context".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        self.check_structure()?;
        if let Some(&bad) = self.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token {bad} outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qa_layout() {
        let s = TokenSequence::question_answer(&[5, 6, 7], &[8, 9]);
        assert_eq!(s.tokens(), &[BOS_ID, 5, 6, 7, SEP_ID, 8, 9]);
        assert_eq!(s.context(), Some(&[5, 6, 7][..]));
        assert_eq!(s.question(), Some(&[8, 9][..]));
        assert_eq!(s.separator(), Some(4));
        assert_eq!(s.tokens().iter().filter(|&&t| t == SEP_ID).count(), 1);
    }

    #[test]
    fn structure_checks() {
        assert!(TokenSequence::from_parts(vec![5, 6], None).is_err());
        assert!(TokenSequence::from_parts(vec![BOS_ID, SEP_ID], None).is_err());
        assert!(TokenSequence::from_parts(vec![BOS_ID, 5, SEP_ID, SEP_ID], Some(1)).is_err());
        assert!(TokenSequence::from_parts(vec![BOS_ID, 5, SEP_ID, 6], Some(1)).is_ok());
        let doc = TokenSequence::document(&[3, 40]);
        assert!(doc.validate(41).is_ok());
        assert!(doc.validate(40).is_err());
    }
}
