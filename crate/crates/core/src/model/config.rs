use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    Classification,
    Span,
}

/// How each encoder layer mixes information across positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mixing {
    /// Every position receives a projection of the sequence mean.
    MeanPool,
    /// Single-head scaled dot-product self-attention.
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    /// Size of the global label space; unused in span mode.
    pub num_classes: usize,
    pub dropout: f64,
    pub task: TaskMode,
    pub mixing: Mixing,
    pub reduction: LossReduction,
    /// Half-width of the uniform initialisation interval.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 20_003,
            embed_dim: 64,
            hidden_dim: 64,
            depth: 2,
            num_classes: 33,
            dropout: 0.1,
            task: TaskMode::Classification,
            mixing: Mixing::MeanPool,
            reduction: LossReduction::Mean,
            init_scale: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < super::FIRST_WORD_ID as usize + 1 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room for word tokens",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.depth == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.task == TaskMode::Classification && self.num_classes < 2 {
            return Err(Error::Config("classification needs at least 2 classes".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}
