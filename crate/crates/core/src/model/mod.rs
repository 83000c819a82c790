//! Encoder-decoder model: embeddings, a small trainable encoder, a
//! classification head over the global label space and a span head.

mod adam;
mod config;
mod encoder;
mod network;
mod params;
mod sequence;

pub use adam::{adam_step, AdamConfig, AdamState, DEFAULT_LEARNING_RATE};
pub use config::{LossReduction, Mixing, ModelConfig, TaskMode};
pub use encoder::{encode, Dropout, Encoded};
pub use network::{
    argmax, best_span, classify, loss_grad, nll_loss, predict, predict_span, reduction_weights, softmax,
    span_distributions, weighted_loss, Labeled, Prediction, Target,
};
pub use params::{Layout, ParamVector, Segment};
pub use sequence::{TokenSequence, BOS_ID, FIRST_WORD_ID, SEP_ID, UNK_ID};

#[cfg(test)]
mod tests;
