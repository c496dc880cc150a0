// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic decoder-only transformer with hook points.
//!
//! Architecture: learned absolute positions added to token embeddings,
//! pre-norm blocks (RMS norm, causal multi-head attention, residual; RMS
//! norm, GELU feed-forward, residual), a final RMS norm and an untied
//! unembedding. No biases.

mod bundle;
mod config;
mod forward;
mod generate;
mod tokenizer;

pub use bundle::{
    load_bundle, plant_association, synthesize_bundle, ModelBundle, Tensor, INIT_SCALE,
    PLANT_READOUT_GAIN, PLANT_VALUE_GAIN,
};
pub use config::ModelConfig;
pub use forward::{
    argmax, forward, forward_from, head_logits, softmax, AppliedIntervention, ForwardTrace, Intervention,
    PositionSet,
};
pub use generate::{generate, generate_tokens, Generation, GenerationRecord};
pub use tokenizer::{
    byte_token, parse_byte_token, token_bytes, toy_vocabulary, TokenSeq, Vocabulary, EOT_TOKEN, TOY_WORDS,
    UNK_TOKEN,
};

/// Toy config sized to a vocabulary.
pub fn toy_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        ..ModelConfig::default()
    }
}
