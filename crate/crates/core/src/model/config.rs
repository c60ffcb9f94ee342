//! Model hyperparameters and ablation toggles.

use serde::{Deserialize, Serialize};

use crate::grammar;

/// Sizes, regularization, decoding limits, and the pathway toggles that the
/// ablation study flips one at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden and word-embedding width; BiLSTMs run `hidden/2` per direction.
    pub hidden: usize,
    /// Width of nonterminal and rule embeddings on the decoder input.
    pub sym_embed: usize,
    /// LSTM depth for the NL encoder and the decoder.
    pub layers: usize,
    /// Dropout rate between LSTM layers and on the combined context vector.
    pub dropout: f64,
    pub use_variables: bool,
    pub use_methods: bool,
    pub use_two_step_attention: bool,
    pub use_camel_encoding: bool,
    pub use_copy: bool,
    pub beam_size: usize,
    pub max_rules: usize,
    pub max_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 1024,
            sym_embed: 512,
            layers: 2,
            dropout: 0.5,
            use_variables: true,
            use_methods: true,
            use_two_step_attention: true,
            use_camel_encoding: true,
            use_copy: true,
            beam_size: 3,
            max_rules: grammar::MAX_RULES,
            max_tokens: grammar::MAX_TOKENS,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and desk-scale runs.
    pub fn tiny(hidden: usize) -> Self {
        ModelConfig {
            hidden,
            sym_embed: hidden.max(4) / 2,
            layers: 1,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return Err(format!("hidden must be even and positive, got {}", self.hidden));
        }
        if self.sym_embed == 0 || self.layers == 0 {
            return Err("sym_embed and layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.beam_size == 0 {
            return Err("beam_size must be at least 1".into());
        }
        if self.max_rules == 0 || self.max_tokens == 0 {
            return Err("decode limits must be positive".into());
        }
        Ok(())
    }
}
