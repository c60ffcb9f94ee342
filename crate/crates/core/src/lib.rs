//! Generation of Java member methods from natural-language documentation and
//! class context, decoded as grammar production-rule sequences so that every
//! output is syntactically well formed.
//!
//! Pipeline: [`grammar`] defines the target-language CFG, parsing and
//! derivation replay; [`corpus`] loads and canonicalizes (NL, environment,
//! code) examples and builds vocabularies; [`tensor`] is a small reverse-mode
//! autodiff engine; [`model`] holds the encoder/decoder with two-step
//! attention and a supervised copy mechanism; [`inference`] does greedy and
//! beam decoding over the grammar frontier; [`baselines`] are retrieval,
//! token seq2seq, and single-attention rule-decoder comparisons; [`metrics`]
//! scores exact match and corpus BLEU; [`cli`] ties it together.

pub mod corpus;
pub mod grammar;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod tensor;
