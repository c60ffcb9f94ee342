//! The three comparison systems: tf-idf retrieval with member substitution,
//! a token-level seq2seq with attention-based UNK replacement, and a
//! grammar-constrained rule decoder over the same flat input sequence.
//!
//! All three consume the corpus module's examples and emit plain token
//! sequences, so the metrics module scores every system uniformly.

mod nets;
pub mod retrieval;
pub mod seq2prod;
pub mod seq2seq;

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::Example;

pub use retrieval::{member_substitute, retrieval_predict_corpus, TfIdfIndex};
pub use seq2prod::{train_seq2prod, Seq2Prod};
pub use seq2seq::{parse_failure_rate, train_seq2seq, Seq2Seq, SeqConfig};

/// Separator between the NL, variable, and method sections of a flat input.
pub const SECTION_SEP: &str = "<sep>";
/// Separator between a member's name and its type.
pub const PAIR_SEP: &str = "<ts>";

/// The flat encoder input shared by seq2seq and seq2prod:
/// `NL <sep> name <ts> type ... <sep> name <ts> type ...`.
pub fn flat_input(ex: &Example) -> Vec<String> {
    let mut out = ex.nl.clone();
    out.push(SECTION_SEP.to_string());
    for (name, ty) in &ex.variables {
        out.push(name.clone());
        out.push(PAIR_SEP.to_string());
        out.push(ty.clone());
    }
    out.push(SECTION_SEP.to_string());
    for (name, ty) in &ex.methods {
        out.push(name.clone());
        out.push(PAIR_SEP.to_string());
        out.push(ty.clone());
    }
    out
}

pub const TOK_UNK: usize = 0;
pub const TOK_BOS: usize = 1;
pub const TOK_EOS: usize = 2;

/// Closed token vocabulary with UNK/BOS/EOS specials at fixed indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenVocab {
    /// Keeps every distinct token with count >= `min_count`, in first-seen
    /// order after the specials.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for doc in docs {
            for t in doc {
                let e = counts.entry(t).or_insert(0);
                if *e == 0 {
                    order.push(t);
                }
                *e += 1;
            }
        }
        let tokens = ["<unk>", "<bos>", "<eos>"]
            .into_iter()
            .map(str::to_string)
            .chain(order.into_iter().filter(|t| counts[t] >= min_count).map(str::to_string))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds the lookup table from a saved token list (specials must be
    /// the first three entries, as produced by [`TokenVocab::build`]).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        assert!(tokens.len() >= 3, "token vocabulary is missing specials");
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TokenVocab { tokens, index }
    }

    pub fn lookup(&self, t: &str) -> usize {
        self.index.get(t).copied().unwrap_or(TOK_UNK)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("empty training corpus")]
    EmptyTrainingCorpus,
    #[error("baseline io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::tensor::CheckpointError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}
