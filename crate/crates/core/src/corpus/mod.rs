//! Dataset assembly: JSONL records are canonicalized, parsed under a
//! corpus-extended grammar into target derivations, and labeled with copy
//! supervision against their class environment.

mod canon;
mod synth;
mod text;
pub mod vocab;

pub use canon::{canonicalize, CanonError};
pub use synth::{
    generate_synthetic, generate_synthetic_with, synth_records, SynthOptions, SynthStats,
};
pub use text::{camel_split, strip_doc};
pub use vocab::{build_vocab, VocabThresholds, Vocabulary};

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grammar::{
    detokenize, tokenize_code, Derivation, Grammar, RuleKind, MAX_RULES, MAX_TOKENS,
};

/// Upper bound on |NL| + 2·|variables| + 2·|methods| per example; longer
/// records are dropped rather than truncated.
pub const MAX_COMBINED_INPUT: usize = 200;

/// One training or evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Lower-cased NL tokens, camel pieces followed by their original word.
    pub nl: Vec<String>,
    /// Member variables as (name, type).
    pub variables: Vec<(String, String)>,
    /// Member methods as (name, return type).
    pub methods: Vec<(String, String)>,
    /// Canonicalized source text.
    pub code: String,
    pub target: Derivation,
    /// Per-step index into [`Example::env_slots`] where the step's identifier
    /// terminal equals that environment entry; `None` elsewhere.
    pub copy_labels: Vec<Option<usize>>,
}

impl Example {
    /// The copyable environment entries, grouped as all variable types, all
    /// variable names, all method return types, all method names.
    pub fn env_slots(&self) -> Vec<&str> {
        let mut slots = Vec::with_capacity(2 * (self.variables.len() + self.methods.len()));
        slots.extend(self.variables.iter().map(|(_, t)| t.as_str()));
        slots.extend(self.variables.iter().map(|(n, _)| n.as_str()));
        slots.extend(self.methods.iter().map(|(_, r)| r.as_str()));
        slots.extend(self.methods.iter().map(|(n, _)| n.as_str()));
        slots
    }

    pub fn combined_input_len(&self) -> usize {
        self.nl.len() + 2 * self.variables.len() + 2 * self.methods.len()
    }
}

/// For each derivation step, the first environment slot (in
/// types/names/returns/method-names order) whose entry equals the step's
/// identifier terminal.
pub fn label_copies(g: &Grammar, target: &Derivation, slots: &[&str]) -> Vec<Option<usize>> {
    target
        .steps
        .iter()
        .map(|step| {
            let rule = g.rule(step.rule);
            if rule.kind != RuleKind::IdentifierTerminal {
                return None;
            }
            let text = g.terminal_text(rule.single_terminal()?);
            slots.iter().position(|s| *s == text)
        })
        .collect()
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub nl: String,
    pub code: String,
    pub var_names: Vec<String>,
    pub var_types: Vec<String>,
    pub method_names: Vec<String>,
    pub method_returns: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct LoadStats {
    pub loaded: usize,
    pub skipped_unparseable: usize,
    pub skipped_length: usize,
    /// Records whose documentation stripped down to no words at all.
    pub skipped_empty_nl: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub grammar: Grammar,
    pub examples: Vec<Example>,
    pub stats: LoadStats,
}

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>, DatasetError> {
    parse_records(&fs::read_to_string(path)?)
}

/// Parses JSONL text; blank lines are allowed, anything else malformed is an
/// error naming the 1-based line.
pub fn parse_records(text: &str) -> Result<Vec<RawRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| DatasetError::Malformed { line: i + 1, msg };
        let rec: RawRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if rec.var_names.len() != rec.var_types.len() {
            return Err(malformed(format!(
                "var_names has {} entries but var_types has {}",
                rec.var_names.len(),
                rec.var_types.len()
            )));
        }
        if rec.method_names.len() != rec.method_returns.len() {
            return Err(malformed(format!(
                "method_names has {} entries but method_returns has {}",
                rec.method_names.len(),
                rec.method_returns.len()
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// A record after canonicalization, before parsing under the shared grammar.
#[derive(Debug, Clone)]
pub enum Prepared {
    Ready {
        nl: Vec<String>,
        code_tokens: Vec<String>,
        variables: Vec<(String, String)>,
        methods: Vec<(String, String)>,
    },
    TooLong,
    Unparseable,
    EmptyNl,
}

pub fn prepare_record(rec: &RawRecord) -> Prepared {
    let Ok(toks) = tokenize_code(&rec.code) else {
        return Prepared::Unparseable;
    };
    if toks.len() > MAX_TOKENS {
        return Prepared::TooLong;
    }
    let g = Grammar::java_member().extended(toks.iter().map(String::as_str), []);
    let Ok(d) = g.parse(&toks) else {
        return Prepared::Unparseable;
    };
    if d.len() > MAX_RULES {
        return Prepared::TooLong;
    }
    let nl = strip_doc(&rec.nl);
    if nl.is_empty() {
        return Prepared::EmptyNl;
    }
    let variables: Vec<(String, String)> = rec
        .var_names
        .iter()
        .cloned()
        .zip(rec.var_types.iter().cloned())
        .collect();
    let methods: Vec<(String, String)> = rec
        .method_names
        .iter()
        .cloned()
        .zip(rec.method_returns.iter().cloned())
        .collect();
    if nl.len() + 2 * variables.len() + 2 * methods.len() > MAX_COMBINED_INPUT {
        return Prepared::TooLong;
    }
    Prepared::Ready { nl, code_tokens: canon::canonical_tokens(&g, &d), variables, methods }
}

/// Extends the base grammar with every ready record's canonical code tokens
/// and environment strings, so targets parse and environment entries are
/// copyable.
pub fn corpus_grammar<'a>(prepared: impl IntoIterator<Item = &'a Prepared>) -> Grammar {
    let mut code: Vec<&str> = Vec::new();
    let mut env: Vec<&str> = Vec::new();
    for p in prepared {
        if let Prepared::Ready { code_tokens, variables, methods, .. } = p {
            code.extend(code_tokens.iter().map(String::as_str));
            for (n, t) in variables.iter().chain(methods.iter()) {
                env.push(n);
                env.push(t);
            }
        }
    }
    Grammar::java_member().extended(code, env)
}

/// Builds examples under a grammar that must already cover the records (see
/// [`corpus_grammar`]).
pub fn examples_from(g: &Grammar, prepared: &[Prepared]) -> (Vec<Example>, LoadStats) {
    let mut stats = LoadStats::default();
    let mut examples = Vec::new();
    for p in prepared {
        match p {
            Prepared::Unparseable => stats.skipped_unparseable += 1,
            Prepared::TooLong => stats.skipped_length += 1,
            Prepared::EmptyNl => stats.skipped_empty_nl += 1,
            Prepared::Ready { nl, code_tokens, variables, methods } => {
                let Ok(target) = g.parse(code_tokens) else {
                    stats.skipped_unparseable += 1;
                    continue;
                };
                let mut ex = Example {
                    nl: nl.clone(),
                    variables: variables.clone(),
                    methods: methods.clone(),
                    code: detokenize(code_tokens),
                    target,
                    copy_labels: Vec::new(),
                };
                ex.copy_labels = label_copies(g, &ex.target, &ex.env_slots());
                stats.loaded += 1;
                examples.push(ex);
            }
        }
    }
    (examples, stats)
}

pub fn build_dataset(records: &[RawRecord]) -> Dataset {
    let prepared: Vec<Prepared> = records.par_iter().map(prepare_record).collect();
    let grammar = corpus_grammar(&prepared);
    let (examples, stats) = examples_from(&grammar, &prepared);
    Dataset { grammar, examples, stats }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    Ok(build_dataset(&read_records(path)?))
}
