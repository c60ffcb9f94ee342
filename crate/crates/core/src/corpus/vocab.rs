//! Vocabulary tables mapping words, types, and production rules to dense
//! indices. Every table reserves index 0 for padding and index 1 for the
//! unknown entry, and construction is deterministic: members are chosen by
//! occurrence thresholds and ordered lexicographically (token tables) or by
//! rule id (rule tables).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::text::camel_split;
use super::Example;
use crate::grammar::{Grammar, NtId, RuleId, RuleKind};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Previous-action slot for the first decoding step.
pub const PREV_BOS: usize = 2;
/// Previous-action slot shared by every identifier or literal rule.
pub const PREV_IDENT_OR_LIT: usize = 3;

/// String-keyed table (NL words and name sub-words, or type names).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenVocab {
    fn new(tokens: Vec<String>) -> Self {
        let mut items = vec!["<pad>".to_string(), "<unk>".to_string()];
        items.extend(tokens);
        items.into()
    }

    pub fn lookup(&self, tok: &str) -> usize {
        self.index.get(tok).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.index.contains_key(tok)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl From<Vec<String>> for TokenVocab {
    fn from(items: Vec<String>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TokenVocab { items, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.items
    }
}

/// Output-rule table: indices 2.. map one-to-one onto grammar rule ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<RuleId>", into = "Vec<RuleId>")]
pub struct RuleVocab {
    rules: Vec<RuleId>,
    index: HashMap<RuleId, usize>,
}

impl RuleVocab {
    pub fn lookup(&self, rule: RuleId) -> usize {
        self.index.get(&rule).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, rule: RuleId) -> bool {
        self.index.contains_key(&rule)
    }

    pub fn rule_at(&self, i: usize) -> Option<RuleId> {
        i.checked_sub(2).and_then(|k| self.rules.get(k).copied())
    }

    pub fn len(&self) -> usize {
        self.rules.len() + 2
    }

    /// (vocabulary index, rule id) pairs in index order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, RuleId)> + '_ {
        self.rules.iter().enumerate().map(|(k, &r)| (k + 2, r))
    }
}

impl From<Vec<RuleId>> for RuleVocab {
    fn from(rules: Vec<RuleId>) -> Self {
        let index = rules.iter().enumerate().map(|(k, &r)| (r, k + 2)).collect();
        RuleVocab { rules, index }
    }
}

impl From<RuleVocab> for Vec<RuleId> {
    fn from(v: RuleVocab) -> Self {
        v.rules
    }
}

/// Previous-action table: pad, unk, the start-of-sequence slot, one shared
/// slot for all identifier/literal rules, then the structural rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<RuleId>", into = "Vec<RuleId>")]
pub struct PrevRuleVocab {
    rules: Vec<RuleId>,
    index: HashMap<RuleId, usize>,
}

impl PrevRuleVocab {
    pub fn lookup(&self, g: &Grammar, prev: Option<RuleId>) -> usize {
        match prev {
            None => PREV_BOS,
            Some(r) if g.rule(r).kind == RuleKind::Structural => {
                self.index.get(&r).copied().unwrap_or(UNK)
            }
            Some(_) => PREV_IDENT_OR_LIT,
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len() + 4
    }
}

impl From<Vec<RuleId>> for PrevRuleVocab {
    fn from(rules: Vec<RuleId>) -> Self {
        let index = rules.iter().enumerate().map(|(k, &r)| (r, k + 4)).collect();
        PrevRuleVocab { rules, index }
    }
}

impl From<PrevRuleVocab> for Vec<RuleId> {
    fn from(v: PrevRuleVocab) -> Self {
        v.rules
    }
}

/// Nonterminal table: a fixed offset over grammar ids, kept as a struct so
/// the pad/unk layout matches the other tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtVocab {
    count: usize,
}

impl NtVocab {
    pub fn new(count: usize) -> Self {
        NtVocab { count }
    }

    pub fn index(&self, nt: NtId) -> usize {
        debug_assert!(nt < self.count);
        nt + 2
    }

    pub fn len(&self) -> usize {
        self.count + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub identifiers: TokenVocab,
    pub types: TokenVocab,
    pub rules: RuleVocab,
    pub prev_rules: PrevRuleVocab,
    pub nonterminals: NtVocab,
}

/// Minimum occurrence counts for table membership. Rules from the grammar
/// text are always kept; the rule threshold applies to the single-terminal
/// rules added for corpus tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabThresholds {
    pub identifiers: usize,
    pub types: usize,
    pub rules: usize,
}

impl Default for VocabThresholds {
    fn default() -> Self {
        VocabThresholds { identifiers: 7, types: 2, rules: 2 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
}

/// Counts one identifier name the way the NL stream does: camel-split pieces,
/// plus the whole lower-cased name when it actually split.
fn count_name(counts: &mut HashMap<String, usize>, name: &str) {
    let pieces = camel_split(name);
    let split = pieces.len() > 1;
    for p in pieces {
        *counts.entry(p).or_insert(0) += 1;
    }
    if split {
        *counts.entry(name.to_lowercase()).or_insert(0) += 1;
    }
}

fn thresholded(counts: HashMap<String, usize>, min: usize) -> Vec<String> {
    let mut kept: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min)
        .map(|(t, _)| t)
        .collect();
    kept.sort_unstable();
    kept
}

pub fn build_vocab(
    g: &Grammar,
    corpus: &[Example],
    thresholds: VocabThresholds,
) -> Result<Vocabulary, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }

    let mut id_counts: HashMap<String, usize> = HashMap::new();
    let mut type_counts: HashMap<String, usize> = HashMap::new();
    let mut rule_counts: HashMap<RuleId, usize> = HashMap::new();
    for ex in corpus {
        for tok in &ex.nl {
            *id_counts.entry(tok.clone()).or_insert(0) += 1;
        }
        for (name, ty) in &ex.variables {
            count_name(&mut id_counts, name);
            *type_counts.entry(ty.clone()).or_insert(0) += 1;
        }
        for (name, ret) in &ex.methods {
            count_name(&mut id_counts, name);
            *type_counts.entry(ret.clone()).or_insert(0) += 1;
        }
        for step in &ex.target.steps {
            *rule_counts.entry(step.rule).or_insert(0) += 1;
        }
    }

    let rules: Vec<RuleId> = g
        .rules()
        .iter()
        .map(|r| r.id)
        .filter(|&id| {
            !g.is_dynamic_rule(id)
                || rule_counts.get(&id).copied().unwrap_or(0) >= thresholds.rules
        })
        .collect();
    let prev_rules: Vec<RuleId> = g
        .rules()
        .iter()
        .filter(|r| r.kind == RuleKind::Structural)
        .map(|r| r.id)
        .collect();

    Ok(Vocabulary {
        identifiers: TokenVocab::new(thresholded(id_counts, thresholds.identifiers)),
        types: TokenVocab::new(thresholded(type_counts, thresholds.types)),
        rules: rules.into(),
        prev_rules: prev_rules.into(),
        nonterminals: NtVocab { count: g.nonterminal_count() },
    })
}
