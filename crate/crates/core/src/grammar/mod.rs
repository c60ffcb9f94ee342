//! Context-free grammar over Java-like token streams, and the production-rule
//! derivations that decoding and training operate on.
//!
//! A [`Grammar`] is loaded from a plain-text file (format documented on
//! [`Grammar::from_text`]), optionally extended with identifiers and literals
//! observed in a corpus, and then drives parsing ([`Grammar::parse`]),
//! realization of derivations back into tokens ([`Grammar::realize`]), and
//! validation of raw rule sequences ([`Grammar::validate`]).

mod earley;
mod lexer;
mod sample;

pub use lexer::{detokenize, tokenize_code, LexError};

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

/// Dense index of a nonterminal within a [`Grammar`].
pub type NtId = usize;
/// Dense index of a terminal within a [`Grammar`].
pub type TermId = usize;
/// Dense rule id; ids follow file order and extension order.
pub type RuleId = usize;

/// Hard cap on derivation length, mirroring the decoder's rule budget.
pub const MAX_RULES: usize = 500;
/// Hard cap on code token count, mirroring the decoder's token budget.
pub const MAX_TOKENS: usize = 150;

/// The shipped Java-subset grammar for single member-method declarations.
pub const JAVA_MEMBER_GRAMMAR: &str = include_str!("../../grammars/java_member.grammar");

/// One grammar symbol: a nonterminal or a terminal token.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Sym {
    Nt(NtId),
    Term(TermId),
}

/// How a rule participates in decoding and previous-rule collapsing.
///
/// `IdentifierTerminal` and `LiteralTerminal` rules expand a flagged
/// nonterminal into a single terminal; both collapse to the shared
/// identifier-or-literal embedding when fed back as the previous rule.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RuleKind {
    Structural,
    IdentifierTerminal,
    LiteralTerminal,
}

/// Open literal classes that corpus extension can add terminals to.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LiteralClass {
    Number,
    Str,
    Char,
}

/// Role of a literal-flagged nonterminal: `Closed` sets keep only the rules
/// written in the grammar file, `Open` sets also accept corpus tokens of the
/// given lexical class.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum LitNt {
    None,
    Closed,
    Open(LiteralClass),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductionRule {
    pub id: RuleId,
    pub lhs: NtId,
    pub rhs: Vec<Sym>,
    pub kind: RuleKind,
}

impl ProductionRule {
    /// The terminal text id when the rule is a single-terminal expansion.
    pub fn single_terminal(&self) -> Option<TermId> {
        match self.rhs.as_slice() {
            [Sym::Term(t)] => Some(*t),
            _ => None,
        }
    }
}

/// One derivation step: the rule applied, and the index of the earlier step
/// whose right-hand side introduced the nonterminal this step expands.
/// Step 0 expands the start symbol and has no parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub rule: RuleId,
    pub parent: Option<usize>,
}

/// A depth-first, left-to-right expansion of the start symbol.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Derivation {
    pub steps: Vec<Step>,
}

impl Derivation {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rule_ids(&self) -> Vec<RuleId> {
        self.steps.iter().map(|s| s.rule).collect()
    }
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("grammar line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("grammar line {line}: undefined symbol `{symbol}`")]
    UndefinedSymbol { line: usize, symbol: String },
    #[error("grammar line {line}: duplicate rule `{rule}`")]
    DuplicateRule { line: usize, rule: String },
    #[error("grammar file has no start directive")]
    MissingStart,
    #[error("nonterminal `{0}` cannot derive any finite token string")]
    Unproductive(String),
    #[error("grammar io: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures when replaying a rule sequence against the frontier stack.
#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("step {step}: rule {rule} expands `{lhs}` but the frontier expects `{expected}`")]
    LhsMismatch {
        step: usize,
        rule: RuleId,
        lhs: String,
        expected: String,
    },
    #[error("step {step}: unknown rule id {rule}")]
    UnknownRule { step: usize, rule: RuleId },
    #[error("step {step}: parent {got:?} recorded, but the frontier was pushed by step {want:?}")]
    ParentMismatch {
        step: usize,
        got: Option<usize>,
        want: Option<usize>,
    },
    #[error("{0} nonterminal(s) left unexpanded on the frontier")]
    LeftoverFrontier(usize),
    #[error("step {step}: rules remain after the frontier emptied")]
    RulesAfterEmpty { step: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no parse: blocked at token index {failed_at}")]
    NoParse { failed_at: usize },
    #[error("input has {got} tokens, over the {max}-token limit")]
    TooLong { got: usize, max: usize },
    #[error("empty token sequence")]
    Empty,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    nt_index: HashMap<String, NtId>,
    term_index: HashMap<String, TermId>,
    rules: Vec<ProductionRule>,
    rules_by_lhs: Vec<Vec<RuleId>>,
    rule_set: HashMap<(NtId, Vec<Sym>), RuleId>,
    start: NtId,
    identifier_nts: Vec<bool>,
    literal_nts: Vec<LitNt>,
    /// Terminals appearing in any structural rule: keywords and punctuation.
    /// These never become identifier/literal terminals during extension.
    reserved_terms: Vec<bool>,
    /// Minimum number of rules / tokens needed to fully expand each nonterminal.
    // Rules with id >= static_rules were appended by `extended`; ids below it
    // come from the grammar text itself.
    static_rules: usize,
    // (rules, tokens) of the designated cheapest completion per nonterminal,
    // minimized lexicographically so both components come from one achievable
    // expansion. `usize::MAX` marks unproductive nonterminals.
    nt_cost: Vec<(usize, usize)>,
    // True per-dimension token minimum; a sound lower bound for parse pruning
    // (the designated completion above may spend more tokens than this).
    nt_min_tokens: Vec<usize>,
}

impl Grammar {
    /// Parses grammar-file text.
    ///
    /// Format: UTF-8 lines; `#` starts a comment (outside quotes); blank
    /// lines ignored. The first directive line must be `start: <NT>`. Rules
    /// are `Lhs -> sym sym ...` with terminals single-quoted (`\'` and `\\`
    /// escapes). `identifier_nt: <NT>` flags identifier-producing
    /// nonterminals; `literal_nt: <NT> [number|string|char]` flags
    /// literal-producing ones, with the optional class opening the set to
    /// corpus extension. Rule ids are assigned in file order.
    pub fn from_text(text: &str) -> Result<Grammar, GrammarError> {
        enum Item {
            Start(String),
            IdentNt(String),
            LitNt(String, LitNt),
            Rule(String, Vec<RawSym>),
        }
        enum RawSym {
            Nt(String),
            Term(String),
        }

        let mut items: Vec<(usize, Item)> = Vec::new();
        let mut saw_any = false;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw_line, line_no)?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !saw_any {
                saw_any = true;
                if !line.starts_with("start:") {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        msg: "first directive must be `start: <NonTerminal>`".into(),
                    });
                }
            }
            if let Some(rest) = line.strip_prefix("start:") {
                let name = rest.trim();
                check_nt_name(name, line_no)?;
                if items.iter().any(|(_, i)| matches!(i, Item::Start(_))) {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        msg: "duplicate start directive".into(),
                    });
                }
                items.push((line_no, Item::Start(name.to_string())));
            } else if let Some(rest) = line.strip_prefix("identifier_nt:") {
                let name = rest.trim();
                check_nt_name(name, line_no)?;
                items.push((line_no, Item::IdentNt(name.to_string())));
            } else if let Some(rest) = line.strip_prefix("literal_nt:") {
                let mut parts = rest.trim().split_whitespace();
                let name = parts.next().unwrap_or("");
                check_nt_name(name, line_no)?;
                let class = match parts.next() {
                    None => LitNt::Closed,
                    Some("number") => LitNt::Open(LiteralClass::Number),
                    Some("string") => LitNt::Open(LiteralClass::Str),
                    Some("char") => LitNt::Open(LiteralClass::Char),
                    Some(other) => {
                        return Err(GrammarError::Syntax {
                            line: line_no,
                            msg: format!("unknown literal class `{other}`"),
                        })
                    }
                };
                if parts.next().is_some() {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        msg: "trailing text after literal_nt directive".into(),
                    });
                }
                items.push((line_no, Item::LitNt(name.to_string(), class)));
            } else if let Some(arrow) = line.find("->") {
                let lhs = line[..arrow].trim();
                check_nt_name(lhs, line_no)?;
                let rhs_text = line[arrow + 2..].trim();
                let syms = parse_rhs(rhs_text, line_no)?;
                if syms.is_empty() {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        msg: "empty right-hand side".into(),
                    });
                }
                let syms = syms
                    .into_iter()
                    .map(|(is_term, s)| {
                        if is_term {
                            RawSym::Term(s)
                        } else {
                            RawSym::Nt(s)
                        }
                    })
                    .collect();
                items.push((line_no, Item::Rule(lhs.to_string(), syms)));
            } else {
                return Err(GrammarError::Syntax {
                    line: line_no,
                    msg: "expected a directive or a rule containing `->`".into(),
                });
            }
        }

        // Nonterminals are exactly the set of left-hand sides, in first-use order.
        let mut g = GrammarBuilder::default();
        for (_, item) in &items {
            if let Item::Rule(lhs, _) = item {
                g.intern_nt(lhs);
            }
        }

        let mut start: Option<NtId> = None;
        for (line, item) in &items {
            match item {
                Item::Start(name) => {
                    start = Some(g.lookup_nt(name, *line)?);
                }
                Item::IdentNt(name) => {
                    let nt = g.lookup_nt(name, *line)?;
                    g.identifier_nts[nt] = true;
                }
                Item::LitNt(name, class) => {
                    let nt = g.lookup_nt(name, *line)?;
                    g.literal_nts[nt] = *class;
                }
                Item::Rule(lhs, raw_rhs) => {
                    let lhs_id = g.lookup_nt(lhs, *line)?;
                    let mut rhs = Vec::with_capacity(raw_rhs.len());
                    for sym in raw_rhs {
                        match sym {
                            RawSym::Nt(name) => rhs.push(Sym::Nt(g.lookup_nt(name, *line)?)),
                            RawSym::Term(tok) => rhs.push(Sym::Term(g.intern_term(tok))),
                        }
                    }
                    g.push_rule(lhs_id, rhs, *line)?;
                }
            }
        }

        let start = start.ok_or(GrammarError::MissingStart)?;
        g.finish(start)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Grammar, GrammarError> {
        Grammar::from_text(&std::fs::read_to_string(path)?)
    }

    /// Loads the shipped Java-subset grammar.
    pub fn java_member() -> Grammar {
        static BASE: std::sync::OnceLock<Grammar> = std::sync::OnceLock::new();
        BASE.get_or_init(|| {
            Grammar::from_text(JAVA_MEMBER_GRAMMAR).expect("shipped grammar must load")
        })
        .clone()
    }

    /// Serializes the grammar so that reloading reproduces identical symbol
    /// and rule ids.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "start: {}", self.nonterminals[self.start]);
        for (nt, flag) in self.identifier_nts.iter().enumerate() {
            if *flag {
                let _ = writeln!(out, "identifier_nt: {}", self.nonterminals[nt]);
            }
        }
        for (nt, lit) in self.literal_nts.iter().enumerate() {
            match lit {
                LitNt::None => {}
                LitNt::Closed => {
                    let _ = writeln!(out, "literal_nt: {}", self.nonterminals[nt]);
                }
                LitNt::Open(class) => {
                    let class = match class {
                        LiteralClass::Number => "number",
                        LiteralClass::Str => "string",
                        LiteralClass::Char => "char",
                    };
                    let _ = writeln!(out, "literal_nt: {} {}", self.nonterminals[nt], class);
                }
            }
        }
        for rule in &self.rules {
            let _ = writeln!(out, "{}", self.rule_display(rule.id));
        }
        out
    }

    pub fn start(&self) -> NtId {
        self.start
    }

    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &ProductionRule {
        &self.rules[id]
    }

    pub fn nonterminal_count(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals.len()
    }

    pub fn nonterminal_name(&self, nt: NtId) -> &str {
        &self.nonterminals[nt]
    }

    pub fn terminal_text(&self, t: TermId) -> &str {
        &self.terminals[t]
    }

    pub fn nt_id(&self, name: &str) -> Option<NtId> {
        self.nt_index.get(name).copied()
    }

    pub fn term_id(&self, text: &str) -> Option<TermId> {
        self.term_index.get(text).copied()
    }

    pub fn rules_for(&self, nt: NtId) -> &[RuleId] {
        &self.rules_by_lhs[nt]
    }

    pub fn is_identifier_nt(&self, nt: NtId) -> bool {
        self.identifier_nts[nt]
    }

    pub fn identifier_nt_ids(&self) -> Vec<NtId> {
        (0..self.nonterminals.len())
            .filter(|&nt| self.identifier_nts[nt])
            .collect()
    }

    pub fn is_literal_nt(&self, nt: NtId) -> bool {
        self.literal_nts[nt] != LitNt::None
    }

    /// Literal class accepted by an open literal nonterminal, if any.
    pub fn literal_class(&self, nt: NtId) -> Option<LiteralClass> {
        match self.literal_nts[nt] {
            LitNt::Open(c) => Some(c),
            _ => None,
        }
    }

    /// True when extension may add new single-terminal rules under `nt`.
    pub fn is_open_nt(&self, nt: NtId) -> bool {
        self.identifier_nts[nt] || self.literal_class(nt).is_some()
    }

    /// Terminals used by structural rules (keywords, operators, punctuation).
    pub fn is_reserved_token(&self, tok: &str) -> bool {
        self.term_id(tok).is_some_and(|t| self.reserved_terms[t])
    }

    pub fn single_terminal_rule(&self, nt: NtId, tok: &str) -> Option<RuleId> {
        let t = self.term_id(tok)?;
        self.rule_set.get(&(nt, vec![Sym::Term(t)])).copied()
    }

    pub fn rule_display(&self, id: RuleId) -> String {
        let rule = &self.rules[id];
        let mut out = format!("{} ->", self.nonterminals[rule.lhs]);
        for sym in &rule.rhs {
            match sym {
                Sym::Nt(nt) => {
                    let _ = write!(out, " {}", self.nonterminals[*nt]);
                }
                Sym::Term(t) => {
                    let _ = write!(out, " '{}'", escape_terminal(&self.terminals[*t]));
                }
            }
        }
        out
    }

    /// Minimum derivation steps needed to fully expand `nt`.
    pub fn min_rules_for(&self, nt: NtId) -> usize {
        self.nt_cost[nt].0
    }

    /// Minimum terminal tokens produced by any full expansion of `nt`.
    pub fn min_tokens_for(&self, nt: NtId) -> usize {
        self.nt_min_tokens[nt]
    }

    /// True for rules appended by [`Grammar::extended`], false for rules from
    /// the grammar text.
    pub fn is_dynamic_rule(&self, rule: RuleId) -> bool {
        rule >= self.static_rules
    }

    /// (rules, tokens) spent by the designated cheapest completion of `nt`.
    /// Both components are achieved by one concrete expansion, so reserving
    /// this much budget guarantees the nonterminal can still be finished.
    pub fn completion_cost(&self, nt: NtId) -> (usize, usize) {
        self.nt_cost[nt]
    }

    /// (rules, tokens) for applying `rule` now and finishing its children via
    /// their designated cheapest completions. Budget filters use this so that
    /// every admitted choice leaves an achievable way to complete.
    pub fn rule_completion_cost(&self, rule: RuleId) -> (usize, usize) {
        let r = &self.rules[rule];
        let mut rules = 1usize;
        let mut tokens = 0usize;
        for sym in &r.rhs {
            match sym {
                Sym::Nt(nt) => {
                    let (cr, ct) = self.nt_cost[*nt];
                    rules = rules.saturating_add(cr);
                    tokens = tokens.saturating_add(ct);
                }
                Sym::Term(_) => tokens += 1,
            }
        }
        (rules, tokens)
    }

    /// Returns a copy of this grammar with single-terminal rules added for
    /// corpus tokens (classified lexically) and for environment strings that
    /// must be copyable verbatim under every identifier nonterminal. Tokens
    /// equal to reserved structural terminals are skipped, as are duplicates.
    /// New rules are appended in (nonterminal id, token) sorted order so the
    /// extension is deterministic.
    pub fn extended<'a>(
        &self,
        code_tokens: impl IntoIterator<Item = &'a str>,
        identifier_strings: impl IntoIterator<Item = &'a str>,
    ) -> Grammar {
        let ident_nts: Vec<NtId> = self.identifier_nt_ids();
        let mut per_nt: HashMap<NtId, BTreeSet<String>> = HashMap::new();

        let add = |nts: &[NtId], tok: &str, per_nt: &mut HashMap<NtId, BTreeSet<String>>| {
            if self.is_reserved_token(tok) || tok.is_empty() {
                return;
            }
            for &nt in nts {
                per_nt.entry(nt).or_default().insert(tok.to_string());
            }
        };

        for tok in code_tokens {
            match token_class(tok) {
                Some(TokenClass::Identifier) => add(&ident_nts, tok, &mut per_nt),
                Some(TokenClass::Literal(class)) => {
                    let nts: Vec<NtId> = (0..self.nonterminals.len())
                        .filter(|&nt| self.literal_class(nt) == Some(class))
                        .collect();
                    add(&nts, tok, &mut per_nt);
                }
                None => {}
            }
        }
        for s in identifier_strings {
            add(&ident_nts, s, &mut per_nt);
        }

        let mut g = self.clone();
        let mut nts: Vec<NtId> = per_nt.keys().copied().collect();
        nts.sort_unstable();
        let mut added = false;
        for nt in nts {
            for tok in &per_nt[&nt] {
                added |= g.push_dynamic_rule(nt, tok);
            }
        }
        if added {
            let (nt_cost, nt_min_tokens) = completion_costs(g.nonterminals.len(), &g.rules);
            g.nt_cost = nt_cost;
            g.nt_min_tokens = nt_min_tokens;
        }
        g
    }

    fn push_dynamic_rule(&mut self, nt: NtId, tok: &str) -> bool {
        let t = match self.term_index.get(tok) {
            Some(&t) => t,
            None => {
                let t = self.terminals.len();
                self.terminals.push(tok.to_string());
                self.term_index.insert(tok.to_string(), t);
                self.reserved_terms.push(false);
                t
            }
        };
        let rhs = vec![Sym::Term(t)];
        if self.rule_set.contains_key(&(nt, rhs.clone())) {
            return false;
        }
        let id = self.rules.len();
        let kind = if self.identifier_nts[nt] {
            RuleKind::IdentifierTerminal
        } else {
            RuleKind::LiteralTerminal
        };
        self.rule_set.insert((nt, rhs.clone()), id);
        self.rules.push(ProductionRule {
            id,
            lhs: nt,
            rhs,
            kind,
        });
        self.rules_by_lhs[nt].push(id);
        true
    }

    /// Replays a raw rule-id sequence against the frontier stack, returning
    /// the derivation with parent pointers filled in.
    pub fn validate(&self, rules: &[RuleId]) -> Result<Derivation, ReplayError> {
        self.replay(rules, None).map(|(d, _)| d)
    }

    /// The terminal yield of a derivation, validating structure and parent
    /// pointers along the way.
    pub fn realize(&self, d: &Derivation) -> Result<Vec<String>, ReplayError> {
        let rules: Vec<RuleId> = d.steps.iter().map(|s| s.rule).collect();
        let parents: Vec<Option<usize>> = d.steps.iter().map(|s| s.parent).collect();
        self.replay(&rules, Some(&parents)).map(|(_, toks)| toks)
    }

    fn replay(
        &self,
        rules: &[RuleId],
        parents: Option<&[Option<usize>]>,
    ) -> Result<(Derivation, Vec<String>), ReplayError> {
        let mut stack: Vec<(Sym, Option<usize>)> = vec![(Sym::Nt(self.start), None)];
        let mut steps = Vec::with_capacity(rules.len());
        let mut tokens = Vec::new();
        for (i, &rid) in rules.iter().enumerate() {
            while let Some(&(Sym::Term(t), _)) = stack.last() {
                stack.pop();
                tokens.push(self.terminals[t].clone());
            }
            let (nt, want_parent) = match stack.pop() {
                Some((Sym::Nt(nt), p)) => (nt, p),
                _ => return Err(ReplayError::RulesAfterEmpty { step: i }),
            };
            let rule = self
                .rules
                .get(rid)
                .ok_or(ReplayError::UnknownRule { step: i, rule: rid })?;
            if rule.lhs != nt {
                return Err(ReplayError::LhsMismatch {
                    step: i,
                    rule: rid,
                    lhs: self.nonterminals[rule.lhs].clone(),
                    expected: self.nonterminals[nt].clone(),
                });
            }
            if let Some(ps) = parents {
                if ps[i] != want_parent {
                    return Err(ReplayError::ParentMismatch {
                        step: i,
                        got: ps[i],
                        want: want_parent,
                    });
                }
            }
            steps.push(Step {
                rule: rid,
                parent: want_parent,
            });
            for sym in rule.rhs.iter().rev() {
                stack.push((*sym, Some(i)));
            }
        }
        while let Some(&(Sym::Term(t), _)) = stack.last() {
            stack.pop();
            tokens.push(self.terminals[t].clone());
        }
        let leftover = stack
            .iter()
            .filter(|(s, _)| matches!(s, Sym::Nt(_)))
            .count();
        if leftover > 0 {
            return Err(ReplayError::LeftoverFrontier(leftover));
        }
        Ok((Derivation { steps }, tokens))
    }

    /// Earley parse of a token sequence into the unique preferred derivation.
    /// Among ambiguous parses, each choice point takes the lowest rule id
    /// that still completes, with leftmost-first split points.
    pub fn parse(&self, tokens: &[String]) -> Result<Derivation, ParseError> {
        self.parse_with_limit(tokens, MAX_TOKENS)
    }

    pub fn parse_with_limit(
        &self,
        tokens: &[String],
        max_tokens: usize,
    ) -> Result<Derivation, ParseError> {
        if tokens.is_empty() {
            return Err(ParseError::Empty);
        }
        if tokens.len() > max_tokens {
            return Err(ParseError::TooLong {
                got: tokens.len(),
                max: max_tokens,
            });
        }
        earley::parse(self, tokens)
    }

    /// Samples a random derivation whose completion fits within the rule and
    /// token budgets. Returns `None` when even the smallest expansion of the
    /// start symbol overflows a budget.
    pub fn sample(
        &self,
        rng: &mut impl rand::Rng,
        max_rules: usize,
        max_tokens: usize,
    ) -> Option<Derivation> {
        sample::sample_derivation(self, rng, max_rules, max_tokens)
    }

    /// Structural checks behind every constructed grammar; loaders call this
    /// and tests may re-run it over artifacts.
    pub fn check_invariants(&self) -> Result<(), GrammarError> {
        for rule in &self.rules {
            assert_eq!(rule.id, self.rules[rule.id].id, "dense rule ids");
            let expect_kind = if self.identifier_nts[rule.lhs] && rule.single_terminal().is_some()
            {
                RuleKind::IdentifierTerminal
            } else if self.literal_nts[rule.lhs] != LitNt::None
                && rule.single_terminal().is_some()
            {
                RuleKind::LiteralTerminal
            } else {
                RuleKind::Structural
            };
            if rule.kind != expect_kind {
                return Err(GrammarError::Syntax {
                    line: 0,
                    msg: format!("rule {} has inconsistent kind", rule.id),
                });
            }
        }
        for nt in 0..self.nonterminals.len() {
            if self.nt_cost[nt].0 == usize::MAX {
                return Err(GrammarError::Unproductive(self.nonterminals[nt].clone()));
            }
        }
        Ok(())
    }
}

/// Lexical class used when deciding which nonterminals a corpus token can
/// extend.
enum TokenClass {
    Identifier,
    Literal(LiteralClass),
}

fn token_class(tok: &str) -> Option<TokenClass> {
    let first = tok.chars().next()?;
    if first.is_ascii_digit() {
        Some(TokenClass::Literal(LiteralClass::Number))
    } else if first == '"' {
        Some(TokenClass::Literal(LiteralClass::Str))
    } else if first == '\'' {
        Some(TokenClass::Literal(LiteralClass::Char))
    } else if first.is_ascii_alphabetic() || first == '_' || first == '$' {
        Some(TokenClass::Identifier)
    } else {
        None
    }
}

#[derive(Default)]
struct GrammarBuilder {
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    nt_index: HashMap<String, NtId>,
    term_index: HashMap<String, TermId>,
    rules: Vec<ProductionRule>,
    rules_by_lhs: Vec<Vec<RuleId>>,
    rule_set: HashMap<(NtId, Vec<Sym>), RuleId>,
    identifier_nts: Vec<bool>,
    literal_nts: Vec<LitNt>,
}

impl GrammarBuilder {
    fn intern_nt(&mut self, name: &str) -> NtId {
        if let Some(&id) = self.nt_index.get(name) {
            return id;
        }
        let id = self.nonterminals.len();
        self.nonterminals.push(name.to_string());
        self.nt_index.insert(name.to_string(), id);
        self.rules_by_lhs.push(Vec::new());
        self.identifier_nts.push(false);
        self.literal_nts.push(LitNt::None);
        id
    }

    fn lookup_nt(&self, name: &str, line: usize) -> Result<NtId, GrammarError> {
        self.nt_index
            .get(name)
            .copied()
            .ok_or_else(|| GrammarError::UndefinedSymbol {
                line,
                symbol: name.to_string(),
            })
    }

    fn intern_term(&mut self, text: &str) -> TermId {
        if let Some(&id) = self.term_index.get(text) {
            return id;
        }
        let id = self.terminals.len();
        self.terminals.push(text.to_string());
        self.term_index.insert(text.to_string(), id);
        id
    }

    fn push_rule(&mut self, lhs: NtId, rhs: Vec<Sym>, line: usize) -> Result<(), GrammarError> {
        if self.rule_set.contains_key(&(lhs, rhs.clone())) {
            let display = format!("{} -> ...", self.nonterminals[lhs]);
            return Err(GrammarError::DuplicateRule {
                line,
                rule: display,
            });
        }
        let id = self.rules.len();
        self.rule_set.insert((lhs, rhs.clone()), id);
        self.rules.push(ProductionRule {
            id,
            lhs,
            rhs,
            kind: RuleKind::Structural, // fixed up in finish()
        });
        self.rules_by_lhs[lhs].push(id);
        Ok(())
    }

    fn finish(self, start: NtId) -> Result<Grammar, GrammarError> {
        let GrammarBuilder {
            nonterminals,
            terminals,
            nt_index,
            term_index,
            mut rules,
            rules_by_lhs,
            rule_set,
            identifier_nts,
            literal_nts,
        } = self;

        for rule in &mut rules {
            rule.kind = if identifier_nts[rule.lhs] && rule.single_terminal().is_some() {
                RuleKind::IdentifierTerminal
            } else if literal_nts[rule.lhs] != LitNt::None && rule.single_terminal().is_some() {
                RuleKind::LiteralTerminal
            } else {
                RuleKind::Structural
            };
        }

        let mut reserved_terms = vec![false; terminals.len()];
        for rule in &rules {
            if rule.kind == RuleKind::Structural {
                for sym in &rule.rhs {
                    if let Sym::Term(t) = sym {
                        reserved_terms[*t] = true;
                    }
                }
            }
        }

        let (nt_cost, nt_min_tokens) = completion_costs(nonterminals.len(), &rules);
        for (nt, flag) in identifier_nts.iter().enumerate() {
            if *flag && literal_nts[nt] != LitNt::None {
                return Err(GrammarError::Syntax {
                    line: 0,
                    msg: format!(
                        "`{}` flagged as both identifier and literal nonterminal",
                        nonterminals[nt]
                    ),
                });
            }
        }

        let static_rules = rules.len();
        let g = Grammar {
            nonterminals,
            terminals,
            nt_index,
            term_index,
            rules,
            rules_by_lhs,
            rule_set,
            start,
            identifier_nts,
            literal_nts,
            reserved_terms,
            static_rules,
            nt_cost,
            nt_min_tokens,
        };
        g.check_invariants()?;
        Ok(g)
    }
}

/// Fixpoint over rules. The first table is the designated cheapest completion
/// per nonterminal as a (rules, tokens) pair minimized lexicographically;
/// since pairwise addition preserves that order, the least fixpoint is the
/// cost of one concrete expansion, so both components are jointly achievable.
/// The second table is the true per-dimension token minimum. `usize::MAX`
/// marks nonterminals that never terminate.
fn completion_costs(n: usize, rules: &[ProductionRule]) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut cost = vec![(usize::MAX, usize::MAX); n];
    let mut min_tokens = vec![usize::MAX; n];
    loop {
        let mut changed = false;
        for rule in rules {
            let mut r = 1usize;
            let mut t = 0usize;
            let mut t_true = 0usize;
            let mut feasible = true;
            for sym in &rule.rhs {
                match sym {
                    Sym::Nt(nt) => {
                        if cost[*nt].0 == usize::MAX {
                            feasible = false;
                            break;
                        }
                        r += cost[*nt].0;
                        t += cost[*nt].1;
                        t_true += min_tokens[*nt];
                    }
                    Sym::Term(_) => {
                        t += 1;
                        t_true += 1;
                    }
                }
            }
            if feasible {
                if (r, t) < cost[rule.lhs] {
                    cost[rule.lhs] = (r, t);
                    changed = true;
                }
                if t_true < min_tokens[rule.lhs] {
                    min_tokens[rule.lhs] = t_true;
                    changed = true;
                }
            }
        }
        if !changed {
            return (cost, min_tokens);
        }
    }
}

fn check_nt_name(name: &str, line: usize) -> Result<(), GrammarError> {
    let mut chars = name.chars();
    let ok = match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {
            chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(GrammarError::Syntax {
            line,
            msg: format!("invalid nonterminal name `{name}`"),
        })
    }
}

/// Removes a `#` comment, honoring quoted terminals so `'#'` stays a token.
fn strip_comment(line: &str, line_no: usize) -> Result<String, GrammarError> {
    let mut out = String::new();
    let mut chars = line.chars();
    let mut in_quote = false;
    while let Some(c) = chars.next() {
        match c {
            '\'' => {
                in_quote = !in_quote;
                out.push(c);
            }
            '\\' if in_quote => {
                out.push(c);
                match chars.next() {
                    Some(e) => out.push(e),
                    None => {
                        return Err(GrammarError::Syntax {
                            line: line_no,
                            msg: "dangling escape in terminal".into(),
                        })
                    }
                }
            }
            '#' if !in_quote => break,
            _ => out.push(c),
        }
    }
    Ok(out)
}

/// Splits a rule right-hand side into `(is_terminal, text)` symbols.
fn parse_rhs(text: &str, line: usize) -> Result<Vec<(bool, String)>, GrammarError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' {
            let mut term = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => {
                        return Err(GrammarError::Syntax {
                            line,
                            msg: "unterminated quoted terminal".into(),
                        })
                    }
                    Some('\\') => match chars.get(i + 1) {
                        Some('\'') => {
                            term.push('\'');
                            i += 2;
                        }
                        Some('\\') => {
                            term.push('\\');
                            i += 2;
                        }
                        _ => {
                            return Err(GrammarError::Syntax {
                                line,
                                msg: "invalid escape in terminal (only \\' and \\\\)".into(),
                            })
                        }
                    },
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(&ch) => {
                        term.push(ch);
                        i += 1;
                    }
                }
            }
            if term.is_empty() {
                return Err(GrammarError::Syntax {
                    line,
                    msg: "empty terminal".into(),
                });
            }
            out.push((true, term));
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '\'' {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect();
            check_nt_name(&name, line)?;
            out.push((false, name));
        }
    }
    Ok(out)
}

fn escape_terminal(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\'', "\\'")
}
