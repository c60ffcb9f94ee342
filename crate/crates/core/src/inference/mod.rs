//! Grammar-constrained decoding. A hypothesis keeps a frontier stack of
//! unexpanded nonterminals; each step pops one, advances the decoder LSTM,
//! and chooses either an in-vocabulary rule or a copy of an environment
//! slot. Candidates are filtered so the designated cheapest completion of
//! the whole stack always fits the rule and token budgets, which makes every
//! decode terminate inside the limits and replay through validation.
//!
//! The decode grammar may extend the model's training grammar with the
//! query's environment strings (shared static rule ids), so copied
//! identifiers realize as ordinary single-terminal rules.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::vocab::UNK;
use crate::grammar::{Derivation, Grammar, NtId, RuleId, Step, Sym};
use crate::model::{Encoded, Model, ModelConfig, Query, StepInputs, StepState};
use crate::tensor::Tape;

/// Token emitted by the UNK escape at identifier nonterminals.
const UNK_TOKEN: &str = "unk_id";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub beam_size: usize,
    pub max_rules: usize,
    pub max_tokens: usize,
    /// Rank hypotheses by `logp / steps` instead of raw `logp`.
    pub length_normalize: bool,
}

impl DecodeOptions {
    pub fn from_config(c: &ModelConfig) -> Self {
        DecodeOptions {
            beam_size: c.beam_size,
            max_rules: c.max_rules,
            max_tokens: c.max_tokens,
            length_normalize: false,
        }
    }
}

/// One chosen decoder action: expand by a vocabulary rule, or copy the
/// string of an encoded environment slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Rule(RuleId),
    Copy(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<String>,
    pub derivation: Derivation,
    pub actions: Vec<Action>,
    /// Sum of chosen-action log-probabilities (raw even when ranking is
    /// length-normalized).
    pub logp: f64,
    /// Set only when the budgets cannot fit any complete program.
    pub truncated: bool,
}

#[derive(Clone)]
struct Hyp {
    frontier: Vec<(NtId, Option<usize>)>,
    steps: Vec<Step>,
    states: Vec<StepState>,
    actions: Vec<Action>,
    logp: f64,
    emitted: usize,
    /// Designated completion cost of everything on the frontier.
    pending_rules: usize,
    pending_tokens: usize,
}

impl Hyp {
    fn root(g: &Grammar, opts: &DecodeOptions) -> Option<Hyp> {
        let (r, t) = g.completion_cost(g.start());
        if r > opts.max_rules || t > opts.max_tokens {
            return None;
        }
        Some(Hyp {
            frontier: vec![(g.start(), None)],
            steps: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            logp: 0.0,
            emitted: 0,
            pending_rules: r,
            pending_tokens: t,
        })
    }

    fn pop_frontier(&mut self, g: &Grammar) -> (NtId, Option<usize>) {
        let (nt, parent) = self.frontier.pop().expect("pop on a complete hypothesis");
        let (r, t) = g.completion_cost(nt);
        self.pending_rules -= r;
        self.pending_tokens -= t;
        (nt, parent)
    }

    fn push_step(&mut self, g: &Grammar, parent: Option<usize>, cand: &Cand, state: StepState) {
        let idx = self.steps.len();
        self.steps.push(Step { rule: cand.rule, parent });
        self.states.push(state);
        self.actions.push(cand.action);
        self.logp += cand.p.ln();
        for sym in g.rule(cand.rule).rhs.iter().rev() {
            match sym {
                Sym::Nt(child) => {
                    self.frontier.push((*child, Some(idx)));
                    let (r, t) = g.completion_cost(*child);
                    self.pending_rules += r;
                    self.pending_tokens += t;
                }
                Sym::Term(_) => self.emitted += 1,
            }
        }
    }

    fn score(&self, opts: &DecodeOptions) -> f64 {
        if opts.length_normalize {
            self.logp / self.steps.len().max(1) as f64
        } else {
            self.logp
        }
    }

    fn finish(self, g: &Grammar) -> Decoded {
        let derivation = Derivation { steps: self.steps };
        let tokens = g.realize(&derivation).expect("completed decode replays");
        Decoded { tokens, derivation, actions: self.actions, logp: self.logp, truncated: false }
    }
}

fn truncated_empty() -> Decoded {
    Decoded {
        tokens: Vec::new(),
        derivation: Derivation { steps: Vec::new() },
        actions: Vec::new(),
        logp: 0.0,
        truncated: true,
    }
}

#[derive(Clone, Copy)]
struct Cand {
    action: Action,
    rule: RuleId,
    p: f64,
}

/// Per-decode context: the encoded input, the growing tape, and the copy
/// rule for each (identifier nonterminal, slot) pair. Expansions are
/// memoized on the action prefix, which determines the decoder state
/// exactly (the tape is in eval mode, so replay is deterministic).
struct Decoder<'a> {
    model: &'a Model,
    g: &'a Grammar,
    opts: &'a DecodeOptions,
    enc: Encoded,
    tape: Tape,
    copy_rules: Vec<Option<Vec<Option<RuleId>>>>,
    memo: HashMap<Vec<Action>, (StepState, Vec<Cand>)>,
}

impl<'a> Decoder<'a> {
    fn new(model: &'a Model, g: &'a Grammar, q: Query, opts: &'a DecodeOptions) -> Self {
        let mut tape = Tape::new(false, 0);
        let enc = model.encode(&mut tape, &q);
        let copy_rules = (0..g.nonterminal_count())
            .map(|nt| {
                if g.is_identifier_nt(nt) && model.config.use_copy {
                    Some(
                        enc.slot_texts
                            .iter()
                            .map(|s| g.single_terminal_rule(nt, s))
                            .collect(),
                    )
                } else {
                    None
                }
            })
            .collect();
        Decoder { model, g, opts, enc, tape, copy_rules, memo: HashMap::new() }
    }

    fn expand_cached(&mut self, hyp: &Hyp, nt: NtId, parent: Option<usize>) -> (StepState, Vec<Cand>) {
        if let Some(hit) = self.memo.get(&hyp.actions) {
            return hit.clone();
        }
        let out = self.expand(hyp, nt, parent);
        self.memo.insert(hyp.actions.clone(), out.clone());
        out
    }

    /// Advances the decoder for the popped nonterminal and enumerates the
    /// budget-feasible actions in deterministic order: vocabulary rules by
    /// vocabulary index, then copy slots by slot index.
    fn expand(&mut self, hyp: &Hyp, nt: NtId, parent: Option<usize>) -> (StepState, Vec<Cand>) {
        let inputs = StepInputs {
            nt,
            prev_rule: hyp.steps.last().map(|s| s.rule),
            parent_rule: parent.map(|p| hyp.steps[p].rule),
        };
        let prev_state = hyp.states.last().unwrap_or(&self.enc.init);
        let parent_top = parent.map_or(self.enc.init.top_h, |p| hyp.states[p].top_h);
        let state = self.model.advance(&mut self.tape, self.g, prev_state, parent_top, inputs);
        let attn = self.model.attend(&mut self.tape, &self.enc, state.top_h);
        let dist = self.model.step_distribution(&mut self.tape, &attn, nt);
        let gen = self.tape.data(dist.gen).to_vec();
        let copy = dist
            .copy
            .map(|(gate, beta)| (self.tape.data(gate)[0], self.tape.data(beta).to_vec()));

        let rule_budget = self.opts.max_rules - hyp.steps.len() - hyp.pending_rules;
        let token_budget = self.opts.max_tokens - hyp.emitted - hyp.pending_tokens;
        let feasible = |rule: RuleId| {
            let (r, t) = self.g.rule_completion_cost(rule);
            r <= rule_budget && t <= token_budget
        };

        let scale = copy.as_ref().map_or(1.0, |(gate, _)| 1.0 - gate);
        let mut cands: Vec<Cand> = self
            .model
            .vocab_actions(nt)
            .iter()
            .filter(|(_, rule)| feasible(*rule))
            .map(|&(vi, rule)| Cand { action: Action::Rule(rule), rule, p: scale * gen[vi] })
            .collect();

        let mut any_copy = false;
        if let (Some((gate, beta)), Some(slot_rules)) = (&copy, &self.copy_rules[nt]) {
            for (j, rule) in slot_rules.iter().enumerate() {
                if let Some(rule) = *rule {
                    if feasible(rule) {
                        any_copy = true;
                        cands.push(Cand { action: Action::Copy(j), rule, p: gate * beta[j] });
                    }
                }
            }
        }

        // UNK escape: with nothing to copy, the out-of-vocabulary mass falls
        // on the literal `unk_id` emission.
        if self.g.is_identifier_nt(nt) && !any_copy {
            if let Some(rule) = self.g.single_terminal_rule(nt, UNK_TOKEN) {
                if feasible(rule) {
                    let p = scale * gen[UNK];
                    match cands.iter_mut().find(|c| c.rule == rule) {
                        Some(c) => c.p += p,
                        None => cands.push(Cand { action: Action::Rule(rule), rule, p }),
                    }
                }
            }
        }
        debug_assert!(!cands.is_empty(), "no feasible action for a reserved-budget nonterminal");
        (state, cands)
    }
}

/// Argmax decode. Ties go to the earliest candidate, so this equals
/// beam_decode with beam size 1.
pub fn greedy_decode(model: &Model, g: &Grammar, q: Query, opts: &DecodeOptions) -> Decoded {
    let mut dec = Decoder::new(model, g, q, opts);
    let Some(mut hyp) = Hyp::root(g, opts) else {
        return truncated_empty();
    };
    while !hyp.frontier.is_empty() {
        let (nt, parent) = hyp.pop_frontier(g);
        let (state, cands) = dec.expand(&hyp, nt, parent);
        let best = cands
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.p.total_cmp(&b.p).then(j.cmp(i)))
            .map(|(i, _)| i)
            .expect("candidate set is never empty");
        hyp.push_step(g, parent, &cands[best], state);
    }
    hyp.finish(g)
}

/// Beam search, run as nested lanes of widths `1..=beam_size` over one
/// shared expansion cache. Within a lane every live hypothesis expands its
/// `width` best actions, completed children retire to the done set, and the
/// best `width` incomplete children survive. The returned done set is the
/// deduplicated union across lanes, which makes a wider beam's best logp
/// at least any narrower beam's by construction (lane 1 is exactly greedy).
/// Ranked by score; ties broken by earlier completion then lexicographic
/// token order.
pub fn beam_decode(model: &Model, g: &Grammar, q: Query, opts: &DecodeOptions) -> Vec<Decoded> {
    let mut dec = Decoder::new(model, g, q, opts);
    let Some(root) = Hyp::root(g, opts) else {
        return vec![truncated_empty()];
    };
    let mut lanes: Vec<Vec<Hyp>> = (1..=opts.beam_size.max(1)).map(|_| vec![root.clone()]).collect();
    let mut done: Vec<(usize, Decoded)> = Vec::new();
    let mut seen: HashSet<Vec<Action>> = HashSet::new();
    while lanes.iter().any(|l| !l.is_empty()) {
        for (li, lane) in lanes.iter_mut().enumerate() {
            let width = li + 1;
            let mut children: Vec<Hyp> = Vec::new();
            for mut hyp in std::mem::take(lane) {
                let (nt, parent) = hyp.pop_frontier(g);
                let (state, mut cands) = dec.expand_cached(&hyp, nt, parent);
                cands.sort_by(|a, b| b.p.total_cmp(&a.p));
                cands.truncate(width);
                for cand in &cands {
                    let mut child = hyp.clone();
                    child.push_step(g, parent, cand, state.clone());
                    children.push(child);
                }
            }
            children.sort_by(|a, b| b.score(opts).total_cmp(&a.score(opts)));
            for child in children {
                if child.frontier.is_empty() {
                    if seen.insert(child.actions.clone()) {
                        done.push((done.len(), child.finish(g)));
                    }
                } else if lane.len() < width {
                    lane.push(child);
                }
            }
        }
    }
    let key = |d: &Decoded| {
        if opts.length_normalize {
            d.logp / d.derivation.steps.len().max(1) as f64
        } else {
            d.logp
        }
    };
    done.sort_by(|(ia, a), (ib, b)| {
        key(b).total_cmp(&key(a)).then(ia.cmp(ib)).then_with(|| a.tokens.cmp(&b.tokens))
    });
    done.into_iter().map(|(_, d)| d).collect()
}

/// The grammar to decode a query under: the model's own grammar when it
/// already covers every environment string, otherwise a copy extended with
/// the missing ones (so copy actions stay realizable on unseen classes).
pub fn decode_grammar<'g>(g: &'g Grammar, q: &Query<'g>) -> Cow<'g, Grammar> {
    let ident_nts = g.identifier_nt_ids();
    let mut missing: Vec<&str> = Vec::new();
    let mut consider = |s: &'g str| {
        if s.is_empty() || g.is_reserved_token(s) {
            return;
        }
        if ident_nts.iter().any(|&nt| g.single_terminal_rule(nt, s).is_none()) {
            missing.push(s);
        }
    };
    for (name, ty) in q.variables.iter().chain(q.methods.iter()) {
        consider(name);
        consider(ty);
    }
    if missing.is_empty() {
        Cow::Borrowed(g)
    } else {
        Cow::Owned(g.extended([], missing))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub tokens: Vec<String>,
    pub logp: f64,
    pub rules: Vec<RuleId>,
    pub truncated: bool,
}

/// Decodes every query with the configured beam, extending the grammar per
/// query where needed. Deterministic given model and options.
pub fn predict_corpus(model: &Model, queries: &[Query], opts: &DecodeOptions) -> Vec<Prediction> {
    queries
        .par_iter()
        .map(|q| {
            let g = decode_grammar(&model.grammar, q);
            let best = if opts.beam_size == 1 {
                greedy_decode(model, &g, *q, opts)
            } else {
                beam_decode(model, &g, *q, opts).remove(0)
            };
            Prediction {
                tokens: best.tokens,
                logp: best.logp,
                rules: best.derivation.rule_ids(),
                truncated: best.truncated,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionFormat {
    /// One line of space-separated code tokens per input.
    Tokens,
    /// One JSON object per line with tokens, logp, and rule ids.
    Jsonl,
}

pub fn write_predictions(
    path: &Path,
    preds: &[Prediction],
    format: PredictionFormat,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in preds {
        match format {
            PredictionFormat::Tokens => writeln!(out, "{}", p.tokens.join(" "))?,
            PredictionFormat::Jsonl => {
                writeln!(out, "{}", serde_json::to_string(p).expect("prediction serializes"))?
            }
        }
    }
    out.flush()
}
