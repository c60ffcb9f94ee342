//! Earley recognizer plus derivation reconstruction.
//!
//! Works over any wildcard-free CFG the loader accepts (no epsilon rules, so
//! every completed span is non-empty). Prediction filters rules whose leading
//! terminal cannot scan the next token, which keeps the thousands of dynamic
//! identifier rules out of the chart. Reconstruction resolves ambiguity by
//! taking, at every (nonterminal, span) choice point, the lowest rule id that
//! still completes, with split points tried leftmost-first.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::{Derivation, Grammar, NtId, ParseError, RuleId, Step, Sym, TermId};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
struct Item {
    rule: RuleId,
    dot: usize,
    origin: usize,
}

pub(super) fn parse(g: &Grammar, tokens: &[String]) -> Result<Derivation, ParseError> {
    let n = tokens.len();
    let tok_ids: Vec<Option<TermId>> = tokens.iter().map(|t| g.term_id(t)).collect();

    let mut sets: Vec<Vec<Item>> = vec![Vec::new(); n + 1];
    let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); n + 1];
    let mut waiting: Vec<HashMap<NtId, Vec<Item>>> = vec![HashMap::new(); n + 1];
    let mut completed: HashMap<(NtId, usize, usize), Vec<RuleId>> = HashMap::new();

    let push = |item: Item, k: usize, sets: &mut Vec<Vec<Item>>, seen: &mut Vec<HashSet<Item>>| {
        if seen[k].insert(item) {
            sets[k].push(item);
        }
    };

    predict(g, g.start(), 0, n, &tok_ids, &mut sets, &mut seen);

    for k in 0..=n {
        let mut idx = 0;
        while idx < sets[k].len() {
            let item = sets[k][idx];
            idx += 1;
            let rule = g.rule(item.rule);
            match rule.rhs.get(item.dot) {
                Some(Sym::Term(t)) => {
                    if k < n && tok_ids[k] == Some(*t) {
                        push(
                            Item {
                                rule: item.rule,
                                dot: item.dot + 1,
                                origin: item.origin,
                            },
                            k + 1,
                            &mut sets,
                            &mut seen,
                        );
                    }
                }
                Some(Sym::Nt(b)) => {
                    waiting[k].entry(*b).or_default().push(item);
                    predict(g, *b, k, n, &tok_ids, &mut sets, &mut seen);
                }
                None => {
                    completed
                        .entry((rule.lhs, item.origin, k))
                        .or_default()
                        .push(item.rule);
                    // Every span is non-empty, so waiting[item.origin] is
                    // final by the time any completion lands here.
                    if let Some(parents) = waiting[item.origin].get(&rule.lhs) {
                        for parent in parents.clone() {
                            push(
                                Item {
                                    rule: parent.rule,
                                    dot: parent.dot + 1,
                                    origin: parent.origin,
                                },
                                k,
                                &mut sets,
                                &mut seen,
                            );
                        }
                    }
                }
            }
        }
    }

    for rules in completed.values_mut() {
        rules.sort_unstable();
        rules.dedup();
    }

    if !completed.contains_key(&(g.start(), 0, n)) {
        let failed_at = (1..=n).find(|&k| sets[k].is_empty()).map_or(n, |k| k - 1);
        return Err(ParseError::NoParse { failed_at });
    }

    let mut builder = TreeBuilder {
        g,
        tok_ids: &tok_ids,
        completed: &completed,
        memo: HashMap::new(),
        active: HashSet::new(),
    };
    let tree = builder
        .build(g.start(), 0, n)
        .expect("recognized input must reconstruct");

    let mut steps = Vec::new();
    flatten(&tree, None, &mut steps);
    Ok(Derivation { steps })
}

fn predict(
    g: &Grammar,
    nt: NtId,
    k: usize,
    n: usize,
    tok_ids: &[Option<TermId>],
    sets: &mut [Vec<Item>],
    seen: &mut [HashSet<Item>],
) {
    for &rid in g.rules_for(nt) {
        if let Some(Sym::Term(t)) = g.rule(rid).rhs.first() {
            if k >= n || tok_ids[k] != Some(*t) {
                continue;
            }
        }
        let item = Item {
            rule: rid,
            dot: 0,
            origin: k,
        };
        if seen[k].insert(item) {
            sets[k].push(item);
        }
    }
}

struct Tree {
    rule: RuleId,
    children: Vec<Rc<Tree>>,
}

struct TreeBuilder<'a> {
    g: &'a Grammar,
    tok_ids: &'a [Option<TermId>],
    completed: &'a HashMap<(NtId, usize, usize), Vec<RuleId>>,
    memo: HashMap<(NtId, usize, usize), Option<Rc<Tree>>>,
    active: HashSet<(NtId, usize, usize)>,
}

impl TreeBuilder<'_> {
    /// Lowest-rule-id tree for `nt` spanning tokens [i, j). The active set
    /// guards unit-rule cycles; results computed under a guard rejection are
    /// not memoized.
    fn build(&mut self, nt: NtId, i: usize, j: usize) -> Option<Rc<Tree>> {
        if let Some(hit) = self.memo.get(&(nt, i, j)) {
            return hit.clone();
        }
        if !self.active.insert((nt, i, j)) {
            return None;
        }
        let mut result = None;
        let mut dirty = false;
        if let Some(rules) = self.completed.get(&(nt, i, j)) {
            for &rid in rules {
                let rhs = self.g.rule(rid).rhs.clone();
                match self.split(&rhs, i, j) {
                    SplitResult::Found(children) => {
                        result = Some(Rc::new(Tree {
                            rule: rid,
                            children,
                        }));
                        break;
                    }
                    SplitResult::None { saw_guard } => dirty |= saw_guard,
                }
            }
        }
        self.active.remove(&(nt, i, j));
        if !dirty || result.is_some() {
            self.memo.insert((nt, i, j), result.clone());
        }
        result
    }

    fn split(&mut self, syms: &[Sym], pos: usize, end: usize) -> SplitResult {
        match syms.first() {
            None => {
                if pos == end {
                    SplitResult::Found(Vec::new())
                } else {
                    SplitResult::None { saw_guard: false }
                }
            }
            Some(Sym::Term(t)) => {
                if pos < end && self.tok_ids[pos] == Some(*t) {
                    self.split(&syms[1..], pos + 1, end)
                } else {
                    SplitResult::None { saw_guard: false }
                }
            }
            Some(Sym::Nt(b)) => {
                let rest_min: usize = syms[1..]
                    .iter()
                    .map(|s| match s {
                        Sym::Term(_) => 1,
                        Sym::Nt(nt) => self.g.min_tokens_for(*nt),
                    })
                    .sum();
                let mut saw_guard = false;
                let hi = end.saturating_sub(rest_min);
                for mid in (pos + 1)..=hi {
                    if !self.completed.contains_key(&(*b, pos, mid)) {
                        continue;
                    }
                    let was_active = self.active.contains(&(*b, pos, mid));
                    saw_guard |= was_active;
                    let Some(child) = self.build(*b, pos, mid) else {
                        continue;
                    };
                    match self.split(&syms[1..], mid, end) {
                        SplitResult::Found(mut rest) => {
                            rest.insert(0, child);
                            return SplitResult::Found(rest);
                        }
                        SplitResult::None { saw_guard: sg } => saw_guard |= sg,
                    }
                }
                SplitResult::None { saw_guard }
            }
        }
    }
}

enum SplitResult {
    Found(Vec<Rc<Tree>>),
    None { saw_guard: bool },
}

fn flatten(tree: &Tree, parent: Option<usize>, steps: &mut Vec<Step>) {
    let idx = steps.len();
    steps.push(Step {
        rule: tree.rule,
        parent,
    });
    for child in &tree.children {
        flatten(child, Some(idx), steps);
    }
}
