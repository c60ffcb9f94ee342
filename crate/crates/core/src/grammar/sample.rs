//! Random derivation sampling under rule/token budgets. Used by round-trip
//! tests and to exercise decoding; the budget filter mirrors the decoder's
//! completion guarantee.

use rand::Rng;

use super::{Derivation, Grammar, Step, Sym};

/// Expands the start symbol by uniformly choosing, at every frontier pop,
/// among the rules whose designated completion still fits both budgets. The
/// invariant "steps so far + designated completion of the stack <= budget"
/// holds after every choice, and the designated completion of the popped
/// nonterminal is itself a candidate, so the feasible set is never empty and
/// sampling always terminates with a complete derivation.
pub(super) fn sample_derivation(
    g: &Grammar,
    rng: &mut impl Rng,
    max_rules: usize,
    max_tokens: usize,
) -> Option<Derivation> {
    let (start_r, start_t) = g.completion_cost(g.start());
    if start_r > max_rules || start_t > max_tokens {
        return None;
    }
    let mut stack: Vec<(usize, Option<usize>)> = vec![(g.start(), None)];
    // Designated completion cost of everything currently on the stack.
    let mut pending_rules = start_r;
    let mut pending_tokens = start_t;
    let mut steps: Vec<Step> = Vec::new();
    let mut emitted = 0usize;

    while let Some((nt, parent)) = stack.pop() {
        let (nt_r, nt_t) = g.completion_cost(nt);
        pending_rules -= nt_r;
        pending_tokens -= nt_t;
        let rule_budget = max_rules - steps.len() - pending_rules;
        let token_budget = max_tokens - emitted - pending_tokens;
        let feasible: Vec<usize> = g
            .rules_for(nt)
            .iter()
            .copied()
            .filter(|&rid| {
                let (r, t) = g.rule_completion_cost(rid);
                r <= rule_budget && t <= token_budget
            })
            .collect();
        debug_assert!(!feasible.is_empty(), "budget invariant violated");
        let rid = feasible[rng.random_range(0..feasible.len())];
        let idx = steps.len();
        steps.push(Step { rule: rid, parent });
        for sym in g.rule(rid).rhs.iter().rev() {
            match sym {
                Sym::Nt(child) => {
                    stack.push((*child, Some(idx)));
                    let (cr, ct) = g.completion_cost(*child);
                    pending_rules += cr;
                    pending_tokens += ct;
                }
                Sym::Term(_) => emitted += 1,
            }
        }
    }
    Some(Derivation { steps })
}
