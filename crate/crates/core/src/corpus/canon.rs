//! Canonical renaming of method source: the declared method name becomes
//! `function`, parameters become `arg0..`, locals become `loc0..`, and string
//! literals collapse to `"str"`. Names the method does not declare (member
//! fields, other methods' names) pass through untouched.

use std::collections::HashMap;

use crate::grammar::{
    detokenize, tokenize_code, Derivation, Grammar, LexError, LiteralClass, ParseError, RuleKind,
    Sym,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CanonError {
    #[error("lex error: {0}")]
    Lex(#[from] LexError),
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
}

/// Rewrites one method declaration into canonical form. The input must parse
/// under the member grammar (extended with its own tokens).
pub fn canonicalize(code: &str) -> Result<String, CanonError> {
    let toks = tokenize_code(code)?;
    let g = Grammar::java_member().extended(toks.iter().map(String::as_str), []);
    let d = g.parse(&toks)?;
    Ok(detokenize(&canonical_tokens(&g, &d)))
}

/// The canonical token sequence for a parsed method. Renaming is keyed on the
/// name string, so every occurrence of a declared name is rewritten, wherever
/// it appears.
pub(crate) fn canonical_tokens(g: &Grammar, d: &Derivation) -> Vec<String> {
    let rename = rename_map(g, d);
    let children = child_lists(d);
    let mut out = Vec::new();
    emit(g, d, &children, 0, &rename, &mut out);
    out
}

fn rename_map(g: &Grammar, d: &Derivation) -> HashMap<String, String> {
    let declarator = g.nt_id("MethodDeclarator").expect("member grammar");
    let declarator_id = g.nt_id("VariableDeclaratorId").expect("member grammar");
    let formal = g.nt_id("FormalParameter").expect("member grammar");

    let mut map: HashMap<String, String> = HashMap::new();
    let mut args = 0usize;
    let mut locs = 0usize;
    for step in &d.steps {
        let rule = g.rule(step.rule);
        if rule.kind != RuleKind::IdentifierTerminal {
            continue;
        }
        let name = match rule.single_terminal() {
            Some(t) => g.terminal_text(t),
            None => continue,
        };
        let parent_lhs = step.parent.map(|p| g.rule(d.steps[p].rule).lhs);
        if parent_lhs == Some(declarator) {
            map.entry(name.to_string()).or_insert_with(|| "function".to_string());
        } else if parent_lhs == Some(declarator_id) {
            let grand = d.steps[step.parent.unwrap()]
                .parent
                .map(|p| g.rule(d.steps[p].rule).lhs);
            map.entry(name.to_string()).or_insert_with(|| {
                if grand == Some(formal) {
                    args += 1;
                    format!("arg{}", args - 1)
                } else {
                    locs += 1;
                    format!("loc{}", locs - 1)
                }
            });
        }
    }
    map
}

fn child_lists(d: &Derivation) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); d.steps.len()];
    for (i, step) in d.steps.iter().enumerate() {
        if let Some(p) = step.parent {
            children[p].push(i);
        }
    }
    children
}

fn emit(
    g: &Grammar,
    d: &Derivation,
    children: &[Vec<usize>],
    idx: usize,
    rename: &HashMap<String, String>,
    out: &mut Vec<String>,
) {
    let step = &d.steps[idx];
    let rule = g.rule(step.rule);
    match rule.kind {
        RuleKind::IdentifierTerminal => {
            let t = rule.single_terminal().expect("single terminal");
            let text = g.terminal_text(t);
            out.push(rename.get(text).cloned().unwrap_or_else(|| text.to_string()));
        }
        RuleKind::LiteralTerminal if g.literal_class(rule.lhs) == Some(LiteralClass::Str) => {
            out.push("\"str\"".to_string());
        }
        _ => {
            let mut next_child = 0;
            for sym in &rule.rhs {
                match sym {
                    Sym::Term(t) => out.push(g.terminal_text(*t).to_string()),
                    Sym::Nt(_) => {
                        emit(g, d, children, children[idx][next_child], rename, out);
                        next_child += 1;
                    }
                }
            }
        }
    }
}
