//! End-to-end corpus pipeline: synthetic generation through canonicalization,
//! dataset loading, copy labeling, and vocabulary construction.

use ctxgen::corpus::{
    build_dataset, build_vocab, canonicalize, generate_synthetic, label_copies, parse_records,
    synth_records, RawRecord, SynthOptions, VocabThresholds,
};
use ctxgen::grammar::{tokenize_code, RuleKind};

#[test]
fn canonicalize_is_idempotent_over_synthetic_corpus() {
    let (records, _) = synth_records(200, 7, SynthOptions::default());
    for rec in &records {
        let once = canonicalize(&rec.code).unwrap();
        let twice = canonicalize(&once).unwrap();
        assert_eq!(once, twice, "not a fixed point for {:?}", rec.code);
    }
}

#[test]
fn every_target_realizes_and_validates() {
    let ds = generate_synthetic(300, 11);
    assert_eq!(ds.examples.len(), 300);
    for ex in &ds.examples {
        let rules: Vec<_> = ex.target.steps.iter().map(|s| s.rule).collect();
        let replayed = ds.grammar.validate(&rules).unwrap();
        let toks = ds.grammar.realize(&replayed).unwrap();
        assert_eq!(toks, tokenize_code(&ex.code).unwrap());
    }
}

#[test]
fn copy_labels_name_the_matching_environment_entry() {
    let ds = generate_synthetic(300, 13);
    let mut labeled_steps = 0usize;
    for ex in &ds.examples {
        let slots = ex.env_slots();
        assert_eq!(ex.copy_labels.len(), ex.target.steps.len());
        for (step, label) in ex.target.steps.iter().zip(&ex.copy_labels) {
            let rule = ds.grammar.rule(step.rule);
            if let Some(i) = label {
                labeled_steps += 1;
                assert_eq!(rule.kind, RuleKind::IdentifierTerminal);
                let text = ds.grammar.terminal_text(rule.single_terminal().unwrap());
                assert_eq!(slots[*i], text);
                // First match in slot order.
                assert_eq!(slots.iter().position(|s| *s == text), Some(*i));
            }
        }
    }
    assert!(labeled_steps > 100, "corpus barely uses its environment");
}

fn record(code: &str, vars: &[(&str, &str)], methods: &[(&str, &str)]) -> RawRecord {
    RawRecord {
        nl: "does a thing with stuff".into(),
        code: code.into(),
        var_names: vars.iter().map(|(n, _)| n.to_string()).collect(),
        var_types: vars.iter().map(|(_, t)| t.to_string()).collect(),
        method_names: methods.iter().map(|(n, _)| n.to_string()).collect(),
        method_returns: methods.iter().map(|(_, r)| r.to_string()).collect(),
    }
}

#[test]
fn duplicate_environment_names_resolve_to_the_earliest_slot() {
    // "total" is both a variable and a method; the variable-name slot comes
    // first in types/names/returns/method-names order.
    let rec = record(
        "int f(){return total;}",
        &[("total", "int")],
        &[("total", "int")],
    );
    let ds = build_dataset(&[rec]);
    let ex = &ds.examples[0];
    let slots = ex.env_slots();
    let var_slot = 1; // [types: int][names: total][returns: int][methods: total]
    assert_eq!(slots[var_slot], "total");
    let labels: Vec<_> = ex.copy_labels.iter().flatten().collect();
    assert_eq!(labels, vec![&var_slot]);

    // Same member, environment permuted so only the method group carries it.
    let rec = record("int f(){return total;}", &[("count", "int")], &[("total", "int")]);
    let ds = build_dataset(&[rec]);
    let ex = &ds.examples[0];
    let method_slot = ex.env_slots().iter().position(|s| *s == "total").unwrap();
    assert_eq!(method_slot, 3);
    let labels: Vec<_> = ex.copy_labels.iter().flatten().collect();
    assert_eq!(labels, vec![&method_slot]);
}

#[test]
fn loading_identical_text_yields_identical_datasets() {
    let (records, _) = synth_records(60, 21, SynthOptions::default());
    let text: String = records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    let a = build_dataset(&parse_records(&text).unwrap());
    let b = build_dataset(&parse_records(&text).unwrap());
    assert_eq!(a.examples, b.examples);
    assert_eq!(a.grammar.to_text(), b.grammar.to_text());
    assert_eq!(a.stats, b.stats);
}

#[test]
fn vocabulary_resolves_every_token() {
    let ds = generate_synthetic(400, 17);
    let vocab = build_vocab(&ds.grammar, &ds.examples, VocabThresholds::default()).unwrap();
    // Arbitrary garbage maps to UNK rather than failing.
    for junk in ["qqqzzz", "", "☃", "a b c"] {
        assert_eq!(vocab.identifiers.lookup(junk), 1);
        assert_eq!(vocab.types.lookup(junk), 1);
    }
    // Frequent corpus tokens get real indices.
    let mut known = 0usize;
    for ex in &ds.examples {
        for w in &ex.nl {
            if vocab.identifiers.lookup(w) > 1 {
                known += 1;
            }
        }
    }
    assert!(known > 500, "vocabulary missed the bulk of the corpus");
    // Every example's rules stay decodable: static rules are always present.
    for ex in &ds.examples {
        for step in &ex.target.steps {
            if !ds.grammar.is_dynamic_rule(step.rule) {
                assert!(vocab.rules.contains(step.rule));
            }
        }
    }
}

#[test]
fn label_copies_matches_type_strings_too() {
    let g = ctxgen::grammar::Grammar::java_member();
    let toks = tokenize_code("List f(){return items;}").unwrap();
    let ext = g.extended(toks.iter().map(|s| s.as_str()), ["List", "items"]);
    let d = ext.parse(&toks).unwrap();
    // Environment: one variable (items, List). Type slot 0, name slot 1.
    let labels = label_copies(&ext, &d, &["List", "items"]);
    let hits: Vec<_> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|slot| (i, slot)))
        .collect();
    // Both the return type token and the member usage are copyable.
    assert_eq!(hits.len(), 2);
    assert_eq!(hits[0].1, 0);
    assert_eq!(hits[1].1, 1);
}
