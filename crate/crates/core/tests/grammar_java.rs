//! The shipped Java-subset grammar: loading, parsing real method shapes, and
//! sample/parse round trips.

use ctxgen::grammar::{tokenize_code, Grammar, ParseError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn parse_src(g: &Grammar, src: &str) -> Result<ctxgen::grammar::Derivation, ParseError> {
    let toks = tokenize_code(src).unwrap();
    let ext = g.extended(toks.iter().map(|s| s.as_str()), []);
    ext.parse(&toks)
}

#[test]
fn shipped_grammar_loads_with_invariants() {
    let g = Grammar::java_member();
    g.check_invariants().unwrap();
    assert_eq!(g.nonterminal_name(g.start()), "MemberDeclaration");
    assert!(g.rules().len() > 100);
    // Text round trip preserves every rule id.
    let g2 = Grammar::from_text(&g.to_text()).unwrap();
    assert_eq!(g.to_text(), g2.to_text());
}

#[test]
fn parses_representative_methods() {
    let g = Grammar::java_member();
    for src in [
        "void function(int arg0){int loc0=arg0;}",
        "public int getCount(){return this.count;}",
        "public void setCount(int arg0){this.count=arg0;}",
        "public boolean contains(int arg0){for(int loc0=0;loc0<size;loc0++){if(data[loc0]==arg0){return true;}}return false;}",
        "String function(){return \"str\";}",
        "public double sum(double[] arg0){double loc0=0;for(int loc1=0;loc1<arg0.length;loc1++){loc0+=arg0[loc1];}return loc0;}",
        "void tick(){count++;}",
        "public int max(int arg0,int arg1){return arg0>arg1?arg0:arg1;}",
        "void reset(){items=new int[10];}",
        "void greet(){log(\"hi\",'x');}",
        "public void each(){for(String loc0:names){print(loc0);}}",
        "int f(){if(a){return 1;}else{return 0;}}",
        "void g(){if(a)if(b)x=1;else x=2;}",
        "void h(){while(i<10){i=i+1;}}",
        "void w(){throw new IllegalStateException();}",
        "abstract int area();",
        "private static final int[] mk(){return new int[]{1,2};}",
    ] {
        let toks = tokenize_code(src).unwrap();
        let g2 = g.extended(toks.iter().map(|s| s.as_str()), []);
        let d = g2.parse(&toks).unwrap_or_else(|e| panic!("{src}: {e}"));
        assert_eq!(g2.realize(&d).unwrap(), toks, "round trip for {src}");
        assert_eq!(g2.validate(&d.rule_ids()).unwrap(), d);
    }
}

#[test]
fn rejects_non_member_input() {
    let g = Grammar::java_member();
    assert!(parse_src(&g, "int x = 1;").is_err());
    assert!(parse_src(&g, "class Foo { }").is_err());
    match parse_src(&g, "void f(){int x = ;}") {
        Err(ParseError::NoParse { failed_at }) => {
            // Blocked at the `;` after `=`: tokens are
            // void f ( ) { int x = ;  -> index 8.
            assert_eq!(failed_at, 8);
        }
        other => panic!("expected NoParse, got {other:?}"),
    }
}

#[test]
fn dangling_else_binds_inner_if() {
    let g = Grammar::java_member();
    let toks = tokenize_code("void g(){if(a)if(b)x=1;else x=2;}").unwrap();
    let g2 = g.extended(toks.iter().map(|s| s.as_str()), []);
    let d = g2.parse(&toks).unwrap();
    let names: Vec<&str> = d
        .steps
        .iter()
        .map(|s| g2.nonterminal_name(g2.rule(s.rule).lhs))
        .collect();
    // Outer statement is if-then; the else belongs to the inner if.
    assert!(names.contains(&"IfThenStatement"));
    assert!(names.contains(&"IfThenElseStatement"));
}

#[test]
fn sampled_programs_round_trip() {
    let g = Grammar::java_member();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..150 {
        let d = g
            .sample(&mut rng, ctxgen::grammar::MAX_RULES, ctxgen::grammar::MAX_TOKENS)
            .expect("shipped grammar fits the budgets");
        let toks = g.realize(&d).unwrap_or_else(|e| panic!("sample {i}: {e}"));
        assert!(toks.len() <= ctxgen::grammar::MAX_TOKENS);
        let parsed = g.parse(&toks).unwrap_or_else(|e| {
            panic!("sample {i} failed to re-parse ({e}): {}", toks.join(" "))
        });
        assert_eq!(
            g.realize(&parsed).unwrap(),
            toks,
            "sample {i} realize(parse(t)) != t"
        );
        assert_eq!(parsed, d, "sample {i}: grammar is ambiguous for {}", toks.join(" "));
    }
}
