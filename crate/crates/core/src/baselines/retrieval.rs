//! tf-idf retrieval: fetch the training example whose NL is closest in
//! cosine similarity and adapt its code to the test environment by
//! substituting same-typed members.
//!
//! Vectors use raw term frequency times ln(N/df), L2-normalized. All maps
//! are ordered so scores are bitwise reproducible run to run.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Example;
use crate::grammar::tokenize_code;

use super::BaselineError;

pub struct TfIdfIndex {
    n: usize,
    df: BTreeMap<String, usize>,
    vectors: Vec<BTreeMap<String, f64>>,
}

impl TfIdfIndex {
    pub fn build(docs: &[Vec<String>]) -> Self {
        let df = docs
            .par_iter()
            .fold(BTreeMap::new, |mut m: BTreeMap<String, usize>, doc| {
                for t in doc.iter().collect::<BTreeSet<_>>() {
                    *m.entry(t.clone()).or_insert(0) += 1;
                }
                m
            })
            .reduce(BTreeMap::new, |mut a, b| {
                for (t, c) in b {
                    *a.entry(t).or_insert(0) += c;
                }
                a
            });
        let mut index = TfIdfIndex { n: docs.len(), df, vectors: Vec::new() };
        index.vectors = docs.par_iter().map(|d| index.vector(d)).collect();
        index
    }

    /// L2-normalized tf-idf vector. Tokens absent from the index (df = 0)
    /// are dropped; an all-dropped document yields the zero vector.
    pub fn vector(&self, doc: &[String]) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in doc {
            *tf.entry(t).or_insert(0) += 1;
        }
        let mut v: BTreeMap<String, f64> = tf
            .into_iter()
            .filter_map(|(t, c)| {
                let df = self.df.get(t).copied().unwrap_or(0);
                (df > 0).then(|| (t.to_string(), c as f64 * (self.n as f64 / df as f64).ln()))
            })
            .collect();
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.values_mut() {
                *x /= norm;
            }
        }
        v
    }

    /// Cosine similarity of a query document against every indexed one.
    pub fn scores(&self, doc: &[String]) -> Vec<f64> {
        let q = self.vector(doc);
        self.vectors.iter().map(|v| dot_sparse(&q, v)).collect()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn dot_sparse(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().map(|(t, x)| x * large.get(t).copied().unwrap_or(0.0)).sum()
}

/// Rewrites retrieved code for the target environment: every occurrence of
/// a source member name becomes a same-typed target member (variables from
/// variables, methods from methods). One replacement is chosen per source
/// name, uniformly under `rng` among equal-typed candidates; names with no
/// candidate stay verbatim.
pub fn member_substitute(
    code: &[String],
    source: &Example,
    target: &Example,
    rng: &mut impl Rng,
) -> Vec<String> {
    let mut map: HashMap<&str, &str> = HashMap::new();
    for (pool, target_pool) in
        [(&source.variables, &target.variables), (&source.methods, &target.methods)]
    {
        for (name, ty) in pool {
            if map.contains_key(name.as_str()) {
                continue;
            }
            let cands: Vec<&str> = target_pool
                .iter()
                .filter(|(_, t2)| t2 == ty)
                .map(|(n2, _)| n2.as_str())
                .collect();
            if !cands.is_empty() {
                map.insert(name, cands[rng.random_range(0..cands.len())]);
            }
        }
    }
    code.iter().map(|t| map.get(t.as_str()).map_or_else(|| t.clone(), |r| r.to_string())).collect()
}

/// One retrieval prediction per test example, parallel over examples with
/// per-example derived seeds so the output is order- and run-stable.
pub fn retrieval_predict_corpus(
    train: &[Example],
    test: &[Example],
    seed: u64,
) -> Result<Vec<Vec<String>>, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::EmptyTrainingCorpus);
    }
    let docs: Vec<Vec<String>> = train.iter().map(|e| e.nl.clone()).collect();
    let index = TfIdfIndex::build(&docs);
    Ok(test
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let scores = index.scores(&ex.nl);
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> =
                (0..scores.len()).filter(|&j| scores[j] == best).collect();
            let pick = ties[rng.random_range(0..ties.len())];
            let code = tokenize_code(&train[pick].code).expect("canonical code lexes");
            member_substitute(&code, &train[pick], ex, &mut rng)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    /// O(V^2) dense cosine over the union vocabulary, used as an
    /// independent check on the sparse dot products.
    fn brute_cosine(index: &TfIdfIndex, a: &[String], b: &[String]) -> f64 {
        let va = index.vector(a);
        let vb = index.vector(b);
        let vocab: BTreeSet<&String> = va.keys().chain(vb.keys()).collect();
        vocab
            .into_iter()
            .map(|t| va.get(t).copied().unwrap_or(0.0) * vb.get(t).copied().unwrap_or(0.0))
            .sum()
    }

    #[test]
    fn identical_document_scores_one() {
        let docs = vec![doc("returns the vector size"), doc("adds an element"), doc("clears")];
        let index = TfIdfIndex::build(&docs);
        let scores = index.scores(&docs[1]);
        assert!((scores[1] - 1.0).abs() < 1e-12);
        assert!(scores[0] < scores[1] && scores[2] < scores[1]);
    }

    #[test]
    fn sparse_scores_agree_with_dense_loop() {
        let docs = vec![
            doc("returns the size of the vector"),
            doc("returns the first element"),
            doc("removes the element at an index"),
            doc("the the the repeated words"),
        ];
        let index = TfIdfIndex::build(&docs);
        for q in &docs {
            let scores = index.scores(q);
            for (j, d) in docs.iter().enumerate() {
                assert!((scores[j] - brute_cosine(&index, q, d)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vectors_are_unit_length() {
        let docs = vec![doc("a b c a"), doc("b d")];
        let index = TfIdfIndex::build(&docs);
        for d in &docs {
            let v = index.vector(d);
            let norm: f64 = v.values().map(|x| x * x).sum();
            // "a" appears in one of two docs; "b" in both has idf ln(1) = 0
            // and drops out of the norm.
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_index_queries_get_zero_vectors() {
        let docs = vec![doc("alpha beta"), doc("gamma")];
        let index = TfIdfIndex::build(&docs);
        assert!(index.vector(&doc("unseen words only")).is_empty());
        assert!(index.scores(&doc("unseen")).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_typed_candidate_substitutes_deterministically() {
        let source = Example {
            nl: vec!["copy".into()],
            variables: vec![("data".into(), "double[]".into()), ("n".into(), "int".into())],
            methods: vec![("grow".into(), "void".into())],
            code: String::new(),
            target: crate::grammar::Derivation { steps: vec![] },
            copy_labels: vec![],
        };
        let target = Example {
            nl: vec!["copy".into()],
            variables: vec![("values".into(), "double[]".into()), ("count".into(), "int".into())],
            methods: vec![("expand".into(), "void".into())],
            code: String::new(),
            target: crate::grammar::Derivation { steps: vec![] },
            copy_labels: vec![],
        };
        let code = doc("double[] copy = new double[ n ] ; grow ( data , n ) ;");
        for seed in [0, 1, 99] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = member_substitute(&code, &source, &target, &mut rng);
            assert_eq!(
                got,
                doc("double[] copy = new double[ count ] ; expand ( values , count ) ;")
            );
        }
    }

    #[test]
    fn unmatched_names_stay_verbatim() {
        let source = Example {
            nl: vec![],
            variables: vec![("data".into(), "double[]".into())],
            methods: vec![],
            code: String::new(),
            target: crate::grammar::Derivation { steps: vec![] },
            copy_labels: vec![],
        };
        let target = Example {
            nl: vec![],
            variables: vec![("count".into(), "int".into())],
            methods: vec![],
            code: String::new(),
            target: crate::grammar::Derivation { steps: vec![] },
            copy_labels: vec![],
        };
        let code = doc("return data ;");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(member_substitute(&code, &source, &target, &mut rng), code);
    }

    #[test]
    fn corpus_prediction_is_seed_stable_and_grammatical_input_free() {
        let ds = generate_synthetic(20, 5);
        let (train, test) = ds.examples.split_at(15);
        let a = retrieval_predict_corpus(train, test, 11).unwrap();
        let b = retrieval_predict_corpus(train, test, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), test.len());
        assert!(a.iter().all(|p| !p.is_empty()));
        assert!(matches!(
            retrieval_predict_corpus(&[], test, 0),
            Err(BaselineError::EmptyTrainingCorpus)
        ));
    }
}
