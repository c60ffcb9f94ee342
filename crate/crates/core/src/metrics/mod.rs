//! Exact match and corpus BLEU-4 over token sequences, plus the evaluation
//! report emitted as JSON and a small table.
//!
//! Corpus BLEU uses 4-gram modified precision, a geometric mean over the
//! orders that have at least one candidate n-gram in the corpus, and the
//! brevity penalty exp(1 - r/c) when c <= r. Skipping empty orders (rather
//! than scoring them zero) keeps bleu(x, x) = 100 on corpora of short
//! sequences; any order with candidates but zero matches still zeroes the
//! whole score.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction/reference count mismatch: {preds} vs {refs}")]
    CountMismatch { preds: usize, refs: usize },
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Percentage of predictions whose token sequence equals the reference.
pub fn exact_match(preds: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricError> {
    check_counts(preds, refs)?;
    let hits = preds.iter().zip(refs).filter(|(p, r)| p == r).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Corpus BLEU-4 in [0, 100].
pub fn corpus_bleu(preds: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricError> {
    check_counts(preds, refs)?;
    let mut num = [0usize; 4];
    let mut den = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (p, f) in preds.iter().zip(refs) {
        c += p.len();
        r += f.len();
        for n in 1..=4 {
            let (nu, de) = clipped_matches(p, f, n);
            num[n - 1] += nu;
            den[n - 1] += de;
        }
    }
    if c == 0 {
        return Ok(if r == 0 { 100.0 } else { 0.0 });
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..4 {
        if den[n] == 0 {
            continue;
        }
        if num[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (num[n] as f64 / den[n] as f64).ln();
        orders += 1;
    }
    let precision = (log_sum / orders as f64).exp();
    let brevity = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(100.0 * precision * brevity)
}

/// Sentence-level BLEU with add-one smoothing on the precisions above
/// unigram. Diagnostic only; the corpus score is the reported metric.
pub fn sentence_bleu_smoothed(pred: &[String], reference: &[String]) -> f64 {
    if pred.is_empty() {
        return if reference.is_empty() { 100.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=4 {
        let (nu, de) = clipped_matches(pred, reference, n);
        if de == 0 {
            continue;
        }
        let p = if n == 1 {
            if nu == 0 {
                return 0.0;
            }
            nu as f64 / de as f64
        } else {
            (nu + 1) as f64 / (de + 1) as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    let precision = (log_sum / orders as f64).exp();
    let (c, r) = (pred.len() as f64, reference.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    100.0 * precision * brevity
}

/// Clipped n-gram matches of `pred` against `reference` and the number of
/// candidate n-grams, for one order.
fn clipped_matches(pred: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if pred.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    if reference.len() >= n {
        for g in reference.windows(n) {
            *ref_counts.entry(g).or_insert(0) += 1;
        }
    }
    let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
    for g in pred.windows(n) {
        *cand_counts.entry(g).or_insert(0) += 1;
    }
    let matched = cand_counts
        .iter()
        .map(|(g, cnt)| (*cnt).min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, pred.len() + 1 - n)
}

fn check_counts(preds: &[Vec<String>], refs: &[Vec<String>]) -> Result<(), MetricError> {
    if preds.len() != refs.len() {
        return Err(MetricError::CountMismatch { preds: preds.len(), refs: refs.len() });
    }
    if preds.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PerExample {
    pub exact: bool,
    /// Smoothed sentence BLEU, diagnostic only.
    pub sentence_bleu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub exact_match: f64,
    pub bleu: f64,
    pub n: usize,
    pub examples: Vec<PerExample>,
}

pub fn evaluate(preds: &[Vec<String>], refs: &[Vec<String>]) -> Result<EvalReport, MetricError> {
    Ok(EvalReport {
        exact_match: exact_match(preds, refs)?,
        bleu: corpus_bleu(preds, refs)?,
        n: preds.len(),
        examples: preds
            .iter()
            .zip(refs)
            .map(|(p, r)| PerExample { exact: p == r, sentence_bleu: sentence_bleu_smoothed(p, r) })
            .collect(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        format!(
            "n            {}\nexact_match  {:.2}\nbleu         {:.2}\n",
            self.n, self.exact_match, self.bleu
        )
    }
}
