//! Content-preservation and classification metrics: sentence-level BLEU,
//! macro-averaged F1, and greedy embedding matching.

use std::collections::HashMap;

use crate::corpus::AuthorId;
use crate::tokenizer::{EmbeddingTable, Vocab, BOS, EOS, PAD, UNK};
use crate::{Error, Result};

/// Mean and standard error (sample stdev over sqrt(n)) of a set of values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricValue {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_stderr(values: &[f64]) -> MetricValue {
    if values.is_empty() {
        return MetricValue { mean: f64::NAN, stderr: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return MetricValue { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    MetricValue { mean, stderr: var.sqrt() / n.sqrt() }
}

/// Sentence-level BLEU: geometric mean of clipped n-gram precisions
/// (n = 1..=max_n) times the brevity penalty. Higher-order counts (n >= 2)
/// get add-one smoothing; unigram precision is unsmoothed, so an empty or
/// zero-overlap candidate scores 0. Under these conventions a non-empty
/// candidate scores exactly 1 iff it equals the reference token-for-token.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> f64 {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refr: Vec<&str> = reference.split_whitespace().collect();
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand_ngrams = ngram_counts(&cand, n);
        let ref_ngrams = ngram_counts(&refr, n);
        let total: usize = cand_ngrams.values().sum();
        let clipped: usize = cand_ngrams
            .iter()
            .map(|(g, &c)| c.min(ref_ngrams.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            if total == 0 {
                return 0.0;
            }
            clipped as f64 / total as f64
        } else {
            (clipped + 1) as f64 / (total + 1) as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / max_n as f64;
    }
    let bp = if cand.len() < refr.len() {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Unweighted mean of per-class F1 over the classes present in the ground
/// truth. A class never predicted gets precision 0.
pub fn macro_f1(predictions: &[AuthorId], labels: &[AuthorId]) -> Result<f64> {
    Ok(mean_stderr(&per_class_f1(predictions, labels)?).mean)
}

/// Per-class F1 scores, ordered by class id, for macro aggregation and the
/// class-wise standard error reported alongside it.
pub fn per_class_f1(predictions: &[AuthorId], labels: &[AuthorId]) -> Result<Vec<f64>> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "predictions ({}) and labels ({}) differ in length",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("macro F1 needs at least one label"));
    }
    let mut classes: Vec<&AuthorId> = Vec::new();
    for l in labels {
        if !classes.contains(&l) {
            classes.push(l);
        }
    }
    classes.sort();
    let mut out = Vec::with_capacity(classes.len());
    for class in classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for (p, l) in predictions.iter().zip(labels) {
            match (p == class, l == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        out.push(f1);
    }
    Ok(out)
}

/// Caches mean-of-subword-piece embeddings per word.
pub struct WordEmbedder<'a> {
    vocab: &'a Vocab,
    table: &'a EmbeddingTable,
    cache: std::cell::RefCell<HashMap<String, Vec<f64>>>,
}

impl<'a> WordEmbedder<'a> {
    pub fn new(vocab: &'a Vocab, table: &'a EmbeddingTable) -> Self {
        WordEmbedder { vocab, table, cache: std::cell::RefCell::new(HashMap::new()) }
    }

    pub fn embed_word(&self, word: &str) -> Vec<f64> {
        if let Some(hit) = self.cache.borrow().get(word) {
            return hit.clone();
        }
        let seq = crate::tokenizer::encode(word, self.vocab, word.len() + 2);
        let piece_ids: Vec<usize> = seq
            .content_ids()
            .iter()
            .copied()
            .filter(|&id| id != BOS && id != EOS && id != PAD && id != UNK)
            .collect();
        let d = self.table.dim();
        let mut out = vec![0.0; d];
        if !piece_ids.is_empty() {
            for &id in &piece_ids {
                for (o, &v) in out.iter_mut().zip(self.table.row(id)) {
                    *o += v;
                }
            }
            for o in &mut out {
                *o /= piece_ids.len() as f64;
            }
        }
        self.cache.borrow_mut().insert(word.to_string(), out.clone());
        out
    }
}

/// Greedy embedding matching: precision matches candidate tokens to their
/// best reference token by cosine, recall the reverse, F the harmonic mean.
/// Empty candidate or reference scores 0 across the board.
pub fn embed_fscore(
    candidate: &str,
    reference: &str,
    embedder: &WordEmbedder<'_>,
) -> (f64, f64, f64) {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refr: Vec<&str> = reference.split_whitespace().collect();
    if cand.is_empty() || refr.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let ce: Vec<Vec<f64>> = cand.iter().map(|w| embedder.embed_word(w)).collect();
    let re: Vec<Vec<f64>> = refr.iter().map(|w| embedder.embed_word(w)).collect();
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for f in from {
            let mut best = -1.0f64;
            for t in to {
                let c = crate::numerics::cosine_similarity(f, t).unwrap_or(0.0);
                best = best.max(c);
            }
            total += best;
        }
        total / from.len() as f64
    };
    let precision = best(&ce, &re);
    let recall = best(&re, &ce);
    let denom = precision + recall;
    let f = if denom.abs() < 1e-12 { 0.0 } else { 2.0 * precision * recall / denom };
    (precision, recall, f)
}
