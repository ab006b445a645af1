//! Static subword embeddings. Trained on the corpus with skip-gram negative
//! sampling, then frozen for the whole adversarial phase; an import path
//! accepts an external table in the same text format.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::numerics::{Scalar, Tensor};
use crate::tokenizer::{encode, Vocab, PAD};
use crate::{rng, Error, Result};

#[derive(Clone)]
pub struct EmbeddingTable {
    dim: usize,
    /// vocab_size x dim, row per piece id.
    rows: Vec<Vec<f64>>,
}

pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of a fixed per-piece random component blended into the
    /// trained vectors. Tiny corpora make interchangeable words collapse
    /// onto near-identical vectors; the identity component keeps every
    /// piece linearly separable downstream while the trained part carries
    /// the distributional structure. 0 disables.
    pub identity_mix: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 128,
            window: 2,
            negatives: 4,
            epochs: 8,
            lr: 0.05,
            identity_mix: 0.7,
            seed: 0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id]
    }

    /// Train skip-gram embeddings over the encoded corpus. The `<pad>` row
    /// is zeroed afterwards so padding positions contribute nothing.
    #[allow(clippy::needless_range_loop)]
    pub fn train(sentences: &[String], vocab: &Vocab, cfg: &SkipGramConfig) -> Self {
        let v = vocab.len();
        let mut r = rng::stream(cfg.seed, "skipgram");
        let bound = 0.5 / cfg.dim as f64;
        let mut input: Vec<Vec<f64>> = (0..v)
            .map(|_| (0..cfg.dim).map(|_| r.gen_range(-bound..bound)).collect())
            .collect();
        let mut output: Vec<Vec<f64>> = vec![vec![0.0; cfg.dim]; v];

        // token streams: <bos> w1 .. wn <eos> per sentence
        let streams: Vec<Vec<usize>> = sentences
            .iter()
            .map(|s| {
                let seq = encode(s, vocab, s.len() + 2);
                seq.content_ids().to_vec()
            })
            .collect();

        // unigram^0.75 negative-sampling table
        let mut counts = vec![0usize; v];
        for st in &streams {
            for &id in st {
                counts[id] += 1;
            }
        }
        let mut neg_table = Vec::new();
        for (id, &c) in counts.iter().enumerate() {
            if id == PAD || c == 0 {
                continue;
            }
            let slots = ((c as f64).powf(0.75) * 10.0).ceil() as usize;
            neg_table.extend(std::iter::repeat_n(id, slots));
        }
        if neg_table.is_empty() {
            neg_table.push(PAD);
        }

        let total_steps = (cfg.epochs * streams.iter().map(Vec::len).sum::<usize>()).max(1);
        let mut step = 0usize;
        for _epoch in 0..cfg.epochs {
            for st in &streams {
                for (i, &center) in st.iter().enumerate() {
                    let lr = cfg.lr * (1.0 - step as f64 / total_steps as f64).max(0.1);
                    step += 1;
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window + 1).min(st.len());
                    for j in lo..hi {
                        if j == i {
                            continue;
                        }
                        let context = st[j];
                        // positive update + k negative samples
                        let mut targets = Vec::with_capacity(1 + cfg.negatives);
                        targets.push((context, 1.0));
                        for _ in 0..cfg.negatives {
                            let neg = neg_table[r.gen_range(0..neg_table.len())];
                            if neg != context {
                                targets.push((neg, 0.0));
                            }
                        }
                        let mut grad_center = vec![0.0; cfg.dim];
                        for (tid, label) in targets {
                            let dot: f64 = input[center]
                                .iter()
                                .zip(&output[tid])
                                .map(|(a, b)| a * b)
                                .sum();
                            let err = sigmoid(dot) - label;
                            for d in 0..cfg.dim {
                                grad_center[d] += err * output[tid][d];
                                output[tid][d] -= lr * err * input[center][d];
                            }
                        }
                        for d in 0..cfg.dim {
                            input[center][d] -= lr * grad_center[d];
                        }
                    }
                }
            }
        }

        if cfg.identity_mix > 0.0 {
            for (id, row) in input.iter_mut().enumerate() {
                let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let mut ir = rng::stream_at(cfg.seed, "identity-mix", id as u64, 0);
                let mut u: Vec<f64> = (0..cfg.dim).map(|_| ir.gen_range(-1.0..1.0)).collect();
                let un: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for v in &mut u {
                    *v /= un;
                }
                for (r, uv) in row.iter_mut().zip(&u) {
                    *r += cfg.identity_mix * norm * uv;
                }
            }
        }

        for x in &mut input[PAD] {
            *x = 0.0;
        }
        EmbeddingTable { dim: cfg.dim, rows: input }
    }

    /// Text format: `piece SPACE v1 SPACE ... vd` per line, one line per
    /// vocab piece.
    pub fn save(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        let mut out = String::new();
        for (id, piece) in vocab.pieces().iter().enumerate() {
            out.push_str(piece);
            for x in &self.rows[id] {
                out.push(' ');
                out.push_str(&format!("{x:.17e}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, vocab: &Vocab, expect_dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::path(path, format!("cannot read embeddings: {e}")))?;
        let mut by_piece: HashMap<&str, Vec<f64>> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            let piece = parts.next().ok_or(Error::Parse {
                line: lineno + 1,
                reason: "empty line".to_string(),
            })?;
            let vals: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        reason: format!("bad float {p:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != expect_dim {
                return Err(Error::validation(format!(
                    "embedding line {} has dimension {}, expected {expect_dim}",
                    lineno + 1,
                    vals.len()
                )));
            }
            by_piece.insert(piece, vals);
        }
        let mut rows = Vec::with_capacity(vocab.len());
        for piece in vocab.pieces() {
            let row = by_piece.get(piece.as_str()).cloned().ok_or_else(|| {
                Error::validation(format!("embedding file missing piece {piece:?}"))
            })?;
            rows.push(row);
        }
        Ok(EmbeddingTable { dim: expect_dim, rows })
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a over the canonical little-endian bytes; used to verify the
    /// table stays bitwise unchanged across adversarial training.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for row in &self.rows {
            for v in row {
                for b in v.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Materialize as a `[vocab, dim]` tensor in the requested precision.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let mut data = Vec::with_capacity(self.rows.len() * self.dim);
        for row in &self.rows {
            data.extend(row.iter().map(|&v| S::from_f64(v)));
        }
        Tensor::from_vec(vec![self.rows.len(), self.dim], data)
    }

    /// Mean cosine similarity over all distinct piece pairs that occur in
    /// the corpus stream — the baseline for similarity assertions.
    pub fn mean_pairwise_cosine(&self, ids: &[usize]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, &a) in ids.iter().enumerate() {
            for &b in ids.iter().skip(i + 1) {
                sum += crate::numerics::cosine_similarity(
                    &self.rows[a],
                    &self.rows[b],
                )
                .unwrap_or(0.0);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}
