//! Small causal Transformer language model, trained on the training split
//! and frozen as the perplexity judge.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::numerics::{
    bind, bind_frozen, causal_mask, collect_grads, embed_rows, s, sinusoidal_positions, Adam,
    Binding, LayerNorm, Linear, MultiHeadAttention, ParamSet, Scalar, Tape, Tensor, Var,
};
use crate::tokenizer::TokenSequence;
use crate::{rng, Error, Result};

use super::metrics::{mean_stderr, MetricValue};

#[derive(Clone, Debug)]
pub struct LmConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub blocks: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { d_model: 64, heads: 4, ffn: 128, blocks: 2, max_len: 32, seed: 0 }
    }
}

struct LmBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

pub struct CausalLm<S: Scalar> {
    pub params: ParamSet<S>,
    pub cfg: LmConfig,
    embed: Tensor<S>,
    posenc: Tensor<S>,
    input_proj: Linear,
    blocks: Vec<LmBlock>,
    out_norm: LayerNorm,
    out_proj: Linear,
}

impl<S: Scalar> CausalLm<S> {
    pub fn new(embed_table: Tensor<S>, cfg: LmConfig) -> Self {
        let vocab_size = embed_table.shape()[0];
        let d_emb = embed_table.shape()[1];
        let mut r = rng::stream(cfg.seed, "lm-init");
        let mut ps = ParamSet::new();
        let input_proj = Linear::new(&mut ps, "input_proj", d_emb, cfg.d_model, &mut r);
        let blocks = (0..cfg.blocks)
            .map(|i| LmBlock {
                ln1: LayerNorm::new(&mut ps, &format!("b{i}.ln1"), cfg.d_model),
                attn: MultiHeadAttention::new(&mut ps, &format!("b{i}.attn"), cfg.d_model, cfg.heads, &mut r),
                ln2: LayerNorm::new(&mut ps, &format!("b{i}.ln2"), cfg.d_model),
                ff1: Linear::new(&mut ps, &format!("b{i}.ff1"), cfg.d_model, cfg.ffn, &mut r),
                ff2: Linear::new(&mut ps, &format!("b{i}.ff2"), cfg.ffn, cfg.d_model, &mut r),
            })
            .collect();
        let out_norm = LayerNorm::new(&mut ps, "out_norm", cfg.d_model);
        let out_proj = Linear::new(&mut ps, "out_proj", cfg.d_model, vocab_size, &mut r);
        let posenc = sinusoidal_positions(cfg.max_len, cfg.d_model);
        CausalLm {
            params: ps,
            cfg,
            embed: embed_table,
            posenc,
            input_proj,
            blocks,
            out_norm,
            out_proj,
        }
    }

    /// Zero the output projection — every next-token distribution becomes
    /// uniform. Test hook for the analytic perplexity bound.
    pub fn zero_output_layer(&mut self) {
        for v in self.params.get_mut(self.out_proj.w).data_mut() {
            *v = S::zero();
        }
        for v in self.params.get_mut(self.out_proj.b).data_mut() {
            *v = S::zero();
        }
    }

    fn logits(&self, t: &mut Tape<S>, bp: &Binding, inputs: &[usize]) -> Var {
        let l = inputs.len();
        let x = t.constant(embed_rows(&self.embed, inputs));
        let mut h = self.input_proj.forward(t, bp, x);
        let pe = {
            let d = self.cfg.d_model;
            let mut data = Vec::with_capacity(l * d);
            for p in 0..l {
                data.extend_from_slice(self.posenc.row(p));
            }
            t.constant(Tensor::from_vec(vec![l, d], data))
        };
        h = t.add(h, pe);
        let mask = causal_mask::<S>(l);
        for b in &self.blocks {
            let normed = b.ln1.forward(t, bp, h);
            let attended = b.attn.forward(t, bp, normed, normed, Some(&mask));
            h = t.add(h, attended);
            let normed = b.ln2.forward(t, bp, h);
            let ff = b.ff1.forward(t, bp, normed);
            let ff = t.relu(ff);
            let ff = b.ff2.forward(t, bp, ff);
            h = t.add(h, ff);
        }
        let normed = self.out_norm.forward(t, bp, h);
        self.out_proj.forward(t, bp, normed)
    }

    /// Mean negative log-likelihood of the sequence continuation
    /// (`<bos> w1 .. <eos>` predicting each next token).
    pub fn sentence_nll(&self, seq: &TokenSequence) -> f64 {
        let mut t = Tape::new();
        let bp = bind_frozen(&mut t, &self.params);
        let inputs = &seq.ids[..seq.length - 1];
        let targets = &seq.ids[1..seq.length];
        let logits = self.logits(&mut t, &bp, inputs);
        let logp = t.log_softmax_rows(logits);
        let picked = t.gather_rows(logp, targets);
        let mean = t.mean_all(picked);
        -t.value(mean).item().as_f64()
    }

    /// Per-sentence perplexity: `exp(mean token NLL)`.
    pub fn sentence_perplexity(&self, seq: &TokenSequence) -> f64 {
        self.sentence_nll(seq).exp()
    }
}

/// Aggregate perplexity over a sentence set.
pub fn perplexity<S: Scalar>(lm: &CausalLm<S>, sequences: &[TokenSequence]) -> Result<MetricValue> {
    if sequences.is_empty() {
        return Err(Error::validation("perplexity needs at least one sentence"));
    }
    let values: Vec<f64> = sequences.par_iter().map(|s| lm.sentence_perplexity(s)).collect();
    Ok(mean_stderr(&values))
}

pub struct LmReport {
    pub epochs_run: usize,
    pub final_val_nll: f64,
}

/// Train the judge on the training split with early stopping on held-out
/// NLL. Deterministic given the seed.
pub fn train_ppl_lm<S: Scalar>(
    lm: &mut CausalLm<S>,
    train: &[TokenSequence],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<LmReport> {
    if train.is_empty() {
        return Err(Error::validation("language model training needs sentences"));
    }
    let holdout_n = (train.len() / 10).max(1);
    let (holdout, train_set) = train.split_at(holdout_n);
    let mut adam = Adam::new(lr, 0.9, 0.999, &lm.params);
    let mut best = f64::INFINITY;
    let mut patience = 0usize;
    let mut epochs_run = 0;
    for epoch in 0..epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut r = rng::stream_at(seed, "lm-shuffle", epoch as u64, 0);
        order.shuffle(&mut r);
        for chunk in order.chunks(batch_size) {
            let grads: Vec<Vec<Tensor<S>>> = chunk
                .par_iter()
                .map(|&i| {
                    let seq = &train_set[i];
                    let mut t = Tape::new();
                    let bp = bind(&mut t, &lm.params);
                    let inputs = &seq.ids[..seq.length - 1];
                    let targets = &seq.ids[1..seq.length];
                    let logits = lm.logits(&mut t, &bp, inputs);
                    let logp = t.log_softmax_rows(logits);
                    let picked = t.gather_rows(logp, targets);
                    let mean = t.mean_all(picked);
                    let loss = t.neg(mean);
                    let g = t.backward(loss);
                    collect_grads(&t, &g, &lm.params, &bp)
                })
                .collect();
            let mut total = grads[0].clone();
            for g in grads.iter().skip(1) {
                for (acc, gi) in total.iter_mut().zip(g) {
                    acc.add_in_place(gi);
                }
            }
            let scale = s::<S>(1.0 / grads.len() as f64);
            for g in &mut total {
                g.scale_in_place(scale);
            }
            crate::numerics::clip_global_norm(&mut total, 5.0);
            adam.step(&mut lm.params, &total);
        }
        let nlls: Vec<f64> = holdout.par_iter().map(|s| lm.sentence_nll(s)).collect();
        let val: f64 = nlls.iter().sum::<f64>() / nlls.len() as f64;
        if !val.is_finite() {
            return Err(Error::TrainingHealth {
                step: epoch as u64,
                detail: format!("language-model validation NLL became {val}"),
            });
        }
        if val + 1e-4 < best {
            best = val;
            patience = 0;
        } else {
            patience += 1;
            if patience >= 3 {
                break;
            }
        }
    }
    Ok(LmReport { epochs_run, final_val_nll: best })
}
