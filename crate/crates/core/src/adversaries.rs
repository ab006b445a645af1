//! The two critics the generator trains against.
//!
//! The style critic is a Siamese network: one shared convolutional subnet
//! embeds each sentence (soft token rows times the frozen embedding table,
//! an input projection, stacked residual conv blocks, global average
//! pooling), and a symmetric head scores the pair from `-|e1 - e2|`.
//! Its Wasserstein loss carries a gradient penalty on inputs interpolated
//! between real and generated rows; the input gradient is built on the tape
//! out of transposed-convolution ops so the penalty itself stays
//! differentiable with respect to the critic weights.
//!
//! The fluency critic is a one-layer GRU with a per-step scalar head; its
//! Wasserstein loss carries no penalty.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::PairSet;
use crate::numerics::{
    bind, bind_frozen, collect_grads, s, Adam, Binding, GruCell, Linear, ParamId, ParamSet,
    ResidualConvBlock, Scalar, Tape, Tensor, Var,
};
use crate::generator::one_hot_rows;
use crate::tokenizer::TokenSequence;
use crate::{rng, Error, Result};

#[derive(Clone, Debug)]
pub struct StyleCriticConfig {
    pub channels: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for StyleCriticConfig {
    fn default() -> Self {
        StyleCriticConfig { channels: 128, kernel: 3, blocks: 3, max_len: 32, seed: 0 }
    }
}

pub struct StyleCritic<S: Scalar> {
    pub params: ParamSet<S>,
    pub cfg: StyleCriticConfig,
    embed: Tensor<S>,
    vocab_size: usize,
    input_proj: Linear,
    blocks: Vec<ResidualConvBlock>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Forward intermediates needed to build the input-gradient graph.
struct SubnetTrace {
    /// Relu pre-activations inside each residual block.
    pre_acts: Vec<Var>,
    rows: usize,
    pooled: Var,
}

impl<S: Scalar> StyleCritic<S> {
    pub fn new(embed_table: Tensor<S>, cfg: StyleCriticConfig) -> Self {
        let vocab_size = embed_table.shape()[0];
        let d_emb = embed_table.shape()[1];
        let mut r = rng::stream(cfg.seed, "style-critic-init");
        let mut ps = ParamSet::new();
        let input_proj = Linear::new(&mut ps, "input_proj", d_emb, cfg.channels, &mut r);
        let blocks = (0..cfg.blocks)
            .map(|i| ResidualConvBlock::new(&mut ps, &format!("block{i}"), cfg.kernel, cfg.channels, &mut r))
            .collect();
        let head_w = ps.add("head.w", Tensor::zeros(&[cfg.channels]));
        let head_b = ps.add("head.b", Tensor::zeros(&[1]));
        StyleCritic { params: ps, cfg, embed: embed_table, vocab_size, input_proj, blocks, head_w, head_b }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// One-hot row matrix for a real token sequence, `[max_len, V]`.
    pub fn real_rows(&self, seq: &TokenSequence) -> Tensor<S> {
        one_hot_rows::<S>(&seq.ids, self.vocab_size)
    }

    fn subnet(&self, t: &mut Tape<S>, bp: &Binding, x_probs: Var, embed_const: Var) -> SubnetTrace {
        let rows = t.shape(x_probs)[0];
        let x_embed = t.matmul(x_probs, false, embed_const, false);
        let mut h = self.input_proj.forward(t, bp, x_embed);
        let mut pre_acts = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, pre) = block.forward_with_pre(t, bp, h);
            pre_acts.push(pre);
            h = next;
        }
        let pooled = t.mean_rows(h);
        SubnetTrace { pre_acts, rows, pooled }
    }

    fn head(&self, t: &mut Tape<S>, bp: &Binding, e1: Var, e2: Var) -> Var {
        let d = t.sub(e1, e2);
        let a = t.abs(d);
        let na = t.neg(a);
        let prod = t.mul(bp.var(self.head_w), na);
        let sum = t.sum_all(prod);
        t.add(sum, bp.var(self.head_b))
    }

    /// Critic score for a pair of row-stochastic sequences `[max_len, V]`.
    /// Higher means "more same-author" under the training sign convention.
    pub fn score_pair(&self, t: &mut Tape<S>, bp: &Binding, x1: Var, x2: Var) -> Var {
        let embed_const = t.constant(self.embed.clone());
        let t1 = self.subnet(t, bp, x1, embed_const);
        let t2 = self.subnet(t, bp, x2, embed_const);
        self.head(t, bp, t1.pooled, t2.pooled)
    }

    /// Plain score for two real sequences (throwaway tape, frozen binding).
    pub fn score_sequences(&self, a: &TokenSequence, b: &TokenSequence) -> f64 {
        let mut t = Tape::new();
        let bp = bind_frozen(&mut t, &self.params);
        let xa = t.constant(self.real_rows(a));
        let xb = t.constant(self.real_rows(b));
        let sc = self.score_pair(&mut t, &bp, xa, xb);
        t.value(sc).item().as_f64()
    }

    /// The gradient of `score(x_hat, x2)` with respect to `x_hat`, built as
    /// a differentiable forward computation. Activation masks enter as
    /// constants — their almost-everywhere-zero derivative matches full
    /// second-order differentiation — while every weight stays a tape Var,
    /// so the gradient-penalty loss reaches the weights through this path.
    fn input_gradient(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        x_hat_trace: &SubnetTrace,
        e_hat: Var,
        e2: Var,
        embed_const: Var,
    ) -> Var {
        let l = x_hat_trace.rows;
        let c = self.cfg.channels;
        let k = self.cfg.kernel;

        // head: d score / d e_hat = w * (-sign(e_hat - e2))
        let diff: Vec<S> = t
            .value(e_hat)
            .data()
            .iter()
            .zip(t.value(e2).data())
            .map(|(&a, &b)| {
                let d = a - b;
                if d > S::zero() {
                    -S::one()
                } else if d < S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            })
            .collect();
        let neg_sign = t.constant(Tensor::from_vec(vec![c], diff));
        let d_e = t.mul(bp.var(self.head_w), neg_sign);

        // global average pooling backward: broadcast / L
        let mut d_h = t.repeat_row(d_e, l, 1.0 / l as f64);

        // residual blocks in reverse
        for (block, &pre) in self.blocks.iter().zip(x_hat_trace.pre_acts.iter()).rev() {
            let w2 = bp.var(block.conv2.w);
            let d_r = t.conv1d_input_grad(d_h, w2, k, c, c);
            let mask: Vec<S> = t
                .value(pre)
                .data()
                .iter()
                .map(|&v| if v > S::zero() { S::one() } else { S::zero() })
                .collect();
            let mask = t.constant(Tensor::from_vec(vec![l, c], mask));
            let d_u = t.mul(d_r, mask);
            let w1 = bp.var(block.conv1.w);
            let d_inner = t.conv1d_input_grad(d_u, w1, k, c, c);
            d_h = t.add(d_h, d_inner);
        }

        // input projection and embedding mix are plain linear maps
        let d_embed = t.matmul(d_h, false, bp.var(self.input_proj.w), true);
        t.matmul(d_embed, false, embed_const, true)
    }

    /// Gradient-penalty term `(||grad||_2 - 1)^2` for one interpolated
    /// pair, plus the norm itself for monitoring.
    fn gradient_penalty(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        x_hat: Var,
        x2: Var,
    ) -> (Var, Var) {
        let embed_const = t.constant(self.embed.clone());
        let hat_trace = self.subnet(t, bp, x_hat, embed_const);
        let x2_trace = self.subnet(t, bp, x2, embed_const);
        let grad = self.input_gradient(
            t,
            bp,
            &hat_trace,
            hat_trace.pooled,
            x2_trace.pooled,
            embed_const,
        );
        let sq = t.mul(grad, grad);
        let sum = t.sum_all(sq);
        let sum = t.add_scalar(sum, 1e-12);
        let norm = t.sqrt(sum);
        let shifted = t.add_scalar(norm, -1.0);
        (t.mul(shifted, shifted), norm)
    }
}

/// One same-author training item for the style-critic loss: the anchor, its
/// generated counterpart, and a second real sentence by the same author.
/// All are `[max_len, V]` row-stochastic matrices on the tape.
pub struct SamePairItem {
    pub x1: Var,
    pub generated: Var,
    pub x2: Var,
}

pub struct StyleLoss {
    pub loss: Var,
    /// Mean interpolated-gradient norm, for monitoring.
    pub mean_grad_norm: f64,
    /// Mean gradient-penalty magnitude (pre-weighting).
    pub mean_penalty: f64,
}

impl<S: Scalar> StyleCritic<S> {
    /// The critic objective: `-E_same[D(G(x1), x2)] + E_cross[D(x1, x2)]
    /// + gp_weight * E[(||grad_x_hat D(x_hat, x2)||_2 - 1)^2]` with
    /// `x_hat = mix * x1 + (1 - mix) * G(x1)` paired against the same `x2`.
    pub fn style_critic_loss(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        same: &[SamePairItem],
        cross: &[(Var, Var)],
        gp_weight: f64,
        interp_mix: f64,
    ) -> Result<StyleLoss> {
        if same.is_empty() || cross.is_empty() {
            return Err(Error::validation(
                "style critic batch needs both same-author and cross-author pairs",
            ));
        }
        let mut gen_scores = Vec::with_capacity(same.len());
        let mut penalties = Vec::with_capacity(same.len());
        let mut norms = Vec::with_capacity(same.len());
        for item in same {
            gen_scores.push(self.score_pair(t, bp, item.generated, item.x2));
            let a = t.scale(item.x1, interp_mix);
            let b = t.scale(item.generated, 1.0 - interp_mix);
            let x_hat = t.add(a, b);
            let (pen, norm) = self.gradient_penalty(t, bp, x_hat, item.x2);
            penalties.push(pen);
            norms.push(norm);
        }
        let mut cross_scores = Vec::with_capacity(cross.len());
        for &(x1, x2) in cross {
            cross_scores.push(self.score_pair(t, bp, x1, x2));
        }

        let gen_cat = t.concat_rows(&gen_scores);
        let gen_mean = t.mean_all(gen_cat);
        let cross_cat = t.concat_rows(&cross_scores);
        let cross_mean = t.mean_all(cross_cat);
        let pen_cat = t.concat_rows(&penalties);
        let pen_mean = t.mean_all(pen_cat);

        let neg_gen = t.neg(gen_mean);
        let wasserstein = t.add(neg_gen, cross_mean);
        let weighted_pen = t.scale(pen_mean, gp_weight);
        let loss = t.add(wasserstein, weighted_pen);

        let mean_grad_norm = norms
            .iter()
            .map(|&n| t.value(n).item().as_f64())
            .sum::<f64>()
            / norms.len() as f64;
        let mean_penalty = t.value(pen_mean).item().as_f64();
        Ok(StyleLoss { loss, mean_grad_norm, mean_penalty })
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct FluencyCriticConfig {
    pub hidden: usize,
    pub seed: u64,
}

impl Default for FluencyCriticConfig {
    fn default() -> Self {
        FluencyCriticConfig { hidden: 128, seed: 0 }
    }
}

pub struct FluencyCritic<S: Scalar> {
    pub params: ParamSet<S>,
    pub cfg: FluencyCriticConfig,
    embed: Tensor<S>,
    vocab_size: usize,
    gru: GruCell,
    head: Linear,
}

impl<S: Scalar> FluencyCritic<S> {
    pub fn new(embed_table: Tensor<S>, cfg: FluencyCriticConfig) -> Self {
        let vocab_size = embed_table.shape()[0];
        let d_emb = embed_table.shape()[1];
        let mut r = rng::stream(cfg.seed, "fluency-critic-init");
        let mut ps = ParamSet::new();
        let gru = GruCell::new(&mut ps, "gru", d_emb, cfg.hidden, &mut r);
        let head = Linear::zeros(&mut ps, "head", cfg.hidden, 1);
        FluencyCritic { params: ps, cfg, embed: embed_table, vocab_size, gru, head }
    }

    /// One score per non-pad step. `rows` are `[1, V]` distributions for
    /// steps `0..steps`; returns a `[steps, 1]` score matrix.
    pub fn scores(&self, t: &mut Tape<S>, bp: &Binding, rows: &[Var], steps: usize) -> Var {
        assert!(steps >= 1 && steps <= rows.len());
        let embed_const = t.constant(self.embed.clone());
        let mut h = self.gru.initial_state(t);
        let mut outs = Vec::with_capacity(steps);
        for &row in rows.iter().take(steps) {
            let x = t.matmul(row, false, embed_const, false);
            h = self.gru.step(t, bp, x, h);
            outs.push(self.head.forward(t, bp, h));
        }
        t.concat_rows(&outs)
    }

    /// Scores for a real token sequence (no tape management by the caller).
    pub fn score_sequence(&self, seq: &TokenSequence) -> Vec<f64> {
        let mut t = Tape::new();
        let bp = bind_frozen(&mut t, &self.params);
        let rows: Vec<Var> = seq.ids[..seq.length]
            .iter()
            .map(|&id| t.constant(one_hot_rows::<S>(&[id], self.vocab_size)))
            .collect();
        let sc = self.scores(&mut t, &bp, &rows, seq.length);
        t.value(sc).data().iter().map(|v| v.as_f64()).collect()
    }

    /// `-E[D(fake)] + E[D(real)]` over per-sentence token means. No
    /// gradient penalty is applied to this critic.
    pub fn fluency_critic_loss(&self, t: &mut Tape<S>, real_means: &[Var], fake_means: &[Var]) -> Var {
        assert!(!real_means.is_empty() && !fake_means.is_empty());
        let real_cat = t.concat_rows(real_means);
        let real_mean = t.mean_all(real_cat);
        let fake_cat = t.concat_rows(fake_means);
        let fake_mean = t.mean_all(fake_cat);
        let neg_fake = t.neg(fake_mean);
        t.add(neg_fake, real_mean)
    }
}

// ---------------------------------------------------------------------------

pub struct VerificationReport {
    pub holdout_accuracy: f64,
    pub epochs_run: usize,
}

/// Warm-start the style critic on authorship verification: hinge loss
/// pushing same-author scores above +1 and cross-author scores below -1.
pub fn pretrain_verification<S: Scalar>(
    critic: &mut StyleCritic<S>,
    pairs: &PairSet,
    vocab: &crate::tokenizer::Vocab,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<VerificationReport> {
    if pairs.pairs.is_empty() {
        return Err(Error::validation("verification pretraining needs pairs"));
    }
    let max_len = critic.cfg.max_len;
    let encoded: Vec<(TokenSequence, TokenSequence, bool)> = pairs
        .pairs
        .iter()
        .map(|(a, b, same)| {
            (
                crate::tokenizer::encode(&a.text, vocab, max_len),
                crate::tokenizer::encode(&b.text, vocab, max_len),
                *same,
            )
        })
        .collect();
    let holdout_n = (encoded.len() / 10).max(1);
    let (holdout, train) = encoded.split_at(holdout_n);

    let mut adam = Adam::new(lr, 0.9, 0.999, &critic.params);
    let mut epochs_run = 0;
    for epoch in 0..epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut r = rng::stream_at(seed, "verify-shuffle", epoch as u64, 0);
        order.shuffle(&mut r);
        for chunk in order.chunks(batch_size) {
            let results: Vec<Vec<Tensor<S>>> = chunk
                .par_iter()
                .map(|&idx| {
                    let (a, b, same) = &train[idx];
                    let mut t = Tape::new();
                    let bp = bind(&mut t, &critic.params);
                    let xa = t.constant(critic.real_rows(a));
                    let xb = t.constant(critic.real_rows(b));
                    let score = critic.score_pair(&mut t, &bp, xa, xb);
                    // hinge: same wants score > 1, cross wants score < -1
                    let signed = if *same { t.neg(score) } else { score };
                    let shifted = t.add_scalar(signed, 1.0);
                    let loss = t.relu(shifted);
                    let loss = t.sum_all(loss);
                    let grads = t.backward(loss);
                    collect_grads(&t, &grads, &critic.params, &bp)
                })
                .collect();
            let mut total = results[0].clone();
            for g in results.iter().skip(1) {
                for (acc, gi) in total.iter_mut().zip(g) {
                    acc.add_in_place(gi);
                }
            }
            let scale = s::<S>(1.0 / results.len() as f64);
            for g in &mut total {
                g.scale_in_place(scale);
            }
            crate::numerics::clip_global_norm(&mut total, 5.0);
            adam.step(&mut critic.params, &total);
        }
        let acc = verification_accuracy(critic, holdout);
        if acc >= 0.97 {
            return Ok(VerificationReport { holdout_accuracy: acc, epochs_run });
        }
    }
    Ok(VerificationReport {
        holdout_accuracy: verification_accuracy(critic, holdout),
        epochs_run,
    })
}

fn verification_accuracy<S: Scalar>(
    critic: &StyleCritic<S>,
    holdout: &[(TokenSequence, TokenSequence, bool)],
) -> f64 {
    let hits: usize = holdout
        .par_iter()
        .map(|(a, b, same)| {
            let score = critic.score_sequences(a, b);
            usize::from((score > 0.0) == *same)
        })
        .sum();
    hits as f64 / holdout.len() as f64
}
