//! Sequence-to-sequence Transformer that rewrites a sentence in a
//! style-neutral way. Four encoder and four decoder blocks (pre-norm,
//! multi-head attention, residual feed-forward), a frozen subword embedding
//! table in front, and a logit projection at the end.
//!
//! Pretraining is autoencoding with teacher forcing plus scheduled
//! sampling; adversarial decoding runs autoregressively through the
//! straight-through Gumbel-Softmax so gradients reach the token choices.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::numerics::{
    bind, bind_frozen, causal_mask, collect_grads, embed_rows, s, sinusoidal_positions, Adam,
    Binding, LayerNorm, Linear, MultiHeadAttention, ParamSet, Scalar, Tape, Tensor, Var,
};
use crate::tokenizer::{TokenSequence, BOS, EOS, PAD};
use crate::{rng, Error, Result};

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Encoder and decoder depth (the architecture uses the same for both).
    pub blocks: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { d_model: 128, heads: 4, ffn: 256, blocks: 4, max_len: 32, seed: 0 }
    }
}

/// Probability of feeding the decoder its own previous prediction instead
/// of the ground-truth token, as a function of the global training step.
/// Linear ramp from `start` to `end`; never decreasing.
#[derive(Clone, Debug)]
pub struct SamplingSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: u64,
}

impl SamplingSchedule {
    pub fn linear(end: f64, total_steps: u64) -> Self {
        SamplingSchedule { start: 0.0, end, total_steps }
    }

    pub fn p_sample(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.end;
        }
        let frac = (step as f64 / self.total_steps as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

struct DecoderBlock {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// A generated sequence on a tape: exactly `max_len` rows over the
/// vocabulary. Row 0 is the `<bos>` one-hot, generated rows follow, and
/// everything after `<eos>` is a `<pad>` one-hot carrying no gradient.
pub struct SoftOutput {
    pub row_vars: Vec<Var>,
    pub hard_ids: Vec<usize>,
    /// Rows before padding (`<bos>` and `<eos>` included).
    pub length: usize,
}

/// Plain (off-tape) relaxed sequence: the forward probabilities and the
/// per-step argmax ids.
#[derive(Clone, Debug)]
pub struct SoftSequence<S: Scalar> {
    pub probs: Tensor<S>,
    pub hard_ids: Vec<usize>,
    pub length: usize,
}

pub enum DecodeMode<'a> {
    /// Pure argmax decoding (inference).
    Greedy,
    /// Straight-through Gumbel-Softmax sampling (adversarial training):
    /// hard one-hot forward, relaxed-softmax backward.
    GumbelST { tau: f64, rng: &'a mut ChaCha8Rng },
    /// Fully relaxed Gumbel-Softmax (soft rows forward and backward).
    /// The forward value is differentiable everywhere, which is what
    /// finite-difference gradient checks require; the straight-through
    /// backward uses exactly this surrogate's Jacobian.
    GumbelRelaxed { tau: f64, rng: &'a mut ChaCha8Rng },
}

pub struct Generator<S: Scalar> {
    pub params: ParamSet<S>,
    pub cfg: GeneratorConfig,
    embed: Tensor<S>,
    vocab_size: usize,
    posenc: Tensor<S>,
    input_proj: Linear,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    out_norm: LayerNorm,
    out_proj: Linear,
}

pub fn one_hot_rows<S: Scalar>(ids: &[usize], vocab_size: usize) -> Tensor<S> {
    let mut data = vec![S::zero(); ids.len() * vocab_size];
    for (i, &id) in ids.iter().enumerate() {
        data[i * vocab_size + id] = S::one();
    }
    Tensor::from_vec(vec![ids.len(), vocab_size], data)
}

impl<S: Scalar> Generator<S> {
    pub fn new(embed_table: Tensor<S>, cfg: GeneratorConfig) -> Self {
        let vocab_size = embed_table.shape()[0];
        let d_emb = embed_table.shape()[1];
        let mut r = rng::stream(cfg.seed, "generator-init");
        let mut ps = ParamSet::new();
        let input_proj = Linear::new(&mut ps, "input_proj", d_emb, cfg.d_model, &mut r);
        let mut encoder = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            encoder.push(EncoderBlock {
                ln1: LayerNorm::new(&mut ps, &format!("enc{i}.ln1"), cfg.d_model),
                attn: MultiHeadAttention::new(&mut ps, &format!("enc{i}.attn"), cfg.d_model, cfg.heads, &mut r),
                ln2: LayerNorm::new(&mut ps, &format!("enc{i}.ln2"), cfg.d_model),
                ff1: Linear::new(&mut ps, &format!("enc{i}.ff1"), cfg.d_model, cfg.ffn, &mut r),
                ff2: Linear::new(&mut ps, &format!("enc{i}.ff2"), cfg.ffn, cfg.d_model, &mut r),
            });
        }
        let mut decoder = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            decoder.push(DecoderBlock {
                ln1: LayerNorm::new(&mut ps, &format!("dec{i}.ln1"), cfg.d_model),
                self_attn: MultiHeadAttention::new(&mut ps, &format!("dec{i}.self"), cfg.d_model, cfg.heads, &mut r),
                ln2: LayerNorm::new(&mut ps, &format!("dec{i}.ln2"), cfg.d_model),
                cross_attn: MultiHeadAttention::new(&mut ps, &format!("dec{i}.cross"), cfg.d_model, cfg.heads, &mut r),
                ln3: LayerNorm::new(&mut ps, &format!("dec{i}.ln3"), cfg.d_model),
                ff1: Linear::new(&mut ps, &format!("dec{i}.ff1"), cfg.d_model, cfg.ffn, &mut r),
                ff2: Linear::new(&mut ps, &format!("dec{i}.ff2"), cfg.ffn, cfg.d_model, &mut r),
            });
        }
        let out_norm = LayerNorm::new(&mut ps, "out_norm", cfg.d_model);
        let out_proj = Linear::new(&mut ps, "out_proj", cfg.d_model, vocab_size, &mut r);
        let posenc = sinusoidal_positions(cfg.max_len, cfg.d_model);
        Generator {
            params: ps,
            cfg,
            embed: embed_table,
            vocab_size,
            posenc,
            input_proj,
            encoder,
            decoder,
            out_norm,
            out_proj,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn embed_table(&self) -> &Tensor<S> {
        &self.embed
    }

    fn feed_forward(
        t: &mut Tape<S>,
        bp: &Binding,
        ln: &LayerNorm,
        ff1: &Linear,
        ff2: &Linear,
        x: Var,
    ) -> Var {
        let normed = ln.forward(t, bp, x);
        let h = ff1.forward(t, bp, normed);
        let h = t.relu(h);
        let h = ff2.forward(t, bp, h);
        t.add(x, h)
    }

    fn posenc_slice(&self, t: &mut Tape<S>, start: usize, len: usize) -> Var {
        let d = self.cfg.d_model;
        let mut data = Vec::with_capacity(len * d);
        for p in start..start + len {
            data.extend_from_slice(self.posenc.row(p));
        }
        t.constant(Tensor::from_vec(vec![len, d], data))
    }

    /// Contextual encoding of the valid prefix, zero-padded to
    /// `[max_len, d_model]`. Padding ids never enter the computation, so
    /// the memory is invariant to them.
    pub fn encode_sentence(&self, t: &mut Tape<S>, bp: &Binding, seq: &TokenSequence) -> Var {
        let len = seq.length;
        let rows = embed_rows(&self.embed, &seq.ids[..len]);
        let x = t.constant(rows);
        let mut h = self.input_proj.forward(t, bp, x);
        let pe = self.posenc_slice(t, 0, len);
        h = t.add(h, pe);
        for block in &self.encoder {
            let normed = block.ln1.forward(t, bp, h);
            let attended = block.attn.forward(t, bp, normed, normed, None);
            h = t.add(h, attended);
            h = Self::feed_forward(t, bp, &block.ln2, &block.ff1, &block.ff2, h);
        }
        if len < self.cfg.max_len {
            let zeros = t.constant(Tensor::zeros(&[self.cfg.max_len - len, self.cfg.d_model]));
            h = t.concat_rows(&[h, zeros]);
        }
        h
    }

    /// Teacher-forced decoder pass over `inputs` (token ids), attending to
    /// `memory` limited to `memory_len` valid rows. Returns logits
    /// `[inputs.len(), vocab]`.
    fn decode_teacher_forced(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        memory: Var,
        memory_len: usize,
        inputs: &[usize],
    ) -> Var {
        let l = inputs.len();
        let x = t.constant(embed_rows(&self.embed, inputs));
        let mut h = self.input_proj.forward(t, bp, x);
        let pe = self.posenc_slice(t, 0, l);
        h = t.add(h, pe);
        let causal = causal_mask::<S>(l);
        let memory_valid = t.slice_rows(memory, 0, memory_len);
        for block in &self.decoder {
            let normed = block.ln1.forward(t, bp, h);
            let attended = block.self_attn.forward(t, bp, normed, normed, Some(&causal));
            h = t.add(h, attended);
            let normed = block.ln2.forward(t, bp, h);
            let crossed = block.cross_attn.forward(t, bp, normed, memory_valid, None);
            h = t.add(h, crossed);
            h = Self::feed_forward(t, bp, &block.ln3, &block.ff1, &block.ff2, h);
        }
        let normed = self.out_norm.forward(t, bp, h);
        self.out_proj.forward(t, bp, normed)
    }

    /// Autoregressive decoding from `<bos>`. Generates until `<eos>` or the
    /// length limit, then pads with `<pad>` one-hots. Gradient flows through
    /// every generated row in Gumbel mode.
    pub fn generate_soft(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        seq: &TokenSequence,
        mode: &mut DecodeMode<'_>,
    ) -> SoftOutput {
        let memory = self.encode_sentence(t, bp, seq);
        self.decode_from_memory(t, bp, memory, seq.length, mode)
    }

    fn decode_from_memory(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        memory: Var,
        memory_len: usize,
        mode: &mut DecodeMode<'_>,
    ) -> SoftOutput {
        let max_len = self.cfg.max_len;
        let v = self.vocab_size;
        let memory_valid = t.slice_rows(memory, 0, memory_len);

        // cross-attention keys/values are fixed for the whole decode
        let mut cross_kv: Vec<(Var, Var)> = Vec::with_capacity(self.decoder.len());
        for block in &self.decoder {
            let k = block.cross_attn.wk.forward(t, bp, memory_valid);
            let vv = block.cross_attn.wv.forward(t, bp, memory_valid);
            cross_kv.push((k, vv));
        }

        let mut self_k: Vec<Vec<Var>> = vec![Vec::new(); self.decoder.len()];
        let mut self_v: Vec<Vec<Var>> = vec![Vec::new(); self.decoder.len()];

        let bos_row = t.constant(one_hot_rows::<S>(&[BOS], v));
        let mut row_vars: Vec<Var> = vec![bos_row];
        let mut hard_ids: Vec<usize> = vec![BOS];

        let mut prev_embed: Var = {
            
            t.constant(embed_rows(&self.embed, &[BOS]))
        };
        let embed_const = t.constant(self.embed.clone());

        let mut length = 1usize;
        for step in 0..max_len - 1 {
            let mut h = self.input_proj.forward(t, bp, prev_embed);
            let pe = self.posenc_slice(t, step, 1);
            h = t.add(h, pe);
            for (li, block) in self.decoder.iter().enumerate() {
                let normed = block.ln1.forward(t, bp, h);
                let (attended, k_new, v_new) =
                    block.self_attn.forward_cached(t, bp, normed, &self_k[li], &self_v[li]);
                self_k[li].push(k_new);
                self_v[li].push(v_new);
                h = t.add(h, attended);
                let normed = block.ln2.forward(t, bp, h);
                let crossed = attend_precomputed(
                    t,
                    bp,
                    &block.cross_attn,
                    normed,
                    cross_kv[li].0,
                    cross_kv[li].1,
                );
                h = t.add(h, crossed);
                h = Self::feed_forward(t, bp, &block.ln3, &block.ff1, &block.ff2, h);
            }
            let normed = self.out_norm.forward(t, bp, h);
            let logits = self.out_proj.forward(t, bp, normed);
            let row = match mode {
                DecodeMode::Greedy => {
                    let id = crate::numerics::argmax_rows(t.value(logits))[0];
                    t.constant(one_hot_rows::<S>(&[id], v))
                }
                DecodeMode::GumbelST { tau, rng } => t.gumbel_softmax_st(logits, *tau, rng),
                DecodeMode::GumbelRelaxed { tau, rng } => {
                    use rand::Rng;
                    let noise: Vec<S> = (0..v)
                        .map(|_| {
                            let u: f64 = rng.gen_range(1e-10..1.0 - 1e-10);
                            s::<S>(-((-u.ln()).ln()))
                        })
                        .collect();
                    let noise = t.constant(Tensor::from_vec(vec![1, v], noise));
                    let perturbed = t.add(logits, noise);
                    let scaled = t.scale(perturbed, 1.0 / *tau);
                    t.softmax_rows(scaled)
                }
            };
            let id = crate::numerics::argmax_rows(t.value(row))[0];
            row_vars.push(row);
            hard_ids.push(id);
            length += 1;
            if id == EOS {
                break;
            }
            prev_embed = t.matmul(row, false, embed_const, false);
        }
        while row_vars.len() < max_len {
            row_vars.push(t.constant(one_hot_rows::<S>(&[PAD], v)));
            hard_ids.push(PAD);
        }
        SoftOutput { row_vars, hard_ids, length }
    }

    /// Materialize a [`SoftOutput`] off the tape.
    pub fn soft_sequence(&self, t: &Tape<S>, out: &SoftOutput) -> SoftSequence<S> {
        let v = self.vocab_size;
        let mut data = Vec::with_capacity(out.row_vars.len() * v);
        for &rv in &out.row_vars {
            data.extend_from_slice(t.value(rv).data());
        }
        SoftSequence {
            probs: Tensor::from_vec(vec![out.row_vars.len(), v], data),
            hard_ids: out.hard_ids.clone(),
            length: out.length,
        }
    }

    /// End-to-end rewrite: encode, decode greedily, detokenize.
    pub fn anonymize(&self, text: &str, vocab: &crate::tokenizer::Vocab) -> Result<String> {
        if text.trim().is_empty() {
            return Ok(String::new());
        }
        let seq = crate::tokenizer::encode(text, vocab, self.cfg.max_len);
        let mut t = Tape::new();
        let bp = bind_frozen(&mut t, &self.params);
        let out = self.generate_soft(&mut t, &bp, &seq, &mut DecodeMode::Greedy);
        let ts = TokenSequence {
            ids: out.hard_ids.clone(),
            length: out.length,
            max_len: self.cfg.max_len,
        };
        crate::tokenizer::decode(&ts, vocab)
    }

    /// Greedy-decode token accuracy against the identity target, measured
    /// on non-pad positions.
    pub fn reconstruction_accuracy(&self, sentences: &[TokenSequence]) -> f64 {
        let (hits, total) = sentences
            .par_iter()
            .map(|seq| {
                let mut t = Tape::new();
                let bp = bind_frozen(&mut t, &self.params);
                let out = self.generate_soft(&mut t, &bp, seq, &mut DecodeMode::Greedy);
                let mut hits = 0usize;
                let mut total = 0usize;
                for pos in 0..seq.length {
                    total += 1;
                    if pos < out.hard_ids.len() && out.hard_ids[pos] == seq.ids[pos] {
                        hits += 1;
                    }
                }
                (hits, total)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }

    /// Cross-entropy of the teacher-forced autoencoding objective for one
    /// sentence, with scheduled-sampling input mixing. Returns the loss Var.
    fn mle_loss(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        seq: &TokenSequence,
        p_sample: f64,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        let len = seq.length;
        let memory = self.encode_sentence(t, bp, seq);
        // pass 1: model predictions under teacher forcing, no gradients
        let gold_inputs = &seq.ids[..len - 1];
        let preds = {
            let mut t2 = Tape::new();
            let bp2 = bind_frozen(&mut t2, &self.params);
            let memory2 = self.encode_sentence(&mut t2, &bp2, seq);
            let logits = self.decode_teacher_forced(&mut t2, &bp2, memory2, len, gold_inputs);
            crate::numerics::argmax_rows(t2.value(logits))
        };
        // pass 2: mix gold and own predictions as decoder inputs
        let mut inputs = gold_inputs.to_vec();
        for pos in 1..inputs.len() {
            if rng.gen_bool(p_sample) {
                inputs[pos] = preds[pos - 1];
            }
        }
        let logits = self.decode_teacher_forced(t, bp, memory, len, &inputs);
        let logp = t.log_softmax_rows(logits);
        let targets = &seq.ids[1..len];
        let picked = t.gather_rows(logp, targets);
        let nll = t.mean_all(picked);
        t.neg(nll)
    }
}

/// Attention where the key/value projections were computed in advance
/// (cross-attention during incremental decoding).
fn attend_precomputed<S: Scalar>(
    t: &mut Tape<S>,
    bp: &Binding,
    attn: &MultiHeadAttention,
    q_row: Var,
    k: Var,
    v: Var,
) -> Var {
    let q = attn.wq.forward(t, bp, q_row);
    let dh = attn.d_model / attn.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outs = Vec::with_capacity(attn.heads);
    for h in 0..attn.heads {
        let qh = t.slice_cols(q, h * dh, dh);
        let kh = t.slice_cols(k, h * dh, dh);
        let vh = t.slice_cols(v, h * dh, dh);
        let scores = t.matmul(qh, false, kh, true);
        let scaled = t.scale(scores, scale);
        let a = t.softmax_rows(scaled);
        head_outs.push(t.matmul(a, false, vh, false));
    }
    let cat = t.concat_cols(&head_outs);
    attn.wo.forward(t, bp, cat)
}

pub struct PretrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub holdout_accuracy: f64,
    /// Mean training loss per epoch, in order.
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub schedule: SamplingSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Early-stop threshold on holdout token reconstruction accuracy.
    pub target_accuracy: f64,
    /// Log one line per epoch to stderr.
    pub verbose: bool,
}

/// Autoencoding pretraining: reconstruct the input sentence under
/// cross-entropy, mixing in the model's own predictions per the schedule.
/// Stops early once `target_accuracy` is reached on the holdout.
pub fn pretrain_mle<S: Scalar>(
    generator: &mut Generator<S>,
    train: &[TokenSequence],
    holdout: &[TokenSequence],
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if train.is_empty() {
        return Err(Error::validation("pretraining needs a non-empty corpus"));
    }
    let (schedule, epochs, batch_size, lr, seed) =
        (&cfg.schedule, cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed);
    let mut adam = Adam::new(lr, 0.9, 0.999, &generator.params);
    let mut step: u64 = 0;
    let mut last_loss = f64::NAN;
    let mut epochs_run = 0;
    let mut epoch_losses: Vec<f64> = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        epochs_run = epoch + 1;
        let mut epoch_loss_sum = 0.0;
        let mut epoch_batches = 0usize;
        let mut order: Vec<usize> = (0..train.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut r = rng::stream_at(seed, "pretrain-shuffle", epoch as u64, 0);
            order.shuffle(&mut r);
        }
        for chunk in order.chunks(batch_size) {
            let p = schedule.p_sample(step);
            let results: Vec<(Vec<Tensor<S>>, f64)> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, &si)| {
                    let seq = &train[si];
                    let mut t = Tape::new();
                    let bp = bind(&mut t, &generator.params);
                    let mut r = rng::stream_at(seed, "pretrain-mix", step, i as u64);
                    let loss = generator.mle_loss(&mut t, &bp, seq, p, &mut r);
                    let loss_val = t.value(loss).item().as_f64();
                    let grads = t.backward(loss);
                    (collect_grads(&t, &grads, &generator.params, &bp), loss_val)
                })
                .collect();
            let mut total: Vec<Tensor<S>> = results[0].0.clone();
            for (g, _) in results.iter().skip(1) {
                for (acc, gi) in total.iter_mut().zip(g) {
                    acc.add_in_place(gi);
                }
            }
            let scale = s::<S>(1.0 / results.len() as f64);
            for g in &mut total {
                g.scale_in_place(scale);
            }
            last_loss = results.iter().map(|(_, l)| l).sum::<f64>() / results.len() as f64;
            epoch_loss_sum += last_loss;
            epoch_batches += 1;
            if !last_loss.is_finite() {
                return Err(Error::TrainingHealth {
                    step,
                    detail: format!("pretraining loss became {last_loss}"),
                });
            }
            crate::numerics::clip_global_norm(&mut total, 5.0);
            adam.step(&mut generator.params, &total);
            step += 1;
        }
        epoch_losses.push(epoch_loss_sum / epoch_batches.max(1) as f64);
        let acc = generator.reconstruction_accuracy(holdout);
        if cfg.verbose {
            eprintln!(
                "pretrain epoch {epoch}: loss {last_loss:.4}, holdout accuracy {acc:.4}, p_sample {:.3}",
                schedule.p_sample(step)
            );
        }
        if acc >= cfg.target_accuracy {
            return Ok(PretrainReport {
                epochs_run,
                final_loss: last_loss,
                holdout_accuracy: acc,
                epoch_losses,
            });
        }
    }
    let holdout_accuracy = generator.reconstruction_accuracy(holdout);
    Ok(PretrainReport { epochs_run, final_loss: last_loss, holdout_accuracy, epoch_losses })
}
