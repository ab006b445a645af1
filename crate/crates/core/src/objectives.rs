//! Loss assembly for the generator: the pooled-embedding content score and
//! the weighted three-term objective.
//!
//! The content score embeds the input by table lookup and the generated
//! side by its expected embedding (probability-weighted rows of the same
//! frozen table), average-pools both along the sequence, and takes the mean
//! of windowwise cosine similarities. Windows that are entirely padding on
//! either side are excluded so padding cannot inflate similarity.

use crate::numerics::{embed_rows, Scalar, Tape, Tensor, Var};
use crate::tokenizer::TokenSequence;
use crate::{Error, Result};

/// All loss weights and relaxation constants for adversarial training.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub style: f64,
    pub fluency: f64,
    pub content: f64,
    pub grad_penalty: f64,
    pub temperature: f64,
    pub interp_mix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            style: 1.0,
            fluency: 7.0,
            content: 6.0,
            grad_penalty: 0.05,
            temperature: 1.0,
            interp_mix: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("style", self.style),
            ("fluency", self.fluency),
            ("content", self.content),
            ("grad_penalty", self.grad_penalty),
            ("temperature", self.temperature),
            ("interp_mix", self.interp_mix),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::config(format!("loss weight {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-step loss components. `total` is reconstructible from the parts.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub style_term: f64,
    pub fluency_term: f64,
    pub content_score: f64,
    pub total: f64,
}

/// The generator objective on plain numbers:
/// `style_w * style + fluency_w * fluency - content_w * content`.
pub fn generator_loss(style_term: f64, fluency_term: f64, content: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        style_term,
        fluency_term,
        content_score: content,
        total: w.style * style_term + w.fluency * fluency_term - w.content * content,
    }
}

/// Tape assembly of the same objective from scalar Vars.
pub fn generator_objective<S: Scalar>(
    t: &mut Tape<S>,
    style_mean: Var,
    fluency_mean: Var,
    content_mean: Var,
    w: &LossWeights,
) -> Var {
    let sty = t.scale(style_mean, w.style);
    let fl = t.scale(fluency_mean, w.fluency);
    let con = t.scale(content_mean, -w.content);
    let a = t.add(sty, fl);
    t.add(a, con)
}

/// Differentiable content score between an input token sequence and a
/// generated soft sequence (rows on the tape). Both sides span `max_len`
/// positions. Returns a scalar Var in `[-1, 1]`.
pub fn content_score<S: Scalar>(
    t: &mut Tape<S>,
    input: &TokenSequence,
    output_rows: &[Var],
    output_length: usize,
    table: &Tensor<S>,
    pool: usize,
    stride: usize,
) -> Result<Var> {
    let max_len = input.max_len;
    if max_len < pool {
        return Err(Error::shape(format!("max_len {max_len} shorter than pool {pool}")));
    }
    if output_rows.len() != max_len {
        return Err(Error::shape(format!(
            "output has {} rows, expected {max_len}",
            output_rows.len()
        )));
    }
    let in_embed = t.constant(embed_rows(table, &input.ids));
    let out_cat = t.concat_rows(output_rows);
    let table_const = t.constant(table.clone());
    let out_embed = t.matmul(out_cat, false, table_const, false);

    let in_pooled = t.avg_pool_rows(in_embed, pool, stride);
    let out_pooled = t.avg_pool_rows(out_embed, pool, stride);
    let windows = (max_len - pool) / stride + 1;

    let mut sims: Vec<Var> = Vec::new();
    for w in 0..windows {
        let start = w * stride;
        // excluded when every covered position is padding on either side
        if start >= input.length || start >= output_length {
            continue;
        }
        let a = t.slice_rows(in_pooled, w, 1);
        let b = t.slice_rows(out_pooled, w, 1);
        let dot_ab = {
            let m = t.mul(a, b);
            t.sum_all(m)
        };
        let dot_aa = {
            let m = t.mul(a, a);
            t.sum_all(m)
        };
        let dot_bb = {
            let m = t.mul(b, b);
            t.sum_all(m)
        };
        let prod = t.mul(dot_aa, dot_bb);
        let prod = t.add_scalar(prod, 1e-24);
        let denom = t.sqrt(prod);
        sims.push(t.div(dot_ab, denom));
    }
    if sims.is_empty() {
        return Err(Error::validation("content score has no non-padding windows"));
    }
    let cat = t.concat_rows(&sims);
    Ok(t.mean_all(cat))
}

/// Off-tape content score between two hard token sequences.
pub fn content_score_hard<S: Scalar>(
    a: &TokenSequence,
    b: &TokenSequence,
    table: &Tensor<S>,
    pool: usize,
    stride: usize,
) -> Result<f64> {
    let mut t: Tape<S> = Tape::new();
    let v = table.shape()[0];
    let rows: Vec<Var> = b
        .ids
        .iter()
        .map(|&id| t.constant(crate::generator::one_hot_rows::<S>(&[id], v)))
        .collect();
    let score = content_score(&mut t, a, &rows, b.length, table, pool, stride)?;
    Ok(t.value(score).item().as_f64())
}
