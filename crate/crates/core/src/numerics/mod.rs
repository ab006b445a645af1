//! Tensors, reverse-mode differentiation, neural layers, the optimizer, and
//! stochastic relaxation primitives. Everything the model modules build on.

pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use layers::{
    bind, bind_frozen, causal_mask, collect_grads, embed_rows, pad_mask, sinusoidal_positions,
    Binding, Conv1d, GruCell, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamSet,
    ResidualConvBlock,
};
pub use optim::{clip_global_norm, Adam};
pub use tape::{argmax_rows, Grads, Tape, Var};
pub use tensor::{matmul, s, Scalar, Tensor};

use crate::{Error, Result};

/// Mean over sliding windows of the rows of `m`; stride-`stride` windows of
/// `pool` rows. Plain (non-tape) variant of the pooling used by the content
/// score.
pub fn avg_pool_1d<S: Scalar>(m: &Tensor<S>, pool: usize, stride: usize) -> Result<Tensor<S>> {
    if pool < 1 || stride < 1 {
        return Err(Error::config("pool and stride must be >= 1"));
    }
    if m.rows() < pool {
        return Err(Error::shape(format!(
            "avg_pool_1d: length {} shorter than pool {}",
            m.rows(),
            pool
        )));
    }
    let mut tape: Tape<S> = Tape::new();
    let v = tape.constant(m.clone());
    let out = tape.avg_pool_rows(v, pool, stride);
    Ok(tape.value(out).clone())
}

/// Cosine similarity of two equal-length vectors; returns 0 when either norm
/// is below 1e-12.
pub fn cosine_similarity<S: Scalar>(a: &[S], b: &[S]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cosine_similarity: lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na.sqrt() < 1e-12 || nb.sqrt() < 1e-12 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Compare the reverse-mode gradient of a scalar-valued tape function with
/// central finite differences at `point`. Returns the max relative error
/// over all coordinates.
pub fn grad_check<F>(f: F, shape: &[usize], point: &[f64], eps: f64) -> f64
where
    F: Fn(&mut Tape<f64>, Var) -> Var,
{
    let eval = |p: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::from_vec(shape.to_vec(), p.to_vec()));
        let out = f(&mut tape, v);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::from_vec(shape.to_vec(), point.to_vec()));
    let out = f(&mut tape, v);
    let grads = tape.backward(out);
    let analytic = grads.get_or_zeros(v, shape);

    let mut max_rel = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.to_vec();
        plus[i] += eps;
        let mut minus = point.to_vec();
        minus[i] -= eps;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-9);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
