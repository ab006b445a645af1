//! Parameter registry and the neural layers the models are assembled from.
//!
//! Parameters live in a [`ParamSet`] owned by each model. Before a forward
//! pass they are bound onto a [`Tape`] — as leaves when training, as
//! constants for pure inference — and layers address them through
//! [`ParamId`] handles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::{s, Scalar, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

pub struct ParamSet<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Total scalar count across all parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Replace every tensor from a `name -> tensor` source, e.g. a loaded
    /// checkpoint. Shapes must match.
    pub fn load_from(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor<S>>) -> crate::Result<()> {
        for i in 0..self.tensors.len() {
            let name = self.names[i].clone();
            let t = lookup(&name).ok_or_else(|| {
                crate::Error::validation(format!("checkpoint missing parameter {name}"))
            })?;
            if t.shape() != self.tensors[i].shape() {
                return Err(crate::Error::shape(format!(
                    "parameter {name}: checkpoint shape {:?} vs model shape {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

/// Tape handles for every parameter of a set.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Bind parameters as differentiated leaves (training mode).
pub fn bind<S: Scalar>(tape: &mut Tape<S>, params: &ParamSet<S>) -> Binding {
    Binding { vars: params.tensors.iter().map(|t| tape.leaf(t.clone())).collect() }
}

/// Bind parameters as constants (inference mode — no gradient bookkeeping).
pub fn bind_frozen<S: Scalar>(tape: &mut Tape<S>, params: &ParamSet<S>) -> Binding {
    Binding { vars: params.tensors.iter().map(|t| tape.constant(t.clone())).collect() }
}

/// Collect per-parameter gradients after a backward pass. Parameters that
/// did not participate get zeros.
pub fn collect_grads<S: Scalar>(
    tape: &Tape<S>,
    grads: &super::tape::Grads<S>,
    params: &ParamSet<S>,
    binding: &Binding,
) -> Vec<Tensor<S>> {
    let _ = tape;
    params
        .iter()
        .map(|(id, _, t)| grads.get_or_zeros(binding.var(id), t.shape()))
        .collect()
}

fn uniform_init<S: Scalar>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| s::<S>(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape.to_vec(), data)
}

/// Xavier-uniform initialization.
fn xavier<S: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_init(shape, bound, rng)
}

/// Fully connected layer `y = x W + b`.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), xavier(&[d_in, d_out], d_in, d_out, rng));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Linear { w, b, d_in, d_out }
    }

    /// Zero-initialized variant (used by critic heads).
    pub fn zeros<S: Scalar>(ps: &mut ParamSet<S>, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[d_in, d_out]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, bp: &Binding, x: Var) -> Var {
        let m = t.matmul(x, false, bp.var(self.w), false);
        t.add_row(m, bp.var(self.b))
    }
}

/// Layer normalization with learned scale and shift.
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, name: &str, dim: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::full(&[dim], S::one()));
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta, eps: 1e-5 }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, bp: &Binding, x: Var) -> Var {
        t.layer_norm(x, bp.var(self.gamma), bp.var(self.beta), self.eps)
    }
}

/// Same-length 1-d convolution, stride 1, kernel `k`, zero padding.
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1d {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), xavier(&[k, c_in, c_out], k * c_in, k * c_out, rng));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Conv1d { w, b, k, c_in, c_out }
    }

    pub fn zeros<S: Scalar>(ps: &mut ParamSet<S>, name: &str, k: usize, c_in: usize, c_out: usize) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[k, c_in, c_out]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Conv1d { w, b, k, c_in, c_out }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, bp: &Binding, x: Var) -> Var {
        t.conv1d(x, bp.var(self.w), bp.var(self.b), self.k)
    }
}

/// Two convolutions with a skip connection: `x + conv2(relu(conv1(x)))`.
/// With all-zero weights this is the identity map.
pub struct ResidualConvBlock {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

impl ResidualConvBlock {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        k: usize,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ResidualConvBlock {
            conv1: Conv1d::new(ps, &format!("{name}.conv1"), k, channels, channels, rng),
            conv2: Conv1d::new(ps, &format!("{name}.conv2"), k, channels, channels, rng),
        }
    }

    pub fn zeros<S: Scalar>(ps: &mut ParamSet<S>, name: &str, k: usize, channels: usize) -> Self {
        ResidualConvBlock {
            conv1: Conv1d::zeros(ps, &format!("{name}.conv1"), k, channels, channels),
            conv2: Conv1d::zeros(ps, &format!("{name}.conv2"), k, channels, channels),
        }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, bp: &Binding, x: Var) -> Var {
        let u = self.conv1.forward(t, bp, x);
        let r = t.relu(u);
        let v = self.conv2.forward(t, bp, r);
        t.add(x, v)
    }

    /// Forward pass that also returns the pre-activation of the inner relu,
    /// needed to build the input-gradient graph for the gradient penalty.
    pub fn forward_with_pre<S: Scalar>(&self, t: &mut Tape<S>, bp: &Binding, x: Var) -> (Var, Var) {
        let u = self.conv1.forward(t, bp, x);
        let r = t.relu(u);
        let v = self.conv2.forward(t, bp, r);
        (t.add(x, v), u)
    }
}

/// Single GRU cell; step over a sequence row by row.
pub struct GruCell {
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mk_w = |ps: &mut ParamSet<S>, n: String, rng: &mut ChaCha8Rng| {
            ps.add(n, xavier(&[d_in, d_h], d_in, d_h, rng))
        };
        let mk_u = |ps: &mut ParamSet<S>, n: String, rng: &mut ChaCha8Rng| {
            ps.add(n, xavier(&[d_h, d_h], d_h, d_h, rng))
        };
        GruCell {
            wr: mk_w(ps, format!("{name}.wr"), rng),
            ur: mk_u(ps, format!("{name}.ur"), rng),
            br: ps.add(format!("{name}.br"), Tensor::zeros(&[d_h])),
            wz: mk_w(ps, format!("{name}.wz"), rng),
            uz: mk_u(ps, format!("{name}.uz"), rng),
            bz: ps.add(format!("{name}.bz"), Tensor::zeros(&[d_h])),
            wn: mk_w(ps, format!("{name}.wn"), rng),
            un: mk_u(ps, format!("{name}.un"), rng),
            bn: ps.add(format!("{name}.bn"), Tensor::zeros(&[d_h])),
            d_in,
            d_h,
        }
    }

    /// One step: `x [1, d_in]`, `h [1, d_h]` -> new `h`.
    pub fn step<S: Scalar>(&self, t: &mut Tape<S>, bp: &Binding, x: Var, h: Var) -> Var {
        let gate = |t: &mut Tape<S>, w: ParamId, u: ParamId, b: ParamId, x: Var, h: Var| {
            let a = t.matmul(x, false, bp.var(w), false);
            let c = t.matmul(h, false, bp.var(u), false);
            let sum = t.add(a, c);
            t.add_row(sum, bp.var(b))
        };
        let r_pre = gate(t, self.wr, self.ur, self.br, x, h);
        let r = t.sigmoid(r_pre);
        let z_pre = gate(t, self.wz, self.uz, self.bz, x, h);
        let z = t.sigmoid(z_pre);
        let xn = t.matmul(x, false, bp.var(self.wn), false);
        let hn = t.matmul(h, false, bp.var(self.un), false);
        let rhn = t.mul(r, hn);
        let n_sum = t.add(xn, rhn);
        let n_pre = t.add_row(n_sum, bp.var(self.bn));
        let n = t.tanh(n_pre);
        let neg_z = t.neg(z);
        let one_minus_z = t.add_scalar(neg_z, 1.0);
        let a = t.mul(one_minus_z, n);
        let b = t.mul(z, h);
        t.add(a, b)
    }

    pub fn initial_state<S: Scalar>(&self, t: &mut Tape<S>) -> Var {
        t.constant(Tensor::zeros(&[1, self.d_h]))
    }
}

/// Multi-head attention with optional causal masking.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert_eq!(d_model % heads, 0, "d_model must divide into heads");
        MultiHeadAttention {
            wq: Linear::new(ps, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(ps, &format!("{name}.wo"), d_model, d_model, rng),
            heads,
            d_model,
        }
    }

    /// Full attention: queries from `q_in [Lq, d]`, keys/values from
    /// `kv_in [Lk, d]`, plus an optional additive mask `[Lq, Lk]`.
    pub fn forward<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        q_in: Var,
        kv_in: Var,
        mask: Option<&Tensor<S>>,
    ) -> Var {
        let q = self.wq.forward(t, bp, q_in);
        let k = self.wk.forward(t, bp, kv_in);
        let v = self.wv.forward(t, bp, kv_in);
        let mask_var = mask.map(|m| t.constant(m.clone()));
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let scores = t.matmul(qh, false, kh, true);
            let scaled = t.scale(scores, scale);
            let masked = match mask_var {
                Some(m) => t.add(scaled, m),
                None => scaled,
            };
            let attn = t.softmax_rows(masked);
            head_outs.push(t.matmul(attn, false, vh, false));
        }
        let cat = t.concat_cols(&head_outs);
        self.wo.forward(t, bp, cat)
    }

    /// Incremental decoding step: a single query row attends over
    /// previously cached projected key/value rows. The caller owns the cache;
    /// this returns (output row, k row, v row) so the new projections can be
    /// appended after the step.
    pub fn forward_cached<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        bp: &Binding,
        q_row: Var,
        cached_k: &[Var],
        cached_v: &[Var],
    ) -> (Var, Var, Var) {
        let q = self.wq.forward(t, bp, q_row);
        let k_new = self.wk.forward(t, bp, q_row);
        let v_new = self.wv.forward(t, bp, q_row);
        let mut k_all: Vec<Var> = cached_k.to_vec();
        k_all.push(k_new);
        let mut v_all: Vec<Var> = cached_v.to_vec();
        v_all.push(v_new);
        let k = t.concat_rows(&k_all);
        let v = t.concat_rows(&v_all);
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let scores = t.matmul(qh, false, kh, true);
            let scaled = t.scale(scores, scale);
            let attn = t.softmax_rows(scaled);
            head_outs.push(t.matmul(attn, false, vh, false));
        }
        let cat = t.concat_cols(&head_outs);
        (self.wo.forward(t, bp, cat), k_new, v_new)
    }
}

/// Additive causal mask: position `i` may attend to positions `<= i`.
pub fn causal_mask<S: Scalar>(len: usize) -> Tensor<S> {
    let neg = s::<S>(-1e9);
    let mut data = vec![S::zero(); len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * len + j] = neg;
        }
    }
    Tensor::from_vec(vec![len, len], data)
}

/// Additive padding mask: every query may attend only to key positions
/// `< valid`.
pub fn pad_mask<S: Scalar>(q_len: usize, k_len: usize, valid: usize) -> Tensor<S> {
    let neg = s::<S>(-1e9);
    let mut data = vec![S::zero(); q_len * k_len];
    for i in 0..q_len {
        for j in valid..k_len {
            data[i * k_len + j] = neg;
        }
    }
    Tensor::from_vec(vec![q_len, k_len], data)
}

/// Sinusoidal positional encodings `[max_len, d]`.
pub fn sinusoidal_positions<S: Scalar>(max_len: usize, d: usize) -> Tensor<S> {
    let mut data = vec![S::zero(); max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            data[pos * d + i] = s::<S>(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_vec(vec![max_len, d], data)
}

/// Plain embedding lookup of token ids into a frozen table.
pub fn embed_rows<S: Scalar>(table: &Tensor<S>, ids: &[usize]) -> Tensor<S> {
    let d = table.cols();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        data.extend_from_slice(table.row(id));
    }
    Tensor::from_vec(vec![ids.len(), d], data)
}
