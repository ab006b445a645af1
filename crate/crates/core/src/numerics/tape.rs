//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] replays it
//! in reverse and returns gradients for every node that was entered with
//! [`Tape::leaf`]. Constants ([`Tape::constant`]) do not track gradients, so
//! e.g. the frozen embedding table costs nothing in the backward pass.
//!
//! Gradient-penalty training needs the critic's input gradient as a
//! *differentiable* quantity. That path is built out of the same primitives
//! (`matmul` with transpose flags, [`Tape::conv1d_input_grad`], constant
//! activation masks), so one tape handles it without a second-order engine.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul, s, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn<S> = Box<dyn Fn(&[Tensor<S>], &Tensor<S>, &mut [Option<Tensor<S>>])>;

pub struct Tape<S: Scalar> {
    values: Vec<Tensor<S>>,
    backs: Vec<Option<BackFn<S>>>,
    needs_grad: Vec<bool>,
}

/// Gradients keyed by tape node, produced by [`Tape::backward`].
pub struct Grads<S: Scalar> {
    by_node: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or a zero tensor of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<S> {
        match self.get(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, delta: Tensor<S>) {
    match slot {
        Some(t) => t.add_in_place(&delta),
        None => *slot = Some(delta),
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), backs: Vec::new(), needs_grad: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    fn push(&mut self, value: Tensor<S>, needs: bool, back: Option<BackFn<S>>) -> Var {
        self.values.push(value);
        self.backs.push(back);
        self.needs_grad.push(needs);
        Var(self.values.len() - 1)
    }

    /// A differentiated input: gradients are tracked and retrievable.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, true, None)
    }

    /// A non-differentiated input (data, masks, frozen tables).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, false, None)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    /// Reverse pass from a scalar-shaped root. Returns per-node gradients.
    pub fn backward(&self, root: Var) -> Grads<S> {
        assert_eq!(self.values[root.0].len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.values.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(S::one()));
        for id in (0..=root.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            if let Some(back) = &self.backs[id] {
                let g = grads[id].take().expect("checked above");
                back(&self.values, &g, &mut grads);
                grads[id] = Some(g);
            }
        }
        Grads { by_node: grads }
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let va = &self.values[a.0];
        let vb = &self.values[b.0];
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let out = Tensor::from_vec(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect(),
        );
        let (na, nb) = (self.needs_grad[a.0], self.needs_grad[b.0]);
        self.push(
            out,
            na || nb,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if nb {
                    accumulate(&mut grads[b.0], g.clone());
                }
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let va = &self.values[a.0];
        let vb = &self.values[b.0];
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let out = Tensor::from_vec(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect(),
        );
        let (na, nb) = (self.needs_grad[a.0], self.needs_grad[b.0]);
        self.push(
            out,
            na || nb,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if nb {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let va = &self.values[a.0];
        let vb = &self.values[b.0];
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let out = Tensor::from_vec(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect(),
        );
        let (na, nb) = (self.needs_grad[a.0], self.needs_grad[b.0]);
        self.push(
            out,
            na || nb,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let vb = &vals[b.0];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data().iter().zip(vb.data()).map(|(&gv, &bv)| gv * bv).collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
                if nb {
                    let va = &vals[a.0];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data().iter().zip(va.data()).map(|(&gv, &av)| gv * av).collect(),
                    );
                    accumulate(&mut grads[b.0], d);
                }
            })),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let va = &self.values[a.0];
        let vb = &self.values[b.0];
        assert_eq!(va.shape(), vb.shape(), "div shape mismatch");
        let out = Tensor::from_vec(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(&x, &y)| x / y).collect(),
        );
        let (na, nb) = (self.needs_grad[a.0], self.needs_grad[b.0]);
        self.push(
            out,
            na || nb,
            Some(Box::new(move |vals, g, grads| {
                let vb = &vals[b.0];
                if na {
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data().iter().zip(vb.data()).map(|(&gv, &bv)| gv / bv).collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
                if nb {
                    let va = &vals[a.0];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(va.data())
                            .zip(vb.data())
                            .map(|((&gv, &av), &bv)| -gv * av / (bv * bv))
                            .collect(),
                    );
                    accumulate(&mut grads[b.0], d);
                }
            })),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cs = s::<S>(c);
        let out = self.values[a.0].map(|v| v * cs);
        let na = self.needs_grad[a.0];
        self.push(
            out,
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    accumulate(&mut grads[a.0], g.map(|v| v * cs));
                }
            })),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = s::<S>(c);
        let out = self.values[a.0].map(|v| v + cs);
        let na = self.needs_grad[a.0];
        self.push(
            out,
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    accumulate(&mut grads[a.0], g.clone());
                }
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| if v > S::zero() { v } else { S::zero() });
        let na = self.needs_grad[a.0];
        self.push(
            out,
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let x = &vals[a.0];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                            .collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| v.tanh());
        let na = self.needs_grad[a.0];
        let id = self.values.len();
        self.push(
            out,
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let y = &vals[id];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| gv * (S::one() - yv * yv))
                            .collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = S::one();
        let out = self.values[a.0].map(|v| one / (one + (-v).exp()));
        let na = self.needs_grad[a.0];
        let id = self.values.len();
        self.push(
            out,
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let y = &vals[id];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| gv * yv * (S::one() - yv))
                            .collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
            })),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| v.abs());
        let na = self.needs_grad[a.0];
        self.push(
            out,
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let x = &vals[a.0];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&gv, &xv)| {
                                if xv > S::zero() {
                                    gv
                                } else if xv < S::zero() {
                                    -gv
                                } else {
                                    S::zero()
                                }
                            })
                            .collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
            })),
        )
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| v.sqrt());
        let na = self.needs_grad[a.0];
        let id = self.values.len();
        self.push(
            out,
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let y = &vals[id];
                    let half = s::<S>(0.5);
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * half / yv).collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
            })),
        )
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let cs = s::<S>(c);
        let out = self.values[a.0].map(|v| if v > cs { v } else { cs });
        let na = self.needs_grad[a.0];
        self.push(
            out,
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let x = &vals[a.0];
                    let d = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&gv, &xv)| if xv > cs { gv } else { S::zero() })
                            .collect(),
                    );
                    accumulate(&mut grads[a.0], d);
                }
            })),
        )
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = matmul(&self.values[a.0], ta, &self.values[b.0], tb);
        let (na, nb) = (self.needs_grad[a.0], self.needs_grad[b.0]);
        self.push(
            out,
            na || nb,
            Some(Box::new(move |vals, g, grads| {
                let va = &vals[a.0];
                let vb = &vals[b.0];
                if na {
                    // dA for C = op(A) @ op(B)
                    let d = match (ta, tb) {
                        (false, false) => matmul(g, false, vb, true),
                        (false, true) => matmul(g, false, vb, false),
                        (true, false) => matmul(vb, false, g, true),
                        (true, true) => matmul(vb, true, g, true),
                    };
                    accumulate(&mut grads[a.0], d);
                }
                if nb {
                    let d = match (ta, tb) {
                        (false, false) => matmul(va, true, g, false),
                        (false, true) => matmul(g, true, va, false),
                        (true, false) => matmul(va, false, g, false),
                        (true, true) => matmul(g, true, va, true),
                    };
                    accumulate(&mut grads[b.0], d);
                }
            })),
        )
    }

    /// `m + b` with `b` broadcast across rows.
    pub fn add_row(&mut self, m: Var, b: Var) -> Var {
        let vm = &self.values[m.0];
        let vb = &self.values[b.0];
        let (r, c) = (vm.rows(), vm.cols());
        assert_eq!(vb.len(), c, "add_row bias length");
        let mut data = vm.data().to_vec();
        for i in 0..r {
            for (d, &bv) in data[i * c..(i + 1) * c].iter_mut().zip(vb.data()) {
                *d += bv;
            }
        }
        let out = Tensor::from_vec(vm.shape().to_vec(), data);
        let (nm, nb) = (self.needs_grad[m.0], self.needs_grad[b.0]);
        self.push(
            out,
            nm || nb,
            Some(Box::new(move |_vals, g, grads| {
                if nm {
                    accumulate(&mut grads[m.0], g.clone());
                }
                if nb {
                    let (r, c) = (g.rows(), g.cols());
                    let mut d = vec![S::zero(); c];
                    for i in 0..r {
                        for (dv, &gv) in d.iter_mut().zip(g.row(i)) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::from_vec(vec![c], d));
                }
            })),
        )
    }

    // ----- reductions and shape ops -----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.values[a.0].sum());
        let na = self.needs_grad[a.0];
        self.push(
            out,
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let gv = g.item();
                    let shape = vals[a.0].shape().to_vec();
                    accumulate(&mut grads[a.0], Tensor::full(&shape, gv));
                }
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len();
        let sum = self.sum_all(a);
        self.scale(sum, 1.0 / n as f64)
    }

    /// Column means of a 2-d tensor: `[r, c] -> [c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let (r, c) = (va.rows(), va.cols());
        let mut out = vec![S::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(va.row(i)) {
                *o += v;
            }
        }
        let inv = s::<S>(1.0 / r as f64);
        for o in &mut out {
            *o *= inv;
        }
        let na = self.needs_grad[a.0];
        self.push(
            Tensor::from_vec(vec![c], out),
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    let mut d = vec![S::zero(); r * c];
                    for i in 0..r {
                        for (dv, &gv) in d[i * c..(i + 1) * c].iter_mut().zip(g.data()) {
                            *dv = gv * inv;
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    /// Column-wise max over rows: `[r, c] -> [c]` (global max pooling).
    pub fn max_rows(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let (r, c) = (va.rows(), va.cols());
        assert!(r >= 1);
        let mut out = va.row(0).to_vec();
        let mut arg = vec![0usize; c];
        for i in 1..r {
            for (j, &v) in va.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let na = self.needs_grad[a.0];
        self.push(
            Tensor::from_vec(vec![c], out),
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    let mut d = vec![S::zero(); r * c];
                    for (j, &i) in arg.iter().enumerate() {
                        d[i * c + j] = g.data()[j];
                    }
                    accumulate(&mut grads[a.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    /// Broadcast a vector `[c]` into `[r, c]`, scaling every row.
    pub fn repeat_row(&mut self, v: Var, r: usize, scale: f64) -> Var {
        let vv = &self.values[v.0];
        let c = vv.len();
        let cs = s::<S>(scale);
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r {
            data.extend(vv.data().iter().map(|&x| x * cs));
        }
        let nv = self.needs_grad[v.0];
        self.push(
            Tensor::from_vec(vec![r, c], data),
            nv,
            Some(Box::new(move |_vals, g, grads| {
                if nv {
                    let mut d = vec![S::zero(); c];
                    for i in 0..r {
                        for (dv, &gv) in d.iter_mut().zip(g.row(i)) {
                            *dv += gv * cs;
                        }
                    }
                    accumulate(&mut grads[v.0], Tensor::from_vec(vec![c], d));
                }
            })),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = &self.values[a.0];
        let (r, c) = (va.rows(), va.cols());
        assert!(start + len <= r, "slice_rows out of range");
        let data = va.data()[start * c..(start + len) * c].to_vec();
        let na = self.needs_grad[a.0];
        self.push(
            Tensor::from_vec(vec![len, c], data),
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    let mut d = vec![S::zero(); r * c];
                    d[start * c..(start + len) * c].copy_from_slice(g.data());
                    accumulate(&mut grads[a.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.values[parts[0].0].cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let vp = &self.values[p.0];
            assert_eq!(vp.cols(), c, "concat_rows column mismatch");
            row_counts.push(vp.rows());
            data.extend_from_slice(vp.data());
        }
        let total: usize = row_counts.iter().sum();
        let needs: Vec<bool> = parts.iter().map(|p| self.needs_grad[p.0]).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let any = needs.iter().any(|&n| n);
        self.push(
            Tensor::from_vec(vec![total, c], data),
            any,
            Some(Box::new(move |_vals, g, grads| {
                let mut offset = 0usize;
                for ((&id, &n), &rows) in ids.iter().zip(&needs).zip(&row_counts) {
                    if n {
                        let d = g.data()[offset * c..(offset + rows) * c].to_vec();
                        accumulate(&mut grads[id], Tensor::from_vec(vec![rows, c], d));
                    }
                    offset += rows;
                }
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = &self.values[a.0];
        let (r, c) = (va.rows(), va.cols());
        assert!(start + len <= c, "slice_cols out of range");
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let na = self.needs_grad[a.0];
        self.push(
            Tensor::from_vec(vec![r, len], data),
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    let mut d = vec![S::zero(); r * c];
                    for i in 0..r {
                        d[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads[a.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.values[parts[0].0].rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.values[p.0].cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![S::zero(); r * total];
        let mut offset = 0usize;
        for (&p, &w) in parts.iter().zip(&widths) {
            let vp = &self.values[p.0];
            assert_eq!(vp.rows(), r, "concat_cols row mismatch");
            for i in 0..r {
                data[i * total + offset..i * total + offset + w].copy_from_slice(vp.row(i));
            }
            offset += w;
        }
        let needs: Vec<bool> = parts.iter().map(|p| self.needs_grad[p.0]).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let any = needs.iter().any(|&n| n);
        self.push(
            Tensor::from_vec(vec![r, total], data),
            any,
            Some(Box::new(move |_vals, g, grads| {
                let mut offset = 0usize;
                for ((&id, &n), &w) in ids.iter().zip(&needs).zip(&widths) {
                    if n {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        accumulate(&mut grads[id], Tensor::from_vec(vec![r, w], d));
                    }
                    offset += w;
                }
            })),
        )
    }

    /// `out[i] = m[i, ids[i]]` — per-row column pick, used for NLL losses.
    pub fn gather_rows(&mut self, m: Var, ids: &[usize]) -> Var {
        let vm = &self.values[m.0];
        let (r, c) = (vm.rows(), vm.cols());
        assert_eq!(ids.len(), r, "gather_rows ids length");
        let out: Vec<S> = ids.iter().enumerate().map(|(i, &j)| vm.row(i)[j]).collect();
        let na = self.needs_grad[m.0];
        let ids = ids.to_vec();
        self.push(
            Tensor::from_vec(vec![r], out),
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    let mut d = vec![S::zero(); r * c];
                    for (i, &j) in ids.iter().enumerate() {
                        d[i * c + j] = g.data()[i];
                    }
                    accumulate(&mut grads[m.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    // ----- row-wise nonlinear maps -----

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let (r, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax_slice(va.row(i)));
        }
        let na = self.needs_grad[a.0];
        let id = self.values.len();
        self.push(
            Tensor::from_vec(va.shape().to_vec(), data),
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let y = &vals[id];
                    let mut d = vec![S::zero(); r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.iter().zip(gr).fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                        for ((dv, &yv), &gv) in d[i * c..(i + 1) * c].iter_mut().zip(yr).zip(gr) {
                            *dv = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let (r, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(log_softmax_slice(va.row(i)));
        }
        let na = self.needs_grad[a.0];
        let id = self.values.len();
        self.push(
            Tensor::from_vec(va.shape().to_vec(), data),
            na,
            Some(Box::new(move |vals, g, grads| {
                if na {
                    let y = &vals[id];
                    let mut d = vec![S::zero(); r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let gsum = gr.iter().fold(S::zero(), |acc, &v| acc + v);
                        for ((dv, &yv), &gv) in d[i * c..(i + 1) * c].iter_mut().zip(yr).zip(gr) {
                            *dv = gv - yv.exp() * gsum;
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    /// Straight-through Gumbel-Softmax over rows of a logit matrix.
    ///
    /// Forward value is the exact one-hot of `argmax(logits + gumbel)`;
    /// the backward pass uses the relaxed `softmax((logits + gumbel)/tau)`
    /// Jacobian. Noise is drawn from `rng` here so the op itself is
    /// deterministic given the stream.
    pub fn gumbel_softmax_st(&mut self, logits: Var, tau: f64, rng: &mut ChaCha8Rng) -> Var {
        assert!(tau > 0.0, "temperature must be positive");
        let vl = &self.values[logits.0];
        let (r, c) = (vl.rows(), vl.cols());
        let mut hard = vec![S::zero(); r * c];
        let mut soft = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = vl.row(i);
            let mut perturbed: Vec<S> = Vec::with_capacity(c);
            for &lv in row {
                let u: f64 = rng.gen_range(1e-10..1.0 - 1e-10);
                let gumbel = -((-u.ln()).ln());
                perturbed.push(lv + s::<S>(gumbel));
            }
            let (mut best, mut best_v) = (0usize, perturbed[0]);
            for (j, &v) in perturbed.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            hard[i * c + best] = S::one();
            let inv_tau = s::<S>(1.0 / tau);
            let scaled: Vec<S> = perturbed.iter().map(|&v| v * inv_tau).collect();
            soft.extend(softmax_slice(&scaled));
        }
        let soft = Tensor::from_vec(vec![r, c], soft);
        let na = self.needs_grad[logits.0];
        let inv_tau = s::<S>(1.0 / tau);
        self.push(
            Tensor::from_vec(vec![r, c], hard),
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    let mut d = vec![S::zero(); r * c];
                    for i in 0..r {
                        let yr = soft.row(i);
                        let gr = g.row(i);
                        let dot = yr.iter().zip(gr).fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                        for ((dv, &yv), &gv) in d[i * c..(i + 1) * c].iter_mut().zip(yr).zip(gr) {
                            *dv = yv * (gv - dot) * inv_tau;
                        }
                    }
                    accumulate(&mut grads[logits.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    /// Row-wise layer normalization with learned scale and shift.
    #[allow(clippy::needless_range_loop)]
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = &self.values[x.0];
        let (r, c) = (vx.rows(), vx.cols());
        let vg = &self.values[gamma.0];
        let vb = &self.values[beta.0];
        assert_eq!(vg.len(), c);
        assert_eq!(vb.len(), c);
        let epss = s::<S>(eps);
        let invc = s::<S>(1.0 / c as f64);
        let mut norm = vec![S::zero(); r * c];
        let mut inv_std = vec![S::zero(); r];
        for i in 0..r {
            let row = vx.row(i);
            let mean = row.iter().fold(S::zero(), |a, &v| a + v) * invc;
            let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) * invc;
            let istd = S::one() / (var + epss).sqrt();
            inv_std[i] = istd;
            for (n, &v) in norm[i * c..(i + 1) * c].iter_mut().zip(row) {
                *n = (v - mean) * istd;
            }
        }
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = norm[i * c + j] * vg.data()[j] + vb.data()[j];
            }
        }
        let norm = Tensor::from_vec(vec![r, c], norm);
        let (nx, ng, nb) = (self.needs_grad[x.0], self.needs_grad[gamma.0], self.needs_grad[beta.0]);
        self.push(
            Tensor::from_vec(vec![r, c], out),
            nx || ng || nb,
            Some(Box::new(move |vals, g, grads| {
                if nb {
                    let mut d = vec![S::zero(); c];
                    for i in 0..r {
                        for (dv, &gv) in d.iter_mut().zip(g.row(i)) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut grads[beta.0], Tensor::from_vec(vec![c], d));
                }
                if ng {
                    let mut d = vec![S::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            d[j] += g.row(i)[j] * norm.row(i)[j];
                        }
                    }
                    accumulate(&mut grads[gamma.0], Tensor::from_vec(vec![c], d));
                }
                if nx {
                    let vg = &vals[gamma.0];
                    let mut d = vec![S::zero(); r * c];
                    for i in 0..r {
                        // dy = g * gamma; dx = istd * (dy - mean(dy) - y*mean(dy*y))
                        let gr = g.row(i);
                        let yr = norm.row(i);
                        let mut dy = vec![S::zero(); c];
                        for j in 0..c {
                            dy[j] = gr[j] * vg.data()[j];
                        }
                        let m1 = dy.iter().fold(S::zero(), |a, &v| a + v) * invc;
                        let m2 = dy.iter().zip(yr).fold(S::zero(), |a, (&dv, &yv)| a + dv * yv) * invc;
                        for j in 0..c {
                            d[i * c + j] = inv_std[i] * (dy[j] - m1 - yr[j] * m2);
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::from_vec(vec![r, c], d));
                }
            })),
        )
    }

    /// Mean over sliding windows of rows: `[len, c] -> [windows, c]` with
    /// `windows = (len - pool) / stride + 1`.
    pub fn avg_pool_rows(&mut self, a: Var, pool: usize, stride: usize) -> Var {
        let va = &self.values[a.0];
        let (len, c) = (va.rows(), va.cols());
        assert!(pool >= 1 && stride >= 1 && len >= pool, "avg_pool_rows window");
        let windows = (len - pool) / stride + 1;
        let inv = s::<S>(1.0 / pool as f64);
        let mut out = vec![S::zero(); windows * c];
        for w in 0..windows {
            let orow = &mut out[w * c..(w + 1) * c];
            for i in 0..pool {
                for (o, &v) in orow.iter_mut().zip(va.row(w * stride + i)) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let na = self.needs_grad[a.0];
        self.push(
            Tensor::from_vec(vec![windows, c], out),
            na,
            Some(Box::new(move |_vals, g, grads| {
                if na {
                    let mut d = vec![S::zero(); len * c];
                    for w in 0..windows {
                        let grow = g.row(w);
                        for i in 0..pool {
                            let base = (w * stride + i) * c;
                            for (dv, &gv) in d[base..base + c].iter_mut().zip(grow) {
                                *dv += gv * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::from_vec(vec![len, c], d));
                }
            })),
        )
    }

    // ----- convolution -----

    /// Same-length 1-d convolution over rows: `x [L, ci] -> [L, co]`,
    /// weights `[k, ci, co]` flattened, stride 1, zero padding `(k-1)/2`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, k: usize) -> Var {
        let vx = &self.values[x.0];
        let vw = &self.values[w.0];
        let vb = &self.values[b.0];
        let (l, ci) = (vx.rows(), vx.cols());
        let co = vb.len();
        assert_eq!(vw.len(), k * ci * co, "conv1d weight size");
        let out = conv_fwd(vx, vw, Some(vb), k, ci, co);
        let (nx, nw, nb) = (self.needs_grad[x.0], self.needs_grad[w.0], self.needs_grad[b.0]);
        self.push(
            out,
            nx || nw || nb,
            Some(Box::new(move |vals, g, grads| {
                if nx {
                    accumulate(&mut grads[x.0], conv_dx(g, &vals[w.0], k, ci, co));
                }
                if nw {
                    accumulate(&mut grads[w.0], conv_dw(&vals[x.0], g, k, ci, co));
                }
                if nb {
                    let mut d = vec![S::zero(); co];
                    for i in 0..l {
                        for (dv, &gv) in d.iter_mut().zip(g.row(i)) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::from_vec(vec![co], d));
                }
            })),
        )
    }

    /// The gradient of `conv1d` with respect to its input, as a
    /// differentiable forward op. `dy [L, co] -> [L, ci]`. Used to build the
    /// critic's input gradient for the gradient penalty: the result stays on
    /// the tape, so the penalty can be differentiated with respect to both
    /// `dy` and the shared conv weights.
    pub fn conv1d_input_grad(&mut self, dy: Var, w: Var, k: usize, ci: usize, co: usize) -> Var {
        let out = conv_dx(&self.values[dy.0], &self.values[w.0], k, ci, co);
        let (ndy, nw) = (self.needs_grad[dy.0], self.needs_grad[w.0]);
        self.push(
            out,
            ndy || nw,
            Some(Box::new(move |vals, g, grads| {
                // forward was dx[s,ci] = sum_{kk,co} dy[s-kk+p, co] * w[kk,ci,co]
                if ndy {
                    accumulate(&mut grads[dy.0], conv_fwd(g, &vals[w.0], None, k, ci, co));
                }
                if nw {
                    accumulate(&mut grads[w.0], conv_dw(g, &vals[dy.0], k, ci, co));
                }
            })),
        )
    }
}

/// y[t,co] = b[co] + sum_{kk,ci} x[t+kk-p, ci] * w[kk,ci,co]
fn conv_fwd<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    k: usize,
    ci: usize,
    co: usize,
) -> Tensor<S> {
    let l = x.rows();
    assert_eq!(x.cols(), ci, "conv input channels");
    let p = (k - 1) / 2;
    let mut out = vec![S::zero(); l * co];
    if let Some(b) = b {
        for t in 0..l {
            out[t * co..(t + 1) * co].copy_from_slice(b.data());
        }
    }
    let wd = w.data();
    let xd = x.data();
    for t in 0..l {
        let orow = &mut out[t * co..(t + 1) * co];
        for kk in 0..k {
            let src = t + kk;
            if src < p || src - p >= l {
                continue;
            }
            let src = src - p;
            let xrow = &xd[src * ci..(src + 1) * ci];
            for (c_in, &xv) in xrow.iter().enumerate() {
                if xv == S::zero() {
                    continue;
                }
                let wrow = &wd[(kk * ci + c_in) * co..(kk * ci + c_in + 1) * co];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
    }
    Tensor::from_vec(vec![l, co], out)
}

/// dx[s,ci] = sum_{kk,co} dy[s-kk+p, co] * w[kk,ci,co]
fn conv_dx<S: Scalar>(dy: &Tensor<S>, w: &Tensor<S>, k: usize, ci: usize, co: usize) -> Tensor<S> {
    let l = dy.rows();
    assert_eq!(dy.cols(), co, "conv_dx output channels");
    let p = (k - 1) / 2;
    let mut out = vec![S::zero(); l * ci];
    let wd = w.data();
    let dyd = dy.data();
    for srow in 0..l {
        let orow = &mut out[srow * ci..(srow + 1) * ci];
        for kk in 0..k {
            let t = srow + p;
            if t < kk || t - kk >= l {
                continue;
            }
            let t = t - kk;
            let dyrow = &dyd[t * co..(t + 1) * co];
            for (c_in, o) in orow.iter_mut().enumerate() {
                let wrow = &wd[(kk * ci + c_in) * co..(kk * ci + c_in + 1) * co];
                let mut acc = S::zero();
                for (&dv, &wv) in dyrow.iter().zip(wrow) {
                    acc += dv * wv;
                }
                *o += acc;
            }
        }
    }
    Tensor::from_vec(vec![l, ci], out)
}

/// dw[kk,ci,co] = sum_t dy[t,co] * x[t+kk-p, ci]
fn conv_dw<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>, k: usize, ci: usize, co: usize) -> Tensor<S> {
    let l = x.rows();
    assert_eq!(x.cols(), ci);
    assert_eq!(dy.cols(), co);
    assert_eq!(dy.rows(), l);
    let p = (k - 1) / 2;
    let mut out = vec![S::zero(); k * ci * co];
    let xd = x.data();
    let dyd = dy.data();
    for t in 0..l {
        let dyrow = &dyd[t * co..(t + 1) * co];
        for kk in 0..k {
            let src = t + kk;
            if src < p || src - p >= l {
                continue;
            }
            let src = src - p;
            let xrow = &xd[src * ci..(src + 1) * ci];
            for (c_in, &xv) in xrow.iter().enumerate() {
                if xv == S::zero() {
                    continue;
                }
                let orow = &mut out[(kk * ci + c_in) * co..(kk * ci + c_in + 1) * co];
                for (o, &dv) in orow.iter_mut().zip(dyrow) {
                    *o += xv * dv;
                }
            }
        }
    }
    Tensor::from_vec(vec![k, ci, co], out)
}

pub(crate) fn softmax_slice<S: Scalar>(row: &[S]) -> Vec<S> {
    let max = row.iter().fold(S::neg_infinity(), |a, &b| if b > a { b } else { a });
    let mut out: Vec<S> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum = out.iter().fold(S::zero(), |a, &b| a + b);
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub(crate) fn log_softmax_slice<S: Scalar>(row: &[S]) -> Vec<S> {
    let max = row.iter().fold(S::neg_infinity(), |a, &b| if b > a { b } else { a });
    let logsum = row.iter().fold(S::zero(), |a, &v| a + (v - max).exp()).ln() + max;
    row.iter().map(|&v| v - logsum).collect()
}

/// Per-row argmax of a matrix (or of a single vector).
pub fn argmax_rows<S: Scalar>(t: &Tensor<S>) -> Vec<usize> {
    let r = t.rows();
    (0..r)
        .map(|i| {
            let row = t.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
