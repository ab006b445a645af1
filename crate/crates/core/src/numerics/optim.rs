//! Adam optimizer with bias correction, plus global-norm gradient clipping.

use super::layers::ParamSet;
use super::tensor::{s, Scalar, Tensor};

pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, params: &ParamSet<S>) -> Self {
        let m = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        let v = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam { lr, beta1, beta2, eps: 1e-8, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` must be indexed like the param set.
    #[allow(clippy::needless_range_loop)]
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &[Tensor<S>]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.step += 1;
        let b1 = s::<S>(self.beta1);
        let b2 = s::<S>(self.beta2);
        let one = S::one();
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr_t = s::<S>(self.lr * bc2.sqrt() / bc1);
        let eps = s::<S>(self.eps);
        for i in 0..grads.len() {
            let g = &grads[i];
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            for ((mv, vv), &gv) in md.iter_mut().zip(vd.iter_mut()).zip(g.data()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
            }
            let p = params.get_mut(super::layers::ParamId(i));
            let pd = p.data_mut();
            for ((pv, &mv), &vv) in pd.iter_mut().zip(self.m[i].data()).zip(self.v[i].data()) {
                *pv -= lr_t * mv / (vv.sqrt() + eps);
            }
        }
    }

    /// Moment tensors for checkpointing, named after their parameters.
    pub fn state_tensors<'a>(&'a self, params: &'a ParamSet<S>) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, (_, name, _)) in params.iter().enumerate() {
            out.push((format!("{name}.m"), self.m[i].clone()));
            out.push((format!("{name}.v"), self.v[i].clone()));
        }
        out.push((
            "adam.step".to_string(),
            Tensor::scalar(s::<S>(self.step as f64)),
        ));
        out
    }

    pub fn load_state(
        &mut self,
        params: &ParamSet<S>,
        mut lookup: impl FnMut(&str) -> Option<Tensor<S>>,
    ) -> crate::Result<()> {
        for (i, (_, name, _)) in params.iter().enumerate() {
            let m = lookup(&format!("{name}.m"))
                .ok_or_else(|| crate::Error::validation(format!("missing optimizer moment {name}.m")))?;
            let v = lookup(&format!("{name}.v"))
                .ok_or_else(|| crate::Error::validation(format!("missing optimizer moment {name}.v")))?;
            self.m[i] = m;
            self.v[i] = v;
        }
        let step = lookup("adam.step")
            .ok_or_else(|| crate::Error::validation("missing adam.step".to_string()))?;
        self.step = step.item().as_f64() as u64;
        Ok(())
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. A `max_norm` of 0 disables clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(|g| g.sq_norm().as_f64()).sum();
    let norm = total.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let factor = s::<S>(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_in_place(factor);
        }
    }
    norm
}
