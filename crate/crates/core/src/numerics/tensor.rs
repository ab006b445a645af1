//! Dense row-major tensors. Storage is `Arc`-backed so leasing a parameter
//! into a tape is a refcount bump, and mutation copies only when shared.

use std::fmt::{Debug, Display};
use std::sync::Arc;

use num_traits::{Float, NumAssignOps};

/// Scalar element type for all numeric work. Training runs at `f32`,
/// gradient checks at `f64`.
pub trait Scalar: Float + NumAssignOps + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
    const WIDTH: usize;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32"))
    }
    const WIDTH: usize = 4;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64"))
    }
    const WIDTH: usize = 8;
}

/// Shorthand for converting literals into the active scalar type.
pub fn s<S: Scalar>(v: f64) -> S {
    S::from_f64(v)
}

#[derive(Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {shape:?} does not match data length {}", data.len());
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![S::zero(); n]) }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![v; n]) }
    }

    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![v]) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        Arc::<Vec<S>>::make_mut(&mut self.data)
    }

    /// Number of rows of a 2-d tensor; 1-d tensors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns of a 2-d tensor, or the length of a 1-d tensor.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add_in_place(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "add_in_place shape mismatch");
        let dst = self.data_mut();
        for (d, &o) in dst.iter_mut().zip(other.data.iter()) {
            *d += o;
        }
    }

    pub fn scale_in_place(&mut self, c: S) {
        for v in self.data_mut() {
            *v *= c;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b)
    }

    pub fn sq_norm(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b * b)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn convert<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            self.shape.clone(),
            self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        )
    }
}

impl<S: Scalar> Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", &self.data[..])
        } else {
            write!(f, " [{} values]", self.data.len())
        }
    }
}

/// C = op(A) @ op(B) into a fresh buffer. `ta`/`tb` transpose the operands.
/// Row-major, i-k-j loop order so the inner loop runs over contiguous rows.
pub fn matmul<S: Scalar>(a: &Tensor<S>, ta: bool, b: &Tensor<S>, tb: bool) -> Tensor<S> {
    let (am, ak) = (a.rows(), a.cols());
    let (bm, bk) = (b.rows(), b.cols());
    let (m, k) = if ta { (ak, am) } else { (am, ak) };
    let (kb, n) = if tb { (bk, bm) } else { (bm, bk) };
    assert_eq!(k, kb, "matmul inner dims {k} vs {kb} (a {:?} ta={ta}, b {:?} tb={tb})", a.shape(), b.shape());

    let ad = a.data();
    let bd = b.data();
    let mut out = vec![S::zero(); m * n];
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (kk, &av) in arow.iter().enumerate() {
                    if av == S::zero() {
                        continue;
                    }
                    let brow = &bd[kk * n..(kk + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, false) => {
            // out[i][j] += a[kk][i] * b[kk][j]
            for kk in 0..k {
                let arow = &ad[kk * m..(kk + 1) * m];
                let brow = &bd[kk * n..(kk + 1) * n];
                for (i, &av) in arow.iter().enumerate() {
                    if av == S::zero() {
                        continue;
                    }
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            // out[i][j] = dot(a[i], b[j])
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (j, o) in orow.iter_mut().enumerate() {
                    let brow = &bd[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for (&av, &bv) in arow.iter().zip(brow.iter()) {
                        acc += av * bv;
                    }
                    *o = acc;
                }
            }
        }
        (true, true) => {
            // out[i][j] = sum_k a[kk][i] * b[j][kk]
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for (j, o) in orow.iter_mut().enumerate() {
                    let mut acc = S::zero();
                    for kk in 0..k {
                        acc += ad[kk * m + i] * bd[j * k + kk];
                    }
                    *o = acc;
                }
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_all_transpose_variants_agree() {
        let a = Tensor::from_vec(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, false, &b, false);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);

        // a^T has shape [3,2]; (a^T)^T @ b must equal a @ b
        let at = Tensor::from_vec(vec![3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let c2 = matmul(&at, true, &b, false);
        assert_eq!(c2.data(), c.data());

        let bt = Tensor::from_vec(vec![2, 3], vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        let c3 = matmul(&a, false, &bt, true);
        assert_eq!(c3.data(), c.data());

        let c4 = matmul(&at, true, &bt, true);
        assert_eq!(c4.data(), c.data());
    }

    #[test]
    fn cow_storage_shares_until_mutated() {
        let a = Tensor::from_vec(vec![2], vec![1.0f32, 2.0]);
        let mut b = a.clone();
        assert!(std::sync::Arc::ptr_eq(&a.data, &b.data));
        b.data_mut()[0] = 5.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 5.0);
    }
}
