//! Dense row-major `f64` tensors and the kernels the network is built from.
//!
//! Every kernel is a pure function of its inputs. Backward kernels are the
//! exact adjoints of the corresponding forward maps; there is no graph
//! recording, callers chain them by hand.

pub(crate) mod conv;
mod norm;
mod pool;

use alloc::vec;
use alloc::vec::Vec;

pub use conv::{conv2d, conv2d_backward, conv2d_events, conv_out_len, ConvGrads, ConvSpec};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_eval, batch_norm_train, BatchNormCache, BatchNormState, NormMode,
};
pub use pool::{avg_pool2d, avg_pool2d_backward, PoolSpec};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                detail: alloc::format!("zero-sized dimension in {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                detail: alloc::format!(
                    "shape {shape:?} holds {n} values but {} were given",
                    data.len()
                ),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar_vec(data: &[f64]) -> Self {
        Self {
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * d + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("axpy", &self.shape, &other.shape));
        }
        axpy(&mut self.data, alpha, &other.data);
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn split_matmul_shape(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    if t.rank() < 2 {
        return Err(Error::InvalidShape {
            op,
            detail: alloc::format!("matmul operand needs rank >= 2, got {:?}", t.shape()),
        });
    }
    let r = t.rank();
    let batch = t.shape()[..r - 2].iter().product();
    Ok((batch, t.shape()[r - 2], t.shape()[r - 1]))
}

/// Batched dense product `[..., M, K] x [..., K, N] -> [..., M, N]`.
///
/// Leading batch dimensions must be equal; a rank-2 `b` is shared by every
/// batch entry of `a`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch_a, m, k) = split_matmul_shape("matmul", a)?;
    let (batch_b, kb, n) = split_matmul_shape("matmul", b)?;
    if k != kb {
        return Err(Error::InvalidShape {
            op: "matmul",
            detail: alloc::format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let shared_b = b.rank() == 2;
    if !shared_b && a.shape()[..a.rank() - 2] != b.shape()[..b.rank() - 2] {
        return Err(Error::shape(
            "matmul",
            &a.shape()[..a.rank() - 2],
            &b.shape()[..b.rank() - 2],
        ));
    }
    debug_assert!(shared_b || batch_a == batch_b);
    let mut shape = a.shape()[..a.rank() - 2].to_vec();
    shape.extend_from_slice(&[m, n]);
    let mut out = vec![0.0; batch_a * m * n];
    for bi in 0..batch_a {
        let a_blk = &a.data()[bi * m * k..(bi + 1) * m * k];
        let b_blk = if shared_b {
            b.data()
        } else {
            &b.data()[bi * k * n..(bi + 1) * k * n]
        };
        matmul_into(&mut out[bi * m * n..(bi + 1) * m * n], a_blk, b_blk, m, k, n);
    }
    Ok(Tensor { shape, data: out })
}

/// `c += a * b` for row-major blocks.
pub(crate) fn matmul_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(c_row, av, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

/// `c += a^T * b` where `a` is `[k, m]` and `b` is `[k, n]`.
pub(crate) fn matmul_tn_into(c: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av != 0.0 {
                axpy(&mut c[i * n..(i + 1) * n], av, b_row);
            }
        }
    }
}

/// `c += a * b^T` where `a` is `[m, k]` and `b` is `[n, k]`.
pub(crate) fn matmul_nt_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Adjoint of [`matmul`]: returns `(grad_a, grad_b)`.
pub fn matmul_backward(grad_out: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let expected = matmul(a, b)?;
    if expected.shape() != grad_out.shape() {
        return Err(Error::shape(
            "matmul_backward",
            expected.shape(),
            grad_out.shape(),
        ));
    }
    let (batch, m, k) = split_matmul_shape("matmul_backward", a)?;
    let (_, _, n) = split_matmul_shape("matmul_backward", b)?;
    let shared_b = b.rank() == 2;
    let mut ga = a.zeros_like();
    let mut gb = b.zeros_like();
    for bi in 0..batch {
        let g = &grad_out.data()[bi * m * n..(bi + 1) * m * n];
        let a_blk = &a.data()[bi * m * k..(bi + 1) * m * k];
        let (b_off, gb_blk) = if shared_b {
            (0, &mut gb.data[..])
        } else {
            (bi * k * n, &mut gb.data[bi * k * n..(bi + 1) * k * n])
        };
        let b_blk = &b.data()[b_off..b_off + k * n];
        // dA = G B^T, dB = A^T G
        matmul_nt_into(&mut ga.data[bi * m * k..(bi + 1) * m * k], g, b_blk, m, n, k);
        matmul_tn_into(gb_blk, a_blk, g, m, k, n);
    }
    Ok((ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn identity_matmul() {
        let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn row_times_column() {
        let a = t(&[1, 2], &[1.0, 1.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn zero_operand_gives_zero() {
        let a = Tensor::zeros(&[3, 4]);
        let b = Tensor::from_fn(&[4, 2], |i| i as f64 - 3.5);
        assert!(matmul(&a, &b).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            matmul(&a, &b),
            Err(Error::InvalidShape { op: "matmul", .. })
        ));
    }

    #[test]
    fn batched_and_shared_rhs() {
        let a = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[3, 2], |i| (i % 3) as f64);
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        let a1 = Tensor::new(&[2, 3], a.data()[6..].to_vec()).unwrap();
        assert_eq!(&out.data()[4..], matmul(&a1, &b).unwrap().data());
    }
}
