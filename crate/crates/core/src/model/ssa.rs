use alloc::vec;
use alloc::vec::Vec;

use super::forward::linear;
use super::EncoderBlock;
use crate::error::{Error, Result};
use crate::neuron::{step_slice, LifParams, SpikeFn};
use crate::tensor::{self, Tensor};

/// Output current of the attention branch for one `(t, sample)` block of
/// `n` tokens:
/// `out = scale * Q (K^T (V Wo)) + bo + gain * x`.
///
/// This equals `proj(scale * Q K^T V)` with the projection folded in; the
/// association order keeps every product driven by binary operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_out_current(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    wo: &Tensor,
    bo: &Tensor,
    scale: f64,
    residual: Option<(&[f64], f64)>,
    out: &mut [f64],
    n: usize,
    d: usize,
) {
    let mut u = vec![0.0; n * d];
    tensor::matmul_into(&mut u, v, wo.data(), n, d, d);
    let mut p = vec![0.0; d * d];
    tensor::matmul_tn_into(&mut p, k, &u, n, d, d);
    let mut a = vec![0.0; n * d];
    tensor::matmul_into(&mut a, q, &p, n, d, d);
    for (row, a_row) in out.chunks_mut(d).zip(a.chunks(d)) {
        for ((o, &av), &b) in row.iter_mut().zip(a_row).zip(bo.data()) {
            *o = scale * av + b;
        }
    }
    if let Some((x, gain)) = residual {
        tensor::axpy(out, gain, x);
    }
}

fn check_tnd(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::InvalidShape {
            op,
            detail: alloc::format!("expected [T, N_tok, D], got {s:?}"),
        }),
    }
}

/// `Q[t] K[t]^T`, shape `[N, N]`.
pub fn attention_map(q: &Tensor, k: &Tensor, t: usize) -> Result<Tensor> {
    let (steps, n, d) = check_tnd("attention_map", q)?;
    if k.shape() != q.shape() {
        return Err(Error::shape("attention_map", q.shape(), k.shape()));
    }
    if t >= steps {
        return Err(Error::invalid("attention_map", alloc::format!("t={t} out of range")));
    }
    let r = t * n * d..(t + 1) * n * d;
    let mut out = vec![0.0; n * n];
    tensor::matmul_nt_into(&mut out, &q.data()[r.clone()], &k.data()[r], n, d, n);
    Tensor::new(&[n, n], out)
}

/// `scale * (Q K^T) V` per timestep, `[T, N, D]`, without projection.
pub fn attention_current(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<Tensor> {
    let (steps, n, d) = check_tnd("attention_current", q)?;
    if k.shape() != q.shape() {
        return Err(Error::shape("attention_current", q.shape(), k.shape()));
    }
    if v.shape() != q.shape() {
        return Err(Error::shape("attention_current", q.shape(), v.shape()));
    }
    let mut out = Vec::with_capacity(steps * n * d);
    for t in 0..steps {
        let map = attention_map(q, k, t)?;
        let mut a = vec![0.0; n * d];
        tensor::matmul_into(&mut a, map.data(), &v.data()[t * n * d..(t + 1) * n * d], n, n, d);
        out.extend(a.into_iter().map(|x| x * scale));
    }
    Tensor::new(&[steps, n, d], out)
}

/// Rasters produced by [`ssa_forward`], each `[T, N, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsaOutput {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub output: Tensor,
}

fn lif_rows(currents: &[f64], steps: usize, lif: &LifParams) -> Vec<f64> {
    let n = currents.len() / steps;
    let mut v = vec![lif.v_reset; n];
    let mut s = vec![0.0; currents.len()];
    for t in 0..steps {
        step_slice(
            &mut v,
            &currents[t * n..(t + 1) * n],
            &mut s[t * n..(t + 1) * n],
            None,
            lif,
            SpikeFn::Heaviside,
        );
    }
    s
}

/// Spiking self-attention on its own, without the residual path.
pub fn ssa_forward(tokens: &Tensor, block: &EncoderBlock, lif: &LifParams, scale: f64) -> Result<SsaOutput> {
    let (steps, n, d) = check_tnd("ssa_forward", tokens)?;
    if block.wq.shape() != [d, d] {
        return Err(Error::shape("ssa_forward", &[d, d], block.wq.shape()));
    }
    if !tokens.is_binary() {
        return Err(Error::NonBinary {
            layer: "ssa_forward input".into(),
        });
    }
    lif.validate()?;
    let rows = steps * n;
    let x = tokens.data();
    let q = lif_rows(&linear(x, rows, &block.wq, &block.bq), steps, lif);
    let k = lif_rows(&linear(x, rows, &block.wk, &block.bk), steps, lif);
    let v = lif_rows(&linear(x, rows, &block.wv, &block.bv), steps, lif);
    let mut oc = vec![0.0; rows * d];
    for t in 0..steps {
        let r = t * n * d..(t + 1) * n * d;
        attention_out_current(
            &q[r.clone()],
            &k[r.clone()],
            &v[r.clone()],
            &block.wo,
            &block.bo,
            scale,
            None,
            &mut oc[r],
            n,
            d,
        );
    }
    let output = lif_rows(&oc, steps, lif);
    let shape = [steps, n, d];
    Ok(SsaOutput {
        q: Tensor::new(&shape, q)?,
        k: Tensor::new(&shape, k)?,
        v: Tensor::new(&shape, v)?,
        output: Tensor::new(&shape, output)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let q = Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let k = q.clone();
        let v = Tensor::new(&[1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(attention_map(&q, &k, 0).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            attention_current(&q, &k, &v, 1.0).unwrap().data(),
            &[1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn folded_projection_matches_direct_form() {
        let (n, d) = (3, 2);
        let q = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let k = [0.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let v = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let wo = Tensor::new(&[2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let bo = Tensor::scalar_vec(&[0.1, -0.2]);
        let mut out = vec![0.0; n * d];
        attention_out_current(&q, &k, &v, &wo, &bo, 0.125, None, &mut out, n, d);

        let t = |x: &[f64]| Tensor::new(&[1, n, d], x.to_vec()).unwrap();
        let direct = attention_current(&t(&q), &t(&k), &t(&v), 0.125).unwrap();
        let expect = linear(direct.data(), n, &wo, &bo);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
