//! The first spiking layer and the spatial convolution, fused per sample.
//!
//! The first layer sees a time-invariant current, so its state is recomputed
//! in the backward pass instead of stored. Spikes are scattered straight into
//! the spatial convolution through transposed weights, which keeps the
//! forward cost proportional to the number of events.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::neuron::{heaviside, sigmoid, step_slice, surrogate_grad, LifParams, SpikeFn};
use crate::tensor::{self, Tensor};

/// Geometry of the fused stage: `planes = k * channels` rows of `width` neurons.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FrontDims {
    pub k: usize,
    pub planes: usize,
    pub width: usize,
    pub steps: usize,
}

impl FrontDims {
    fn neurons(&self) -> usize {
        self.planes * self.width
    }
}

/// `wt[p * k + o] = w[o, p]` for spatial weights `[k, k, channels, 1]`.
pub(crate) fn transpose_weights(w: &Tensor, dims: &FrontDims) -> Vec<f64> {
    let mut wt = vec![0.0; dims.planes * dims.k];
    for o in 0..dims.k {
        for p in 0..dims.planes {
            wt[p * dims.k + o] = w.data()[o * dims.planes + p];
        }
    }
    wt
}

pub(crate) struct FrontForward {
    pub spikes: u64,
}

/// Buffers reused across samples.
pub(crate) struct FrontScratch {
    v: Vec<f64>,
    s: Vec<f64>,
    h: Vec<f64>,
    carry: Vec<f64>,
    gs: Vec<f64>,
    gzt: Vec<f64>,
}

impl FrontScratch {
    /// `with_history` reserves the `[T, neurons]` potential buffer the backward pass needs.
    pub fn new(dims: &FrontDims, with_history: bool) -> Self {
        let n = dims.neurons();
        Self {
            v: vec![0.0; n],
            s: vec![0.0; n],
            h: vec![0.0; if with_history { dims.steps * n } else { 0 }],
            carry: vec![0.0; if with_history { n } else { 0 }],
            gs: vec![0.0; dims.width],
            gzt: vec![0.0; dims.width * dims.k],
        }
    }
}

/// Runs the first LIF layer on `y1` (`[planes, width]`, constant over time)
/// and writes spatial-convolution currents `[T, k, width]` into `z_out`.
/// `columns`, if given, receives per-step spike counts per column `[T, width]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn front_forward(
    y1: &[f64],
    wt: &[f64],
    bias: &[f64],
    dims: &FrontDims,
    lif: &LifParams,
    spike: SpikeFn,
    checked: bool,
    mut columns: Option<&mut [u32]>,
    scratch: &mut FrontScratch,
    z_out: &mut [f64],
) -> Result<FrontForward> {
    let (k, width) = (dims.k, dims.width);
    let FrontScratch { v, s, gzt: zt, .. } = scratch;
    v.fill(lif.v_reset);
    let mut spikes = 0u64;
    for t in 0..dims.steps {
        step_slice(v, y1, s, None, lif, spike);
        zt.fill(0.0);
        for (p, row) in s.chunks_exact(width).enumerate() {
            let wrow = &wt[p * k..(p + 1) * k];
            for (w, &sv) in row.iter().enumerate() {
                if sv != 0.0 {
                    if checked && sv != 1.0 {
                        return Err(Error::NonBinary {
                            layer: "conv.temporal".into(),
                        });
                    }
                    spikes += 1;
                    tensor::axpy(&mut zt[w * k..(w + 1) * k], sv, wrow);
                    if let Some(cols) = columns.as_deref_mut() {
                        cols[t * width + w] += 1;
                    }
                }
            }
        }
        let out = &mut z_out[t * k * width..(t + 1) * k * width];
        for o in 0..k {
            let orow = &mut out[o * width..(o + 1) * width];
            for (w, z) in orow.iter_mut().enumerate() {
                *z = zt[w * k + o] + bias[o];
            }
        }
    }
    Ok(FrontForward { spikes })
}

/// One row of the fused reverse step: BPTT through the first LIF layer given
/// dL/dS in `gs`, accumulating dL/dy into `gy`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn reverse_row(
    h: &[f64],
    gs: &[f64],
    carry: &mut [f64],
    gy: &mut [f64],
    lif: &LifParams,
    alpha: f64,
    reset_path: f64,
    fire: impl Fn(f64) -> f64,
) {
    let n = h.len();
    let (gs, carry, gy) = (&gs[..n], &mut carry[..n], &mut gy[..n]);
    let inv_tau = 1.0 / lif.tau;
    let keep = 1.0 - inv_tau;
    let (vth, vr) = (lif.v_th, lif.v_reset);
    for i in 0..n {
        let u = h[i] - vth;
        let s = fire(u);
        let ds = surrogate_grad(u, alpha);
        let dv_dh = 1.0 - s + reset_path * (vr - h[i]) * ds;
        let gh = gs[i] * ds + carry[i] * keep * dv_dh;
        carry[i] = gh;
        gy[i] += gh * inv_tau;
    }
}

/// Backward of [`front_forward`] for one sample. `gz` is dL/dz `[T, k, width]`.
/// Accumulates into `g_wt` (transposed layout), `g_bias` and `g_y1`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn front_backward(
    y1: &[f64],
    w: &Tensor,
    gz: &[f64],
    dims: &FrontDims,
    lif: &LifParams,
    spike: SpikeFn,
    alpha: f64,
    detach_reset: bool,
    scratch: &mut FrontScratch,
    g_wt: &mut [f64],
    g_bias: &mut [f64],
    g_y1: &mut [f64],
) {
    let (k, width, planes) = (dims.k, dims.width, dims.planes);
    let n = dims.neurons();
    let FrontScratch {
        v,
        s,
        h,
        carry,
        gs,
        gzt,
    } = scratch;
    v.fill(lif.v_reset);
    for t in 0..dims.steps {
        step_slice(v, y1, s, Some(&mut h[t * n..(t + 1) * n]), lif, spike);
    }
    carry.fill(0.0);
    let reset_path = if detach_reset { 0.0 } else { 1.0 };
    let wd = w.data();
    for t in (0..dims.steps).rev() {
        let g_t = &gz[t * k * width..(t + 1) * k * width];
        for o in 0..k {
            let grow = &g_t[o * width..(o + 1) * width];
            g_bias[o] += grow.iter().sum::<f64>();
            for (wi, &gv) in grow.iter().enumerate() {
                gzt[wi * k + o] = gv;
            }
        }
        let h_t = &h[t * n..(t + 1) * n];
        for p in 0..planes {
            let r = p * width..(p + 1) * width;
            let hrow = &h_t[r.clone()];
            let gw = &mut g_wt[p * k..(p + 1) * k];
            for (wi, &hv) in hrow.iter().enumerate() {
                let sv = spike.fire(hv - lif.v_th);
                if sv != 0.0 {
                    tensor::axpy(gw, sv, &gzt[wi * k..(wi + 1) * k]);
                }
            }
            gs.fill(0.0);
            for o in 0..k {
                tensor::axpy(gs, wd[o * planes + p], &g_t[o * width..(o + 1) * width]);
            }
            let (carry, gy) = (&mut carry[r.clone()], &mut g_y1[r]);
            match spike {
                SpikeFn::Heaviside => reverse_row(hrow, gs, carry, gy, lif, alpha, reset_path, heaviside),
                SpikeFn::Sigmoid { alpha: a } => {
                    reverse_row(hrow, gs, carry, gy, lif, alpha, reset_path, |u| sigmoid(a * u))
                }
            }
        }
    }
}
