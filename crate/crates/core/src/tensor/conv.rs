use alloc::vec;

use super::{axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D cross-correlation layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub has_bias: bool,
}

impl ConvSpec {
    /// Stride 1, no padding, with bias.
    pub fn valid(out_channels: usize, kernel: (usize, usize)) -> Self {
        Self {
            out_channels,
            kernel,
            stride: (1, 1),
            padding: (0, 0),
            has_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0
            || self.kernel.0 == 0
            || self.kernel.1 == 0
            || self.stride.0 == 0
            || self.stride.1 == 0
        {
            return Err(Error::invalid(
                "ConvSpec",
                alloc::format!("kernel, stride and channel count must be >= 1: {self:?}"),
            ));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out_len(h, self.kernel.0, self.stride.0, self.padding.0)?,
            conv_out_len(w, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the window does not fit.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(kernel).map(|d| d / stride + 1)
}

struct Geometry {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry(
    op: &'static str,
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<Geometry> {
    spec.validate()?;
    if input.rank() != 4 {
        return Err(Error::InvalidShape {
            op,
            detail: alloc::format!("input must be [B, C, H, W], got {:?}", input.shape()),
        });
    }
    let [b, c, h, w] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let expected = [spec.out_channels, c, spec.kernel.0, spec.kernel.1];
    if weights.shape() != expected {
        return Err(Error::shape(op, &expected, weights.shape()));
    }
    let (oh, ow) = spec.output_hw(h, w).ok_or_else(|| Error::InvalidShape {
        op,
        detail: alloc::format!(
            "kernel {:?} does not fit input {h}x{w} with padding {:?}",
            spec.kernel,
            spec.padding
        ),
    })?;
    Ok(Geometry {
        b,
        c,
        h,
        w,
        o: spec.out_channels,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        oh,
        ow,
    })
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<()> {
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.shape() == [spec.out_channels] => Ok(()),
        (true, Some(b)) => Err(Error::shape(op, &[spec.out_channels], b.shape())),
        (true, None) => Err(Error::invalid(op, "spec declares a bias but none was given")),
        (false, Some(_)) => Err(Error::invalid(op, "bias given for a bias-free spec")),
        (false, None) => Ok(()),
    }
}

/// Range of output columns whose input column `ow * stride + tap - pad`
/// lies inside `[0, width)`, for stride 1.
#[inline]
fn unit_stride_range(tap: usize, pad: usize, width: usize, out_w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = (width + pad).saturating_sub(tap).min(out_w);
    (lo, hi.max(lo))
}

#[inline]
fn input_index(out: usize, stride: usize, tap: usize, pad: usize, len: usize) -> Option<usize> {
    let pos = out * stride + tap;
    if pos < pad || pos - pad >= len {
        None
    } else {
        Some(pos - pad)
    }
}

fn init_output(g: &Geometry, bias: Option<&Tensor>) -> Tensor {
    let mut out = Tensor::zeros(&[g.b, g.o, g.oh, g.ow]);
    if let Some(bias) = bias {
        let plane = g.oh * g.ow;
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[i % g.o]);
        }
    }
    out
}

/// Dense 2-D cross-correlation: `[B, C, H, W] * [O, C, kh, kw] -> [B, O, H', W']`.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let g = geometry("conv2d", input, weights, spec)?;
    check_bias("conv2d", bias, spec)?;
    input.ensure_finite("conv2d")?;
    let mut out = init_output(&g, bias);
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let x = input.data();
    let wt = weights.data();
    let od = out.data_mut();
    for b in 0..g.b {
        for o in 0..g.o {
            for c in 0..g.c {
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let wv = wt[((o * g.c + c) * g.kh + i) * g.kw + j];
                        for oh in 0..g.oh {
                            let Some(ih) = input_index(oh, sh, i, ph, g.h) else {
                                continue;
                            };
                            let in_row = &x[((b * g.c + c) * g.h + ih) * g.w..][..g.w];
                            let out_row = &mut od[((b * g.o + o) * g.oh + oh) * g.ow..][..g.ow];
                            if sw == 1 {
                                let (lo, hi) = unit_stride_range(j, pw, g.w, g.ow);
                                if lo < hi {
                                    let start = lo + j - pw;
                                    axpy(&mut out_row[lo..hi], wv, &in_row[start..start + hi - lo]);
                                }
                            } else {
                                for (ow, acc) in out_row.iter_mut().enumerate() {
                                    if let Some(iw) = input_index(ow, sw, j, pw, g.w) {
                                        *acc += wv * in_row[iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Event-driven form of [`conv2d`]: only nonzero input entries are visited,
/// each scattering its weighted contribution into the outputs it reaches.
///
/// Mathematically identical to [`conv2d`]; the accumulation order differs, so
/// results agree to rounding rather than bit-for-bit.
pub fn conv2d_events(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let g = geometry("conv2d_events", input, weights, spec)?;
    check_bias("conv2d_events", bias, spec)?;
    input.ensure_finite("conv2d_events")?;
    let mut out = init_output(&g, bias);
    let od = out.data_mut();
    let wt = weights.data();
    for_each_event(&g, spec, input.data(), |b, c, i, j, oh, ow, xv| {
        for o in 0..g.o {
            od[((b * g.o + o) * g.oh + oh) * g.ow + ow] +=
                wt[((o * g.c + c) * g.kh + i) * g.kw + j] * xv;
        }
    });
    Ok(out)
}

/// Calls `f(b, c, tap_h, tap_w, out_h, out_w, value)` for every nonzero input
/// entry and every kernel tap that maps it onto a valid output position.
#[inline]
fn for_each_event(
    g: &Geometry,
    spec: &ConvSpec,
    x: &[f64],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize, f64),
) {
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    for b in 0..g.b {
        for c in 0..g.c {
            for ih in 0..g.h {
                let row = &x[((b * g.c + c) * g.h + ih) * g.w..][..g.w];
                for (iw, &xv) in row.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for i in 0..g.kh {
                        let num_h = ih + ph;
                        if num_h < i || (num_h - i) % sh != 0 {
                            continue;
                        }
                        let oh = (num_h - i) / sh;
                        if oh >= g.oh {
                            continue;
                        }
                        for j in 0..g.kw {
                            let num_w = iw + pw;
                            if num_w < j || (num_w - j) % sw != 0 {
                                continue;
                            }
                            let ow = (num_w - j) / sw;
                            if ow >= g.ow {
                                continue;
                            }
                            f(b, c, i, j, oh, ow, xv);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

/// Adjoint of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<ConvGrads> {
    conv2d_backward_parts(grad_out, input, weights, spec, true)
}

pub(crate) fn conv2d_backward_parts(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    want_input: bool,
) -> Result<ConvGrads> {
    let g = geometry("conv2d_backward", input, weights, spec)?;
    let expected = [g.b, g.o, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward", &expected, grad_out.shape()));
    }
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let gy = grad_out.data();
    let x = input.data();
    let wt = weights.data();

    let grad_input = want_input.then(|| {
        let mut gx = input.zeros_like();
        let gxd = gx.data_mut();
        for b in 0..g.b {
            for o in 0..g.o {
                for c in 0..g.c {
                    for i in 0..g.kh {
                        for j in 0..g.kw {
                            let wv = wt[((o * g.c + c) * g.kh + i) * g.kw + j];
                            if wv == 0.0 {
                                continue;
                            }
                            for oh in 0..g.oh {
                                let Some(ih) = input_index(oh, sh, i, ph, g.h) else {
                                    continue;
                                };
                                let g_row = &gy[((b * g.o + o) * g.oh + oh) * g.ow..][..g.ow];
                                let gx_row = &mut gxd[((b * g.c + c) * g.h + ih) * g.w..][..g.w];
                                if sw == 1 {
                                    let (lo, hi) = unit_stride_range(j, pw, g.w, g.ow);
                                    if lo < hi {
                                        let start = lo + j - pw;
                                        axpy(&mut gx_row[start..start + hi - lo], wv, &g_row[lo..hi]);
                                    }
                                } else {
                                    for (ow, &gv) in g_row.iter().enumerate() {
                                        if let Some(iw) = input_index(ow, sw, j, pw, g.w) {
                                            gx_row[iw] += wv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    });

    let mut gw = weights.zeros_like();
    let sparse = input.count_nonzero() * 10 < input.len();
    if sparse {
        let gwd = gw.data_mut();
        for_each_event(&g, spec, x, |b, c, i, j, oh, ow, xv| {
            for o in 0..g.o {
                gwd[((o * g.c + c) * g.kh + i) * g.kw + j] +=
                    gy[((b * g.o + o) * g.oh + oh) * g.ow + ow] * xv;
            }
        });
    } else {
        let gwd = gw.data_mut();
        for b in 0..g.b {
            for o in 0..g.o {
                for c in 0..g.c {
                    for i in 0..g.kh {
                        for j in 0..g.kw {
                            let mut acc = 0.0;
                            for oh in 0..g.oh {
                                let Some(ih) = input_index(oh, sh, i, ph, g.h) else {
                                    continue;
                                };
                                let g_row = &gy[((b * g.o + o) * g.oh + oh) * g.ow..][..g.ow];
                                let in_row = &x[((b * g.c + c) * g.h + ih) * g.w..][..g.w];
                                if sw == 1 {
                                    let (lo, hi) = unit_stride_range(j, pw, g.w, g.ow);
                                    if lo < hi {
                                        let start = lo + j - pw;
                                        acc += dot(&g_row[lo..hi], &in_row[start..start + hi - lo]);
                                    }
                                } else {
                                    for (ow, &gv) in g_row.iter().enumerate() {
                                        if let Some(iw) = input_index(ow, sw, j, pw, g.w) {
                                            acc += gv * in_row[iw];
                                        }
                                    }
                                }
                            }
                            gwd[((o * g.c + c) * g.kh + i) * g.kw + j] += acc;
                        }
                    }
                }
            }
        }
    }

    let grad_bias = spec.has_bias.then(|| {
        let mut gb = vec![0.0; g.o];
        let plane = g.oh * g.ow;
        for (idx, chunk) in gy.chunks(plane).enumerate() {
            gb[idx % g.o] += chunk.iter().sum::<f64>();
        }
        Tensor::scalar_vec(&gb)
    });

    Ok(ConvGrads {
        input: grad_input,
        weights: gw,
        bias: grad_bias,
    })
}
