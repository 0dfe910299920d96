use super::conv::conv_out_len;
use super::Tensor;
use crate::error::{Error, Result};

/// Average-pooling window without padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolSpec {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return None;
        }
        Some((
            conv_out_len(h, self.kernel.0, self.stride.0, 0)?,
            conv_out_len(w, self.kernel.1, self.stride.1, 0)?,
        ))
    }
}

fn dims(op: &'static str, input: &Tensor, spec: &PoolSpec) -> Result<[usize; 6]> {
    if input.rank() != 4 {
        return Err(Error::InvalidShape {
            op,
            detail: alloc::format!("input must be [B, C, H, W], got {:?}", input.shape()),
        });
    }
    let s = input.shape();
    let (oh, ow) = spec.output_hw(s[2], s[3]).ok_or_else(|| Error::InvalidShape {
        op,
        detail: alloc::format!(
            "pooling window {:?} stride {:?} does not fit input {}x{}",
            spec.kernel,
            spec.stride,
            s[2],
            s[3]
        ),
    })?;
    Ok([s[0] * s[1], s[2], s[3], oh, ow, 0])
}

/// Window means over the last two axes.
pub fn avg_pool2d(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let [planes, h, w, oh, ow, _] = dims("avg_pool2d", input, spec)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let scale = 1.0 / (kh * kw) as f64;
    let s = input.shape();
    let mut out = Tensor::zeros(&[s[0], s[1], oh, ow]);
    let x = input.data();
    let od = out.data_mut();
    for p in 0..planes {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = 0.0;
                for i in 0..kh {
                    let row = &x[(p * h + y * sh + i) * w..][..w];
                    acc += row[xo * sw..xo * sw + kw].iter().sum::<f64>();
                }
                od[(p * oh + y) * ow + xo] = acc * scale;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`avg_pool2d`]; overlapping windows accumulate.
pub fn avg_pool2d_backward(grad_out: &Tensor, input_shape: &[usize], spec: &PoolSpec) -> Result<Tensor> {
    let probe = Tensor::zeros(input_shape);
    let [planes, h, w, oh, ow, _] = dims("avg_pool2d_backward", &probe, spec)?;
    let expected = [input_shape[0], input_shape[1], oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::shape("avg_pool2d_backward", &expected, grad_out.shape()));
    }
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let scale = 1.0 / (kh * kw) as f64;
    let mut gx = probe;
    let gd = gx.data_mut();
    let g = grad_out.data();
    for p in 0..planes {
        for y in 0..oh {
            for xo in 0..ow {
                let gv = g[(p * oh + y) * ow + xo] * scale;
                for i in 0..kh {
                    let row = &mut gd[(p * h + y * sh + i) * w..][..w];
                    row[xo * sw..xo * sw + kw].iter_mut().for_each(|v| *v += gv);
                }
            }
        }
    }
    Ok(gx)
}
