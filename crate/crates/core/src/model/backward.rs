use alloc::vec;
use alloc::vec::Vec;

use super::forward::{BlockCache, ForwardCache};
use super::{EncoderBlock, SpikingConformer};
use crate::error::{Error, Result};
use super::frontend::{front_backward, FrontDims, FrontScratch};
use crate::neuron::{backward_step, LifParams};
use crate::tensor::conv::conv2d_backward_parts;
use crate::tensor::{self, avg_pool2d_backward, batch_norm_backward, BatchNormCache, BatchNormState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions {
    /// Surrogate sharpness.
    pub alpha: f64,
    /// Treat the spike inside the reset term as a constant.
    pub detach_reset: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            detach_reset: true,
        }
    }
}

struct Ctx<'a> {
    p: &'a LifParams,
    opts: &'a BackwardOptions,
    steps: usize,
}

impl Ctx<'_> {
    /// BPTT through a LIF population laid out `[T, n]`; returns dL/dX.
    fn lif(&self, h: &[f64], s: &[f64], grad_s: &[f64]) -> Vec<f64> {
        let n = h.len() / self.steps;
        let mut carry = vec![0.0; n];
        let mut gx = vec![0.0; h.len()];
        for t in (0..self.steps).rev() {
            let r = t * n..(t + 1) * n;
            backward_step(
                &h[r.clone()],
                &s[r.clone()],
                &grad_s[r.clone()],
                &mut carry,
                &mut gx[r],
                self.p,
                self.opts.alpha,
                self.opts.detach_reset,
            );
        }
        gx
    }
}

fn bn(
    grad: Vec<f64>,
    shape: &[usize],
    cache: &Option<BatchNormCache>,
    state: &BatchNormState,
    gstate: &mut BatchNormState,
) -> Result<Vec<f64>> {
    let cache = cache.as_ref().ok_or(Error::Uninitialized("batch norm cache"))?;
    let (gx, gg, gb) = batch_norm_backward(&Tensor::new(shape, grad)?, cache, &state.gamma)?;
    tensor::axpy(gstate.gamma.data_mut(), 1.0, gg.data());
    tensor::axpy(gstate.beta.data_mut(), 1.0, gb.data());
    Ok(gx.into_data())
}

/// Accumulates weight and bias gradients of `y = x w + b` and returns dL/dx.
fn linear_backward(x: &[f64], rows: usize, w: &Tensor, g: &[f64], gw: &mut Tensor, gb: &mut Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    tensor::matmul_tn_into(gw.data_mut(), x, g, rows, din, dout);
    for row in g.chunks(dout) {
        tensor::axpy(gb.data_mut(), 1.0, row);
    }
    let mut gx = vec![0.0; rows * din];
    tensor::matmul_nt_into(&mut gx, g, w.data(), rows, dout, din);
    gx
}

fn block_backward(
    ctx: &Ctx<'_>,
    e: &EncoderBlock,
    bc: &BlockCache,
    g_out: Vec<f64>,
    ge: &mut EncoderBlock,
    scale: f64,
    n_tok: usize,
) -> Result<Vec<f64>> {
    let rows = bc.input.shape()[0];
    let d = e.wq.shape()[0];
    let dh = e.mlp_w1.shape()[1];
    let gain = ctx.p.residual_gain();

    let g_cm2 = ctx.lif(&bc.h_m2, bc.out.data(), &g_out);
    let mut g_x1: Vec<f64> = g_cm2.iter().map(|v| gain * v).collect();
    let g_m2c = bn(g_cm2, &[rows, d], &bc.bn_m2, &e.bn_m2, &mut ge.bn_m2)?;
    let g_m1 = linear_backward(bc.m1.data(), rows, &e.mlp_w2, &g_m2c, &mut ge.mlp_w2, &mut ge.mlp_b2);
    let g_cm1 = ctx.lif(&bc.h_m1, bc.m1.data(), &g_m1);
    let g_m1c = bn(g_cm1, &[rows, dh], &bc.bn_m1, &e.bn_m1, &mut ge.bn_m1)?;
    let gx1_mlp = linear_backward(bc.x1.data(), rows, &e.mlp_w1, &g_m1c, &mut ge.mlp_w1, &mut ge.mlp_b1);
    tensor::axpy(&mut g_x1, 1.0, &gx1_mlp);

    let g_oc = ctx.lif(&bc.h_attn, bc.x1.data(), &g_x1);
    let mut g_x: Vec<f64> = g_oc.iter().map(|v| gain * v).collect();
    for row in g_oc.chunks(d) {
        tensor::axpy(ge.bo.data_mut(), 1.0, row);
    }
    let mut g_q = vec![0.0; rows * d];
    let mut g_k = vec![0.0; rows * d];
    let mut g_v = vec![0.0; rows * d];
    let (mut u, mut pm) = (vec![0.0; n_tok * d], vec![0.0; d * d]);
    let (mut g_a, mut g_p, mut g_u) = (vec![0.0; n_tok * d], vec![0.0; d * d], vec![0.0; n_tok * d]);
    for blk in 0..rows / n_tok {
        let r = blk * n_tok * d..(blk + 1) * n_tok * d;
        let (q, k, v) = (&bc.q.data()[r.clone()], &bc.k.data()[r.clone()], &bc.v.data()[r.clone()]);
        u.fill(0.0);
        pm.fill(0.0);
        tensor::matmul_into(&mut u, v, e.wo.data(), n_tok, d, d);
        tensor::matmul_tn_into(&mut pm, k, &u, n_tok, d, d);
        for (ga, &go) in g_a.iter_mut().zip(&g_oc[r.clone()]) {
            *ga = scale * go;
        }
        tensor::matmul_nt_into(&mut g_q[r.clone()], &g_a, &pm, n_tok, d, d);
        g_p.fill(0.0);
        tensor::matmul_tn_into(&mut g_p, q, &g_a, n_tok, d, d);
        tensor::matmul_nt_into(&mut g_k[r.clone()], &u, &g_p, n_tok, d, d);
        g_u.fill(0.0);
        tensor::matmul_into(&mut g_u, k, &g_p, n_tok, d, d);
        tensor::matmul_nt_into(&mut g_v[r.clone()], &g_u, e.wo.data(), n_tok, d, d);
        tensor::matmul_tn_into(ge.wo.data_mut(), v, &g_u, n_tok, d, d);
    }

    let x = bc.input.data();
    let g_qc = ctx.lif(&bc.hq, bc.q.data(), &g_q);
    tensor::axpy(&mut g_x, 1.0, &linear_backward(x, rows, &e.wq, &g_qc, &mut ge.wq, &mut ge.bq));
    let g_kc = ctx.lif(&bc.hk, bc.k.data(), &g_k);
    tensor::axpy(&mut g_x, 1.0, &linear_backward(x, rows, &e.wk, &g_kc, &mut ge.wk, &mut ge.bk));
    let g_vc = ctx.lif(&bc.hv, bc.v.data(), &g_v);
    tensor::axpy(&mut g_x, 1.0, &linear_backward(x, rows, &e.wv, &g_vc, &mut ge.wv, &mut ge.bv));
    Ok(g_x)
}

/// Surrogate-gradient backpropagation through time for a training-mode
/// forward pass. Returns gradients in a model-shaped buffer; batch-norm
/// running statistics in the result are meaningless.
pub fn backward(
    model: &SpikingConformer,
    cache: &ForwardCache,
    grad_logits: &Tensor,
    opts: &BackwardOptions,
) -> Result<SpikingConformer> {
    let cfg = &model.config;
    let batch = cache.batch;
    if grad_logits.shape() != [batch, 2] {
        return Err(Error::shape("backward", &[batch, 2], grad_logits.shape()));
    }
    grad_logits.ensure_finite("backward")?;
    if cache.bn1.is_none() {
        return Err(Error::invalid("backward", "forward pass was not run in training mode"));
    }
    let steps = cfg.timesteps;
    let (k, d, ch) = (cfg.conv_channels, cfg.embed_dim, cfg.channels);
    let w1 = cfg.temporal_width();
    let n_tok = cfg.n_tokens();
    let rows = steps * batch * n_tok;
    let hsize = cfg.head_hidden;
    let ctx = Ctx {
        p: &cfg.lif,
        opts,
        steps,
    };
    let mut g = model.zeros_like();

    // Head.
    let h = &model.head;
    let gl = grad_logits.data();
    tensor::matmul_tn_into(g.head.w2.data_mut(), cache.hidden.data(), gl, batch, hsize, 2);
    for row in gl.chunks(2) {
        tensor::axpy(g.head.b2.data_mut(), 1.0, row);
    }
    let mut g_f = vec![0.0; batch * hsize];
    tensor::matmul_nt_into(&mut g_f, gl, h.w2.data(), batch, 2, hsize);
    for (gv, &pre) in g_f.iter_mut().zip(cache.hidden_pre.data()) {
        if pre <= 0.0 {
            *gv = 0.0;
        }
    }
    let g_r = linear_backward(cache.rates.data(), batch, &h.w1, &g_f, &mut g.head.w1, &mut g.head.b1);
    let inv = 1.0 / (steps * n_tok) as f64;
    let mut g_x = vec![0.0; rows * d];
    for (r, row) in g_x.chunks_mut(d).enumerate() {
        let b = (r / n_tok) % batch;
        for (gv, &gr) in row.iter_mut().zip(&g_r[b * d..(b + 1) * d]) {
            *gv = gr * inv;
        }
    }

    for i in (0..model.encoders.len()).rev() {
        g_x = block_backward(
            &ctx,
            &model.encoders[i],
            &cache.blocks[i],
            g_x,
            &mut g.encoders[i],
            cfg.attention_scale,
            n_tok,
        )?;
    }

    // Projection and pooling.
    let c = &model.conv;
    let gc = &mut g.conv;
    let g_y3 = ctx.lif(&cache.h3, cache.tokens.data(), &g_x);
    let g_z3 = bn(g_y3, &[rows, d], &cache.bn3, &c.bn3, &mut gc.bn3)?;
    let pooled = cache.pooled.data();
    let wp = c.proj_w.data();
    let mut g_pooled = vec![0.0; pooled.len()];
    for tb in 0..steps * batch {
        for n in 0..n_tok {
            let gz = &g_z3[(tb * n_tok + n) * d..][..d];
            tensor::axpy(gc.proj_b.data_mut(), 1.0, gz);
            for ci in 0..k {
                let idx = (tb * k + ci) * n_tok + n;
                let pv = pooled[idx];
                let mut acc = 0.0;
                for (dd, &gv) in gz.iter().enumerate() {
                    acc += gv * wp[dd * k + ci];
                    if pv != 0.0 {
                        gc.proj_w.data_mut()[dd * k + ci] += gv * pv;
                    }
                }
                g_pooled[idx] = acc;
            }
        }
    }
    let g_pooled = Tensor::new(cache.pooled.shape(), g_pooled)?;
    let g_s2 = avg_pool2d_backward(&g_pooled, cache.s2.shape(), &cfg.pool)?;
    let g_y2 = ctx.lif(&cache.h2, cache.s2.data(), g_s2.data());
    let g_z2 = bn(g_y2, cache.s2.shape(), &cache.bn2, &c.bn2, &mut gc.bn2)?;

    // Spatial convolution and the first LIF layer, recomputed one sample at a time.
    let dims = FrontDims {
        k,
        planes: k * ch,
        width: w1,
        steps,
    };
    let per1 = k * ch * w1;
    let plane = k * w1;
    let mut scratch = FrontScratch::new(&dims, true);
    let mut g_wt = vec![0.0; dims.planes * k];
    let mut g_y1 = vec![0.0; batch * per1];
    let mut gz = vec![0.0; steps * plane];
    for b in 0..batch {
        for t in 0..steps {
            let off = (t * batch + b) * plane;
            gz[t * plane..(t + 1) * plane].copy_from_slice(&g_z2[off..off + plane]);
        }
        front_backward(
            &cache.y1.data()[b * per1..(b + 1) * per1],
            &c.spatial_w,
            &gz,
            &dims,
            &cfg.lif,
            cache.spike,
            opts.alpha,
            opts.detach_reset,
            &mut scratch,
            &mut g_wt,
            gc.spatial_b.data_mut(),
            &mut g_y1[b * per1..(b + 1) * per1],
        );
    }
    for o in 0..k {
        for p in 0..dims.planes {
            gc.spatial_w.data_mut()[o * dims.planes + p] += g_wt[p * k + o];
        }
    }
    let g_z1 = bn(g_y1, cache.y1.shape(), &cache.bn1, &c.bn1, &mut gc.bn1)?;
    let g_z1 = Tensor::new(cache.y1.shape(), g_z1)?;
    let grads = conv2d_backward_parts(&g_z1, &cache.input, &c.temporal_w, &cfg.temporal_spec(), false)?;
    tensor::axpy(gc.temporal_w.data_mut(), 1.0, grads.weights.data());
    if let Some(gb) = &grads.bias {
        tensor::axpy(gc.temporal_b.data_mut(), 1.0, gb.data());
    }
    Ok(g)
}
