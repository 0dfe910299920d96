use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Training,
    Evaluation,
}

/// Per-channel batch normalization parameters and running statistics.
///
/// The channel axis is axis 1; statistics are taken over every other axis.
/// Empty running vectors mean the statistics were never initialized.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    pub mode: NormMode,
}

impl BatchNormState {
    pub const DEFAULT_EPSILON: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: Self::DEFAULT_EPSILON,
            momentum: Self::DEFAULT_MOMENTUM,
            mode: NormMode::Training,
        }
    }

    /// Affine parameters only; evaluation fails until training has run.
    pub fn uninitialized(gamma: Tensor, beta: Tensor) -> Self {
        Self {
            gamma,
            beta,
            running_mean: Vec::new(),
            running_var: Vec::new(),
            epsilon: Self::DEFAULT_EPSILON,
            momentum: Self::DEFAULT_MOMENTUM,
            mode: NormMode::Evaluation,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.running_mean.len() == self.channels() && self.running_var.len() == self.channels()
    }

    /// Per-channel `(scale, shift)` such that evaluation output is `scale * x + shift`.
    pub fn folded(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.is_initialized() {
            return Err(Error::Uninitialized("batch_norm"));
        }
        let mut scale = Vec::with_capacity(self.channels());
        let mut shift = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let s = self.gamma.data()[c] / math::sqrt(self.running_var[c] + self.epsilon);
            scale.push(s);
            shift.push(self.beta.data()[c] - s * self.running_mean[c]);
        }
        Ok((scale, shift))
    }

    fn validate(&self, op: &'static str, input: &Tensor) -> Result<(usize, usize, usize)> {
        if input.rank() < 2 {
            return Err(Error::InvalidShape {
                op,
                detail: alloc::format!("batch norm needs rank >= 2, got {:?}", input.shape()),
            });
        }
        let c = input.shape()[1];
        if c != self.channels() || self.beta.len() != c {
            return Err(Error::shape(op, &[self.channels()], &[c]));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(op, "epsilon must be positive"));
        }
        let outer = input.shape()[0];
        let inner = input.shape()[2..].iter().product();
        Ok((outer, c, inner))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    shape: Vec<usize>,
}

/// Applies batch normalization in the state's mode. Training mode uses batch
/// statistics and updates the running estimates.
pub fn batch_norm(input: &Tensor, state: &mut BatchNormState) -> Result<Tensor> {
    match state.mode {
        NormMode::Training => batch_norm_train(input, state).map(|(y, _)| y),
        NormMode::Evaluation => batch_norm_eval(input, state),
    }
}

/// Evaluation-mode forward using the running statistics regardless of `state.mode`.
pub fn batch_norm_eval(input: &Tensor, state: &BatchNormState) -> Result<Tensor> {
    let (_, c, inner) = state.validate("batch_norm", input)?;
    let (scale, shift) = state.folded()?;
    let mut out = input.clone();
    for (idx, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
        let ch = idx % c;
        chunk.iter_mut().for_each(|v| *v = scale[ch] * *v + shift[ch]);
    }
    Ok(out)
}

/// Training-mode forward that also returns what the backward pass needs.
pub fn batch_norm_train(input: &Tensor, state: &mut BatchNormState) -> Result<(Tensor, BatchNormCache)> {
    let (outer, c, inner) = state.validate("batch_norm", input)?;
    let m = (outer * inner) as f64;
    let x = input.data();
    let mut mean = vec![0.0; c];
    for (idx, chunk) in x.chunks(inner).enumerate() {
        mean[idx % c] += chunk.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; c];
    for (idx, chunk) in x.chunks(inner).enumerate() {
        let mu = mean[idx % c];
        var[idx % c] += chunk.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / math::sqrt(v + state.epsilon))
        .collect();

    let mut xhat = vec![0.0; x.len()];
    let mut out = input.clone();
    for (idx, (chunk, xh)) in out
        .data_mut()
        .chunks_mut(inner)
        .zip(xhat.chunks_mut(inner))
        .enumerate()
    {
        let ch = idx % c;
        let (g, b) = (state.gamma.data()[ch], state.beta.data()[ch]);
        for (v, h) in chunk.iter_mut().zip(xh.iter_mut()) {
            *h = (*v - mean[ch]) * inv_std[ch];
            *v = g * *h + b;
        }
    }

    if !state.is_initialized() {
        state.running_mean = vec![0.0; c];
        state.running_var = vec![1.0; c];
    }
    let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
    let mom = state.momentum;
    for ch in 0..c {
        state.running_mean[ch] = (1.0 - mom) * state.running_mean[ch] + mom * mean[ch];
        state.running_var[ch] = (1.0 - mom) * state.running_var[ch] + mom * var[ch] * unbias;
    }

    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            shape: input.shape().to_vec(),
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for a training-mode forward.
pub fn batch_norm_backward(
    grad_out: &Tensor,
    cache: &BatchNormCache,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::shape("batch_norm_backward", &cache.shape, grad_out.shape()));
    }
    let c = cache.shape[1];
    let inner: usize = cache.shape[2..].iter().product();
    let m = (cache.shape[0] * inner) as f64;
    let g = grad_out.data();
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (idx, (gc, xc)) in g.chunks(inner).zip(cache.xhat.chunks(inner)).enumerate() {
        let ch = idx % c;
        for (&gv, &xv) in gc.iter().zip(xc) {
            sum_g[ch] += gv;
            sum_gx[ch] += gv * xv;
        }
    }
    let mut gx = grad_out.clone();
    for (idx, (gc, xc)) in gx
        .data_mut()
        .chunks_mut(inner)
        .zip(cache.xhat.chunks(inner))
        .enumerate()
    {
        let ch = idx % c;
        let k = gamma.data()[ch] * cache.inv_std[ch] / m;
        for (gv, &xv) in gc.iter_mut().zip(xc) {
            *gv = k * (m * *gv - sum_g[ch] - xv * sum_gx[ch]);
        }
    }
    Ok((gx, Tensor::scalar_vec(&sum_gx), Tensor::scalar_vec(&sum_g)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_batch_passes_through() {
        let x = Tensor::new(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let mut st = BatchNormState::new(1);
        let y = batch_norm(&x, &mut st).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn affine_on_normalized_input() {
        let x = Tensor::new(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let mut st = BatchNormState::new(1);
        st.epsilon = 1e-300;
        st.gamma = Tensor::scalar_vec(&[2.0]);
        st.beta = Tensor::scalar_vec(&[1.0]);
        let y = batch_norm(&x, &mut st).unwrap();
        assert_eq!(y.data(), &[-1.0, 3.0, -1.0, 3.0]);
    }

    #[test]
    fn evaluation_with_unit_statistics_is_affine_only() {
        let x = Tensor::from_fn(&[2, 2, 3], |i| i as f64 - 5.0);
        let mut st = BatchNormState::new(2);
        st.epsilon = 1e-300;
        st.mode = NormMode::Evaluation;
        let y = batch_norm(&x, &mut st).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn evaluation_requires_running_statistics() {
        let mut st = BatchNormState::uninitialized(Tensor::full(&[1], 1.0), Tensor::zeros(&[1]));
        let x = Tensor::zeros(&[2, 1]);
        assert_eq!(batch_norm(&x, &mut st), Err(Error::Uninitialized("batch_norm")));
    }

    #[test]
    fn training_updates_running_statistics() {
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        let mut st = BatchNormState::new(1);
        batch_norm(&x, &mut st).unwrap();
        assert!((st.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((st.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch() {
        let mut st = BatchNormState::new(3);
        assert!(batch_norm(&Tensor::zeros(&[2, 2]), &mut st).is_err());
    }
}
