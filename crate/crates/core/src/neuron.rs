//! Leaky integrate-and-fire dynamics and the approximate spike-triggered
//! update scheme.
//!
//! One timestep of a LIF neuron with input current `x`:
//!
//! ```text
//! H = V + (x - (V - v_reset)) / tau
//! S = 1 if H >= v_th else 0
//! V' = H * (1 - S) + v_reset * S
//! ```
//!
//! The approximate layer tracks, per input sample, the set of neurons whose
//! input current was positive during the first `T_th` timesteps (`PosIdx`).
//! Afterwards only those neurons have their input current computed; every
//! other neuron receives zero current but keeps leaking.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams {
    /// Membrane time constant in timesteps.
    pub tau: f64,
    pub v_th: f64,
    pub v_reset: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_th: 1.0,
            v_reset: 0.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.v_th.is_finite() && self.v_reset.is_finite()) {
            return Err(Error::InvalidConfig("LIF constants must be finite".into()));
        }
        if self.tau < 1.0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "tau must be >= 1, got {}",
                self.tau
            )));
        }
        if self.v_th <= self.v_reset {
            return Err(Error::InvalidConfig(alloc::format!(
                "v_th ({}) must exceed v_reset ({})",
                self.v_th,
                self.v_reset
            )));
        }
        Ok(())
    }

    /// Current that takes a neuron sitting at `v_reset` exactly to threshold
    /// in one step. Residual connections inject spikes at this gain, so a
    /// binary raster passes through a LIF layer unchanged when nothing else
    /// drives it.
    pub fn residual_gain(&self) -> f64 {
        self.tau * (self.v_th - self.v_reset)
    }
}

/// How `H - v_th` is turned into the spike variable in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpikeFn {
    Heaviside,
    /// Smooth relaxation `sigmoid(alpha * (H - v_th))`, used to check
    /// surrogate gradients against finite differences.
    Sigmoid { alpha: f64 },
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    let e = math::exp_nonpos(-x.abs());
    let inv = 1.0 / (1.0 + e);
    if x >= 0.0 {
        inv
    } else {
        e * inv
    }
}

/// Derivative proxy for the spike threshold at `u = H - v_th`:
/// `alpha * s * (1 - s)` with `s = sigmoid(alpha * u)`.
#[inline]
pub fn surrogate_grad(u: f64, alpha: f64) -> f64 {
    let e = math::exp_nonpos(-(alpha * u).abs());
    let inv = 1.0 / (1.0 + e);
    alpha * e * inv * inv
}

impl SpikeFn {
    #[inline]
    pub(crate) fn fire(self, u: f64) -> f64 {
        match self {
            SpikeFn::Heaviside => heaviside(u),
            SpikeFn::Sigmoid { alpha } => sigmoid(alpha * u),
        }
    }
}

#[inline]
pub(crate) fn heaviside(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Advances `v` by one step. Writes spikes and, if requested, the
/// pre-reset potential `H`.
#[inline]
pub(crate) fn step_slice(
    v: &mut [f64],
    x: &[f64],
    spikes: &mut [f64],
    h_out: Option<&mut [f64]>,
    p: &LifParams,
    f: SpikeFn,
) {
    let n = v.len();
    let (x, spikes) = (&x[..n], &mut spikes[..n]);
    match (f, h_out) {
        (SpikeFn::Heaviside, None) => step_loop(v, x, spikes, None, p, heaviside),
        (SpikeFn::Heaviside, Some(ho)) => step_loop(v, x, spikes, Some(&mut ho[..n]), p, heaviside),
        (SpikeFn::Sigmoid { alpha }, ho) => {
            step_loop(v, x, spikes, ho.map(|h| &mut h[..n]), p, |u| sigmoid(alpha * u))
        }
    }
}

#[inline(always)]
fn step_loop(
    v: &mut [f64],
    x: &[f64],
    spikes: &mut [f64],
    h_out: Option<&mut [f64]>,
    p: &LifParams,
    fire: impl Fn(f64) -> f64,
) {
    let inv_tau = 1.0 / p.tau;
    let (vr, vth) = (p.v_reset, p.v_th);
    let step = |v: &mut f64, x: f64| {
        let h = *v + inv_tau * (x - (*v - vr));
        let s = fire(h - vth);
        *v = h * (1.0 - s) + vr * s;
        (h, s)
    };
    match h_out {
        None => {
            for ((vi, &xi), si) in v.iter_mut().zip(x).zip(spikes.iter_mut()) {
                *si = step(vi, xi).1;
            }
        }
        Some(ho) => {
            for (((vi, &xi), si), hi) in v.iter_mut().zip(x).zip(spikes.iter_mut()).zip(ho.iter_mut()) {
                let (h, s) = step(vi, xi);
                *si = s;
                *hi = h;
            }
        }
    }
}

/// One reverse step of backpropagation through time.
///
/// `carry` holds dL/dH at `t + 1` on entry and dL/dH at `t` on exit;
/// `grad_x` receives dL/dX at `t`. With `detach_reset` the spike inside the
/// reset term is treated as a constant.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_step(
    h: &[f64],
    s: &[f64],
    grad_s: &[f64],
    carry: &mut [f64],
    grad_x: &mut [f64],
    p: &LifParams,
    alpha: f64,
    detach_reset: bool,
) {
    let n = h.len();
    let (s, grad_s, carry, grad_x) = (&s[..n], &grad_s[..n], &mut carry[..n], &mut grad_x[..n]);
    let inv_tau = 1.0 / p.tau;
    let keep = 1.0 - inv_tau;
    let (vth, vr) = (p.v_th, p.v_reset);
    // The reset-path term is scaled by 0 when detached; kept branch-free so the loop vectorizes.
    let reset_path = if detach_reset { 0.0 } else { 1.0 };
    for i in 0..n {
        let ds = surrogate_grad(h[i] - vth, alpha);
        let dv_dh = 1.0 - s[i] + reset_path * (vr - h[i]) * ds;
        let gh = grad_s[i] * ds + carry[i] * keep * dv_dh;
        carry[i] = gh;
        grad_x[i] = gh * inv_tau;
    }
}

/// Set of neuron indices with set semantics, stored as a bitmap.
#[derive(Clone, Debug, Default)]
pub struct PosIdx {
    bits: Vec<bool>,
    count: usize,
}

impl PartialEq for PosIdx {
    fn eq(&self, other: &Self) -> bool {
        self.count == other.count && self.iter().eq(other.iter())
    }
}

impl PosIdx {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            bits: vec![false; n],
            count: 0,
        }
    }

    pub fn insert(&mut self, i: usize) -> bool {
        if i >= self.bits.len() {
            self.bits.resize(i + 1, false);
        }
        let fresh = !self.bits[i];
        if fresh {
            self.bits[i] = true;
            self.count += 1;
        }
        fresh
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.bits.get(i).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// Adds every index whose current is strictly positive.
    pub fn extend_positive(&mut self, currents: &[f64]) {
        if self.bits.len() < currents.len() {
            self.bits.resize(currents.len(), false);
        }
        for (i, &x) in currents.iter().enumerate() {
            if x > 0.0 && !self.bits[i] {
                self.bits[i] = true;
                self.count += 1;
            }
        }
    }
}

impl FromIterator<usize> for PosIdx {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut p = PosIdx::new();
        for i in iter {
            p.insert(i);
        }
        p
    }
}

/// `pos_idx ∪ { i : x_t[i] > 0 }`.
pub fn build_pos_idx(x_t: &Tensor, mut pos_idx: PosIdx) -> PosIdx {
    pos_idx.extend_positive(x_t.data());
    pos_idx
}

/// Membrane state of one spiking layer for one forward pass.
#[derive(Clone, Debug)]
pub struct LifState {
    pub v: Tensor,
    pub pos_idx: PosIdx,
    pub t: usize,
}

impl LifState {
    pub fn new(shape: &[usize], params: &LifParams) -> Self {
        Self::from_potential(Tensor::full(shape, params.v_reset))
    }

    pub fn from_potential(v: Tensor) -> Self {
        let n = v.len();
        Self {
            v,
            pos_idx: PosIdx::with_capacity(n),
            t: 0,
        }
    }
}

/// One LIF update of every neuron in `state`; returns the spike tensor.
pub fn lif_step(state: &mut LifState, x_t: &Tensor, params: &LifParams) -> Result<Tensor> {
    if x_t.shape() != state.v.shape() {
        return Err(Error::shape("lif_step", state.v.shape(), x_t.shape()));
    }
    x_t.ensure_finite("lif_step")?;
    let mut spikes = x_t.zeros_like();
    step_slice(
        state.v.data_mut(),
        x_t.data(),
        spikes.data_mut(),
        None,
        params,
        SpikeFn::Heaviside,
    );
    state.t += 1;
    Ok(spikes)
}

/// Runs [`lif_step`] over the leading time axis of `x_seq`.
pub fn lif_multistep(x_seq: &Tensor, params: &LifParams, v0: &Tensor) -> Result<Tensor> {
    if x_seq.rank() < 2 || x_seq.shape()[1..] != *v0.shape() {
        let mut expected = vec![x_seq.shape().first().copied().unwrap_or(1)];
        expected.extend_from_slice(v0.shape());
        return Err(Error::shape("lif_multistep", &expected, x_seq.shape()));
    }
    x_seq.ensure_finite("lif_multistep")?;
    let n = v0.len();
    let mut v = v0.data().to_vec();
    let mut out = x_seq.zeros_like();
    for (x, s) in x_seq.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        step_slice(&mut v, x, s, None, params, SpikeFn::Heaviside);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApproxConfig {
    /// Total number of timesteps `T`.
    pub timesteps: usize,
    /// Threshold timestep `T_th`: timesteps `1..=T_th` compute every current.
    pub threshold: usize,
    pub enabled: bool,
}

impl ApproxConfig {
    pub fn new(timesteps: usize, threshold: usize) -> Self {
        Self {
            timesteps,
            threshold,
            enabled: true,
        }
    }

    pub fn disabled(timesteps: usize) -> Self {
        Self {
            timesteps,
            threshold: timesteps,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::InvalidConfig("T must be >= 1".into()));
        }
        if self.threshold > self.timesteps {
            return Err(Error::InvalidConfig(alloc::format!(
                "T_th ({}) exceeds T ({})",
                self.threshold,
                self.timesteps
            )));
        }
        Ok(())
    }
}

/// Counts of per-neuron input-current computations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipStats {
    pub updates_performed: u64,
    pub updates_skipped: u64,
}

impl SkipStats {
    pub fn total(&self) -> u64 {
        self.updates_performed + self.updates_skipped
    }

    pub fn reduction_percent(&self) -> Result<f64> {
        skip_reduction(self)
    }

    /// `key=value` lines: updates_performed, updates_skipped, reduction_percent.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "updates_performed={}", self.updates_performed);
        let _ = writeln!(s, "updates_skipped={}", self.updates_skipped);
        match self.reduction_percent() {
            Ok(p) => {
                let _ = writeln!(s, "reduction_percent={p:.4}");
            }
            Err(_) => {
                let _ = writeln!(s, "reduction_percent=undefined");
            }
        }
        s
    }
}

impl Add for SkipStats {
    type Output = SkipStats;
    fn add(self, rhs: SkipStats) -> SkipStats {
        SkipStats {
            updates_performed: self.updates_performed + rhs.updates_performed,
            updates_skipped: self.updates_skipped + rhs.updates_skipped,
        }
    }
}

impl AddAssign for SkipStats {
    fn add_assign(&mut self, rhs: SkipStats) {
        *self = *self + rhs;
    }
}

/// Percentage of potential neuron updates that were skipped.
pub fn skip_reduction(stats: &SkipStats) -> Result<f64> {
    if stats.total() == 0 {
        return Err(Error::Empty("skip_reduction"));
    }
    Ok(100.0 * stats.updates_skipped as f64 / stats.total() as f64)
}

/// Algorithm-1 bookkeeping for one spiking layer and one input sample.
#[derive(Clone, Debug)]
pub struct UpdateGate {
    cfg: ApproxConfig,
    pos_idx: PosIdx,
    stats: SkipStats,
}

impl UpdateGate {
    pub fn new(cfg: ApproxConfig, neurons: usize) -> Self {
        Self {
            cfg,
            pos_idx: PosIdx::with_capacity(neurons),
            stats: SkipStats::default(),
        }
    }

    /// Whether every current is computed at zero-based step `t`.
    #[inline]
    pub fn computes_all(&self, t: usize) -> bool {
        !self.cfg.enabled || t < self.cfg.threshold
    }

    /// Whether neuron `i` gets its current computed at zero-based step `t`.
    #[inline]
    pub fn computes(&self, t: usize, i: usize) -> bool {
        self.computes_all(t) || self.pos_idx.contains(i)
    }

    /// Records currents of step `t` (before `T_th`) or zeroes the currents of
    /// neurons outside `PosIdx` (after `T_th`).
    pub fn apply(&mut self, t: usize, currents: &mut [f64]) {
        let n = currents.len() as u64;
        if self.computes_all(t) {
            if self.cfg.enabled {
                self.pos_idx.extend_positive(currents);
            }
            self.stats.updates_performed += n;
            return;
        }
        let mut kept = 0u64;
        for (i, x) in currents.iter_mut().enumerate() {
            if self.pos_idx.contains(i) {
                kept += 1;
            } else {
                *x = 0.0;
            }
        }
        self.stats.updates_performed += kept;
        self.stats.updates_skipped += n - kept;
    }

    pub fn pos_idx(&self) -> &PosIdx {
        &self.pos_idx
    }

    pub fn stats(&self) -> SkipStats {
        self.stats
    }

    pub fn config(&self) -> &ApproxConfig {
        &self.cfg
    }
}

fn check_raster(op: &'static str, raster: &Tensor, width: usize) -> Result<usize> {
    if raster.rank() != 2 || raster.shape()[1] != width {
        return Err(Error::shape(op, &[raster.shape()[0], width], raster.shape()));
    }
    if !raster.is_binary() {
        return Err(Error::NonBinary { layer: op.into() });
    }
    Ok(raster.shape()[0])
}

/// A fully connected spiking layer `X[t] = W * S[t]` followed by LIF neurons,
/// with Algorithm-1 skipping.
///
/// `weights` is `[n_out, n_in]`, `spikes_in` is `[T, n_in]`. Each target's
/// current is accumulated over its active inputs in index order, so a
/// computed current does not depend on which other targets were skipped.
pub fn approx_linear_lif_forward(
    weights: &Tensor,
    spikes_in: &Tensor,
    params: &LifParams,
    cfg: &ApproxConfig,
) -> Result<(Tensor, SkipStats)> {
    params.validate()?;
    cfg.validate()?;
    if weights.rank() != 2 {
        return Err(Error::InvalidShape {
            op: "approx_linear_lif_forward",
            detail: alloc::format!("weights must be [n_out, n_in], got {:?}", weights.shape()),
        });
    }
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    let steps = check_raster("approx_linear_lif_forward", spikes_in, n_in)?;
    if steps != cfg.timesteps {
        return Err(Error::invalid(
            "approx_linear_lif_forward",
            alloc::format!("raster has {steps} timesteps, config expects {}", cfg.timesteps),
        ));
    }
    let w = weights.data();
    let mut gate = UpdateGate::new(*cfg, n_out);
    let mut v = vec![params.v_reset; n_out];
    let mut current = vec![0.0; n_out];
    let mut out = Tensor::zeros(&[steps, n_out]);
    let mut active = Vec::with_capacity(n_in);
    for t in 0..steps {
        let s = &spikes_in.data()[t * n_in..(t + 1) * n_in];
        active.clear();
        active.extend(s.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, _)| j));
        let all = gate.computes_all(t);
        for (i, x) in current.iter_mut().enumerate() {
            *x = 0.0;
            if all || gate.computes(t, i) {
                let row = &w[i * n_in..(i + 1) * n_in];
                for &j in &active {
                    *x += row[j];
                }
            }
        }
        gate.apply(t, &mut current);
        step_slice(
            &mut v,
            &current,
            &mut out.data_mut()[t * n_out..(t + 1) * n_out],
            None,
            params,
            SpikeFn::Heaviside,
        );
    }
    Ok((out, gate.stats()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(tau: f64, v_th: f64) -> LifParams {
        LifParams {
            tau,
            v_th,
            v_reset: 0.0,
        }
    }

    fn step1(params: LifParams, v_prev: f64, x: f64) -> (f64, f64) {
        let mut st = LifState::from_potential(Tensor::scalar_vec(&[v_prev]));
        let s = lif_step(&mut st, &Tensor::scalar_vec(&[x]), &params).unwrap();
        (s.data()[0], st.v.data()[0])
    }

    #[test]
    fn quiescent_neuron() {
        assert_eq!(step1(p(2.0, 1.0), 0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn suprathreshold_step_resets() {
        // H = 0.5 + 0.5 * (2 - 0.5) = 1.25
        assert_eq!(step1(p(2.0, 1.0), 0.5, 2.0), (1.0, 0.0));
    }

    #[test]
    fn subthreshold_step_integrates() {
        let (s, v) = step1(p(2.0, 1.0), 0.2, 0.4);
        assert_eq!(s, 0.0);
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn step_shape_mismatch() {
        let mut st = LifState::new(&[3], &LifParams::default());
        assert!(lif_step(&mut st, &Tensor::zeros(&[2]), &LifParams::default()).is_err());
    }

    #[test]
    fn step_rejects_nan() {
        let mut st = LifState::new(&[1], &LifParams::default());
        let x = Tensor::scalar_vec(&[f64::NAN]);
        assert!(matches!(
            lif_step(&mut st, &x, &LifParams::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn constant_unit_drive_never_reaches_unit_threshold() {
        let x = Tensor::full(&[8, 1], 1.0);
        let s = lif_multistep(&x, &p(2.0, 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(s.count_nonzero(), 0);
    }

    #[test]
    fn constant_drive_fires_with_period_four() {
        let x = Tensor::full(&[12, 1], 1.0);
        let s = lif_multistep(&x, &p(2.0, 0.9), &Tensor::zeros(&[1])).unwrap();
        let fired: Vec<usize> = (0..12).filter(|&t| s.data()[t] == 1.0).map(|t| t + 1).collect();
        assert_eq!(fired, vec![4, 8, 12]);
    }

    #[test]
    fn silent_input_gives_silent_raster() {
        let s = lif_multistep(&Tensor::zeros(&[5, 3]), &LifParams::default(), &Tensor::zeros(&[3]))
            .unwrap();
        assert_eq!(s.count_nonzero(), 0);
    }

    #[test]
    fn surrogate_peak_and_tails() {
        assert!((surrogate_grad(0.0, 4.0) - 1.0).abs() < 1e-15);
        assert!(surrogate_grad(1e6, 4.0) < 1e-300);
        assert!(surrogate_grad(-1e6, 4.0) < 1e-300);
        for u in [0.1, 0.7, 3.0] {
            assert_eq!(surrogate_grad(u, 4.0), surrogate_grad(-u, 4.0));
        }
    }

    #[test]
    fn pos_idx_strict_positivity() {
        let x = Tensor::scalar_vec(&[-1.0, 0.0, 2.0]);
        let got = build_pos_idx(&x, PosIdx::new());
        assert_eq!(got.iter().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn pos_idx_zero_input_unchanged() {
        let before: PosIdx = [1usize, 3].into_iter().collect();
        let after = build_pos_idx(&Tensor::zeros(&[4]), before.clone());
        assert_eq!(after, before);
    }

    #[test]
    fn pos_idx_union() {
        let got = build_pos_idx(&Tensor::scalar_vec(&[1.0, 1.0]), [0usize].into_iter().collect());
        assert_eq!(got.iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn skip_reduction_arithmetic() {
        let s = SkipStats {
            updates_performed: 62,
            updates_skipped: 38,
        };
        assert!((skip_reduction(&s).unwrap() - 38.0).abs() < 1e-12);
        let none = SkipStats {
            updates_performed: 10,
            updates_skipped: 0,
        };
        assert_eq!(skip_reduction(&none).unwrap(), 0.0);
        assert!(skip_reduction(&SkipStats::default()).is_err());
    }

    #[test]
    fn skip_report_lines() {
        let s = SkipStats {
            updates_performed: 6,
            updates_skipped: 2,
        };
        let r = s.report();
        assert!(r.contains("updates_performed=6\n"));
        assert!(r.contains("updates_skipped=2\n"));
        assert!(r.contains("reduction_percent=25.0000\n"));
    }

    /// Two targets, T=4, T_th=2. Input 0 fires at t=1 only; target 0 has a
    /// positive weight from it, target 1 a negative one.
    #[test]
    fn hand_trace_two_neurons() {
        let w = Tensor::new(&[2, 1], vec![0.5, -0.5]).unwrap();
        let s_in = Tensor::new(&[4, 1], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let (_, stats) =
            approx_linear_lif_forward(&w, &s_in, &LifParams::default(), &ApproxConfig::new(4, 2))
                .unwrap();
        assert_eq!(stats.updates_skipped, 2);
        assert_eq!(stats.updates_performed, 6);
        assert!((skip_reduction(&stats).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_zero_is_free_leak() {
        let w = Tensor::full(&[3, 2], 5.0);
        let s_in = Tensor::full(&[4, 2], 1.0);
        let (out, stats) =
            approx_linear_lif_forward(&w, &s_in, &LifParams::default(), &ApproxConfig::new(4, 0))
                .unwrap();
        assert_eq!(out.count_nonzero(), 0);
        assert_eq!(stats.updates_skipped, 12);
    }

    #[test]
    fn raster_length_must_match() {
        let w = Tensor::zeros(&[1, 1]);
        let s_in = Tensor::zeros(&[3, 1]);
        assert!(approx_linear_lif_forward(
            &w,
            &s_in,
            &LifParams::default(),
            &ApproxConfig::new(4, 2)
        )
        .is_err());
    }

    #[test]
    fn params_validation() {
        assert!(LifParams::default().validate().is_ok());
        assert!(p(0.5, 1.0).validate().is_err());
        assert!(LifParams {
            tau: 2.0,
            v_th: 0.0,
            v_reset: 0.0
        }
        .validate()
        .is_err());
    }
}
