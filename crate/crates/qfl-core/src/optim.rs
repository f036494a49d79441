//! Optimizers for circuit training.
//!
//! * AQGD: momentum gradient descent on parameter-shift gradients
//!   (2n+1 objective evaluations per step).
//! * DP-AQGD: the same loop with Gaussian noise added to every gradient.
//! * SPSA: derivative-free, two evaluations per step. Stands in for COBYLA.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dp::gaussian_sigma;
use crate::error::{Error, Result};
use crate::vqc::ParameterVector;

/// Something the optimizers can minimise.
///
/// `value_and_gradient` defaults to the plain parameter-shift rule applied to
/// `evaluate`; objectives that know more about their structure may override
/// it, as long as one call still corresponds to 2n+1 evaluations.
pub trait Objective: Sync {
    fn evaluate(&self, theta: &[f64]) -> f64;

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = parameter_shift_gradient(|t| self.evaluate(t), theta)?;
        Ok((g.value, g.gradient))
    }
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn evaluate(&self, theta: &[f64]) -> f64 {
        self(theta)
    }
}

/// The 2n+1 evaluation points: θ, then θ + (π/2)e_i for each i, then
/// θ − (π/2)e_i for each i.
pub fn shift_points(theta: &[f64]) -> Vec<Vec<f64>> {
    let n = theta.len();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(theta.to_vec());
    for sign in [1.0, -1.0] {
        for i in 0..n {
            let mut p = theta.to_vec();
            p[i] += sign * FRAC_PI_2;
            points.push(p);
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub evaluations: usize,
}

/// value = f(θ), gradient_i = (f(θ + π/2 e_i) − f(θ − π/2 e_i)) / 2.
pub fn parameter_shift_gradient<F>(f: F, theta: &[f64]) -> Result<ShiftGradient>
where
    F: Fn(&[f64]) -> f64,
{
    let n = theta.len();
    let values: Vec<f64> = shift_points(theta).iter().map(|p| f(p)).collect();
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { value, index });
    }
    let gradient = (0..n).map(|i| (values[1 + i] - values[1 + n + i]) / 2.0).collect();
    Ok(ShiftGradient { value: values[0], gradient, evaluations: values.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AqgdSettings {
    pub maxiter: usize,
    /// Learning rate.
    pub eta: f64,
    pub momentum: f64,
    /// Stop when consecutive windowed objective averages move less than this.
    pub tol: f64,
    /// Stop when the ∞-norm of a parameter update falls below this.
    pub param_tol: f64,
    /// Window length for the objective average.
    pub averaging: usize,
}

impl Default for AqgdSettings {
    fn default() -> Self {
        Self { maxiter: 100, eta: 0.1, momentum: 0.25, tol: 1e-6, param_tol: 1e-6, averaging: 10 }
    }
}

impl AqgdSettings {
    pub fn validate(&self) -> Result<()> {
        if self.maxiter < 1 {
            return Err(Error::invalid("maxiter", "must be >= 1"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta", format!("must be > 0, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", format!("must be in [0, 1), got {}", self.momentum)));
        }
        if self.tol < 0.0 || self.param_tol < 0.0 {
            return Err(Error::invalid("tol", "tolerances must be non-negative"));
        }
        if self.averaging < 1 {
            return Err(Error::invalid("averaging", "must be >= 1"));
        }
        Ok(())
    }
}

/// (ε, δ) budget and L2 sensitivity of the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSettings {
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
}

impl DpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", format!("must be in (0, 1), got {}", self.delta)));
        }
        if !(self.sensitivity > 0.0) || !self.sensitivity.is_finite() {
            return Err(Error::invalid("sensitivity", format!("must be > 0, got {}", self.sensitivity)));
        }
        Ok(())
    }

    /// Gaussian-mechanism standard deviation s·√(2 ln(1.25/δ))/ε. An infinite
    /// ε yields σ = 0.
    pub fn sigma(&self) -> f64 {
        gaussian_sigma(self.epsilon, self.delta, self.sensitivity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub theta_final: ParameterVector,
    /// Last objective value observed by the optimizer (f at the start of the
    /// final iteration for AQGD); no extra evaluation is spent on it.
    pub objective_final: f64,
    pub eval_count: usize,
    pub iterations_run: usize,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    ObjectivePlateau,
    SmallUpdate,
}

/// Tracks the windowed objective average; triggers once `window + 1` values
/// exist and two consecutive window averages differ by less than `tol`.
struct PlateauDetector {
    window: usize,
    tol: f64,
    recent: VecDeque<f64>,
}

impl PlateauDetector {
    fn new(window: usize, tol: f64) -> Self {
        Self { window, tol, recent: VecDeque::with_capacity(window + 1) }
    }

    fn push(&mut self, value: f64) -> bool {
        self.recent.push_back(value);
        if self.recent.len() > self.window + 1 {
            self.recent.pop_front();
        }
        if self.recent.len() < self.window + 1 {
            return false;
        }
        let w = self.window as f64;
        let prev: f64 = self.recent.iter().take(self.window).sum::<f64>() / w;
        let curr: f64 = self.recent.iter().skip(1).sum::<f64>() / w;
        (curr - prev).abs() < self.tol
    }
}

fn run_aqgd<O, R>(
    f: &O,
    theta0: &[f64],
    settings: &AqgdSettings,
    mut noise: Option<(f64, &mut R)>,
) -> Result<(OptimResult, StopReason)>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    settings.validate()?;
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut velocity = vec![0.0; n];
    let mut trace = Vec::with_capacity(settings.maxiter);
    let mut plateau = PlateauDetector::new(settings.averaging, settings.tol);
    let mut eval_count = 0;
    let mut reason = StopReason::MaxIter;

    for _ in 0..settings.maxiter {
        let (value, mut grad) = f.value_and_gradient(&theta)?;
        eval_count += 2 * n + 1;
        trace.push(value);

        if let Some((sigma, rng)) = noise.as_mut() {
            if *sigma > 0.0 {
                let normal = Normal::new(0.0, *sigma).expect("finite sigma");
                for g in grad.iter_mut() {
                    *g += normal.sample(rng);
                }
            }
        }

        let mut max_step: f64 = 0.0;
        for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = settings.momentum * *v + (1.0 - settings.momentum) * g;
            let step = settings.eta * *v;
            *t -= step;
            max_step = max_step.max(step.abs());
        }

        if max_step < settings.param_tol {
            reason = StopReason::SmallUpdate;
            break;
        }
        if plateau.push(value) {
            reason = StopReason::ObjectivePlateau;
            break;
        }
    }

    let objective_final = *trace.last().expect("maxiter >= 1");
    let iterations_run = trace.len();
    Ok((
        OptimResult { theta_final: theta.into(), objective_final, eval_count, iterations_run, objective_trace: trace },
        reason,
    ))
}

/// Momentum gradient descent on parameter-shift gradients:
/// m_t = μ·m_{t−1} + (1−μ)·g_t, θ_{t+1} = θ_t − η·m_t.
pub fn aqgd_minimize<O: Objective + ?Sized>(f: &O, theta0: &[f64], settings: &AqgdSettings) -> Result<OptimResult> {
    run_aqgd::<O, rand_chacha::ChaCha8Rng>(f, theta0, settings, None).map(|(r, _)| r)
}

/// Like [`aqgd_minimize`], also reporting why the loop stopped.
pub fn aqgd_minimize_with_reason<O: Objective + ?Sized>(
    f: &O,
    theta0: &[f64],
    settings: &AqgdSettings,
) -> Result<(OptimResult, StopReason)> {
    run_aqgd::<O, rand_chacha::ChaCha8Rng>(f, theta0, settings, None)
}

/// AQGD with every gradient perturbed by N(0, σ²I), σ from [`DpSettings::sigma`].
pub fn dp_aqgd_minimize<O, R>(
    f: &O,
    theta0: &[f64],
    settings: &AqgdSettings,
    dp: &DpSettings,
    rng: &mut R,
) -> Result<OptimResult>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    dp.validate()?;
    run_aqgd(f, theta0, settings, Some((dp.sigma(), rng))).map(|(r, _)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaSettings {
    pub maxiter: usize,
    pub a: f64,
    pub c: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Stability constant; `None` means 0.1·maxiter.
    pub stability: Option<f64>,
}

impl Default for SpsaSettings {
    fn default() -> Self {
        Self { maxiter: 100, a: 0.1, c: 0.1, alpha: 0.602, gamma: 0.101, stability: None }
    }
}

/// Simultaneous-perturbation stochastic approximation with Rademacher
/// perturbations and gains a_k = a/(k+1+A)^α, c_k = c/(k+1)^γ.
///
/// The trace records the mean of the two perturbed evaluations per step.
pub fn spsa_minimize<O, R>(f: &O, theta0: &[f64], settings: &SpsaSettings, rng: &mut R) -> Result<OptimResult>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    if settings.maxiter < 1 {
        return Err(Error::invalid("maxiter", "must be >= 1"));
    }
    let big_a = settings.stability.unwrap_or(0.1 * settings.maxiter as f64);
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut trace = Vec::with_capacity(settings.maxiter);
    let mut eval_count = 0;

    for k in 0..settings.maxiter {
        let kf = k as f64;
        let ak = settings.a / (kf + 1.0 + big_a).powf(settings.alpha);
        let ck = settings.c / (kf + 1.0).powf(settings.gamma);
        let delta: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + ck * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - ck * d).collect();
        let (fp, fm) = (f.evaluate(&plus), f.evaluate(&minus));
        eval_count += 2;
        for (i, v) in [fp, fm].into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteObjective { value: v, index: eval_count - 2 + i });
            }
        }
        trace.push(0.5 * (fp + fm));
        let diff = fp - fm;
        for (t, d) in theta.iter_mut().zip(&delta) {
            // 1/Δ_i = Δ_i for ±1 perturbations
            *t -= ak * diff / (2.0 * ck) * d;
        }
    }

    Ok(OptimResult {
        theta_final: theta.into(),
        objective_final: *trace.last().expect("maxiter >= 1"),
        eval_count,
        iterations_run: settings.maxiter,
        objective_trace: trace,
    })
}
