//! Estimators and decision rules for adapting the penalty parameter and the
//! time step.

use crate::error::{Error, Result};
use crate::fespace::{Field, NormKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub tol: f64,
    pub min_tol: f64,
    pub t_tol: f64,
    pub min_t_tol: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    /// Stability-guard constant.
    pub alpha: f64,
    pub safety: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol: 1e-6,
            min_tol: 1e-7,
            t_tol: 1e-5,
            min_t_tol: 1e-6,
            eps_min: 1e-8,
            eps_max: 1e-5,
            alpha: 2.0,
            safety: 0.9,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0 < self.min_tol && self.min_tol < self.tol) {
            return bad("need 0 < min_tol < tol");
        }
        if !(0.0 < self.min_t_tol && self.min_t_tol < self.t_tol) {
            return bad("need 0 < min_t_tol < t_tol");
        }
        if !(0.0 < self.eps_min && self.eps_min < self.eps_max) {
            return bad("need 0 < eps_min < eps_max");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("need alpha >= 0");
        }
        if !(0.0 < self.safety && self.safety <= 1.0) {
            return bad("need 0 < safety <= 1");
        }
        Ok(())
    }
}

/// Adaptivity state carried between steps of one run.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub t: f64,
    /// Last accepted step.
    pub k_n: f64,
    /// Step before that.
    pub k_nm1: f64,
    /// Step being attempted.
    pub k_np1: f64,
    /// Last accepted penalty parameter.
    pub eps_n: f64,
    /// Penalty parameter being attempted.
    pub eps_np1: f64,
    pub d2_prev: Option<Field>,
    pub reject_count: usize,
}

impl ControllerState {
    pub fn new(k0: f64, eps0: f64) -> Self {
        ControllerState {
            t: 0.0,
            k_n: k0,
            k_nm1: k0,
            k_np1: k0,
            eps_n: eps0,
            eps_np1: eps0,
            d2_prev: None,
            reject_count: 0,
        }
    }

    /// Records an accepted step and the parameters for the next one.
    pub fn accept(&mut self, d2: Option<Field>, k_next: f64, eps_next: f64) {
        self.t += self.k_np1;
        self.k_nm1 = self.k_n;
        self.k_n = self.k_np1;
        self.k_np1 = k_next;
        self.eps_n = self.eps_np1;
        self.eps_np1 = eps_next;
        self.d2_prev = d2;
        self.reject_count = 0;
    }

    /// Sets up a retry of the current time level.
    pub fn reject(&mut self, k_retry: f64, eps_retry: f64) {
        self.k_np1 = k_retry;
        self.eps_np1 = eps_retry;
        self.reject_count += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsEstimate {
    /// `||div u|| / ||grad u||`
    pub est: f64,
    pub div_norm: f64,
    pub grad_norm: f64,
    /// Set when `||grad u|| = 0` and the estimate was defined as zero.
    pub degenerate: bool,
}

/// Relative divergence residual of a velocity field.
pub fn est_epsilon(u: &Field) -> Result<EpsEstimate> {
    let div_norm = u.norm(NormKind::DivL2)?;
    let grad_norm = u.norm(NormKind::H1Semi)?;
    if grad_norm == 0.0 {
        return Ok(EpsEstimate {
            est: 0.0,
            div_norm,
            grad_norm,
            degenerate: true,
        });
    }
    Ok(EpsEstimate {
        est: div_norm / grad_norm,
        div_norm,
        grad_norm,
        degenerate: false,
    })
}

/// Filter and second-order estimator coefficients for step ratios
/// `tau_n = k_n / k_{n-1}` and `tau_np1 = k_{n+1} / k_n`.
pub fn alpha_coeffs(tau_n: f64, tau_np1: f64) -> (f64, f64) {
    let t = tau_np1;
    let alpha1 = t * (1.0 + t) / (1.0 + 2.0 * t);
    let num = tau_n * (t * tau_n + tau_n + 1.0) * (4.0 * t.powi(3) + 5.0 * t * t + t);
    let den = 3.0 * (tau_n * t * t + 4.0 * tau_n * t + 2.0 * t + tau_n + 1.0);
    (alpha1, num / den)
}

/// First-order LTE estimate `(alpha1/2) ||D2||`.
pub fn est_time_first(d2: &Field, alpha1: f64) -> Result<f64> {
    Ok(0.5 * alpha1 * d2.norm(NormKind::L2)?)
}

/// Weights `(a, b)` such that the second-order estimate is
/// `(alpha2/6) ||a D2(n+1) - b D2(n)||`.
pub fn second_estimate_weights(k_np1: f64, k_n: f64, k_nm1: f64) -> (f64, f64) {
    let sum = k_np1 + k_n + k_nm1;
    (3.0 * k_nm1 / sum, 3.0 * k_np1 / sum)
}

/// Second-order LTE estimate from the current and previous `D2`.
pub fn est_time_second(
    d2_np1: &Field,
    d2_n: &Field,
    k_np1: f64,
    k_n: f64,
    k_nm1: f64,
    alpha2: f64,
) -> Result<f64> {
    let (a, b) = second_estimate_weights(k_np1, k_n, k_nm1);
    let diff = d2_np1.axpby(a, d2_n, -b)?;
    Ok(alpha2 / 6.0 * diff.norm(NormKind::L2)?)
}

/// Lower bound on a decreased penalty parameter: `(1 - k alpha) eps_old`
/// when `k alpha < 1`. Increases pass through.
pub fn guard_epsilon(eps_old: f64, eps_new: f64, k: f64, alpha: f64) -> f64 {
    let f = 1.0 - k * alpha;
    if f > 0.0 {
        eps_new.max(f * eps_old)
    } else {
        eps_new
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsDecision {
    pub reject: bool,
    /// Penalty parameter for the retry (on reject) or the next step.
    pub eps_next: f64,
    /// `EST > TOL` but no further decrease is allowed.
    pub at_floor: bool,
}

/// The penalty-parameter decision tree. `eps` is the value just used and
/// `eps_accepted` the last accepted one (the guard reference).
pub fn adapt_epsilon(
    eps: f64,
    eps_accepted: f64,
    est: f64,
    k: f64,
    tol: &Tolerances,
    guard: bool,
) -> EpsDecision {
    if est > tol.tol {
        let mut next = (eps * (1.0 - tol.alpha * k))
            .max(0.5 * eps)
            .max(tol.eps_min);
        if guard {
            next = guard_epsilon(eps_accepted, next, k, tol.alpha);
        }
        if next < eps {
            EpsDecision {
                reject: true,
                eps_next: next,
                at_floor: false,
            }
        } else {
            EpsDecision {
                reject: false,
                eps_next: eps,
                at_floor: true,
            }
        }
    } else if est <= tol.min_tol {
        EpsDecision {
            reject: false,
            eps_next: (2.0 * eps).min(tol.eps_max),
            at_floor: false,
        }
    } else {
        EpsDecision {
            reject: false,
            eps_next: eps,
            at_floor: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepPhase {
    Reject,
    Grow,
}

/// Step proposal from an LTE estimate of a method of the given order.
pub fn propose_step(
    order: u8,
    t_est: f64,
    k_current: f64,
    k_prev: f64,
    tol: &Tolerances,
    phase: StepPhase,
) -> f64 {
    let p = if order == 1 { 0.5 } else { 1.0 / 3.0 };
    if t_est == 0.0 {
        return 2.0 * k_current;
    }
    let ratio = (tol.t_tol / t_est).powf(p);
    match phase {
        StepPhase::Reject => (tol.safety * k_prev * ratio).max(0.5 * k_current),
        StepPhase::Grow => (tol.safety * k_current * ratio)
            .min(2.0 * k_current)
            .max(0.5 * k_current),
    }
}

/// Picks the order whose proposed step is larger; ties go to order 2.
pub fn vsvo_select<T>(step1: f64, step2: f64, u1: T, u: T) -> (u8, T, f64) {
    if step1 > step2 {
        (1, u1, step1)
    } else {
        (2, u, step2)
    }
}
