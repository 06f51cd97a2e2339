//! Small-data discrete NLS
//!
//! ```text
//! i q̇_n = (H_θ q)_n ± |q_n|^{p−1} q_n
//! ```
//!
//! integrated by Strang splitting, together with the measured constants of the
//! decay bootstrap: `K₁` from the linear flow, `C₁` from the convolution
//! integral, and `δ* = (C₁ M^{p−2})^{−1/(p−1)}` with `M = 4K₁`.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice_operator::LatticeState;
use crate::propagator::{decay_profile, japanese, Propagator};
use crate::{FourierSeries, Frequency, C64};

/// Which parts of the splitting are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Splitting {
    /// Half nonlinear, full linear, half nonlinear.
    Strang,
    /// Phase rotation only (linear part dropped).
    NonlinearOnly,
}

/// Norms along an NLS trajectory, one entry per step (plus `t = 0`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlsTrajectory {
    pub times: Vec<f64>,
    pub sup_norms: Vec<f64>,
    pub l2_norms: Vec<f64>,
    /// `max |‖q(t)‖₂ − ‖φ‖₂| / ‖φ‖₂`.
    pub l2_drift: f64,
    /// `‖f(q)‖₁ ≤ ‖q‖∞^{p−2} ‖q‖₂²` held at every recorded time.
    pub chain_ok: bool,
    /// Set when `t_final` ran past the window margin; the trajectory stops at
    /// the last safe time.
    pub boundary_reach: bool,
    #[serde(skip)]
    pub final_state: LatticeState,
}

/// `q_n ↦ q_n e^{∓i|q_n|^{p−1} τ}`, the exact flow of the nonlinear part.
pub fn nonlinear_step(q: &mut LatticeState, p: f64, sign: f64, tau: f64) {
    for z in q.values_mut() {
        let a = z.norm();
        if a > 0.0 {
            *z *= C64::from_polar(1.0, -sign * a.powf(p - 1.0) * tau);
        }
    }
}

/// `(‖f(q)‖₁, ‖q‖∞^{p−2}‖q‖₂²)`.
pub fn chain_terms(q: &LatticeState, p: f64) -> (f64, f64) {
    let lhs = q.values().iter().map(|z| z.norm().powf(p)).sum();
    let rhs = q.linf_norm().powf(p - 2.0) * q.l2_norm().powi(2);
    (lhs, rhs)
}

/// Tolerated `ℓ²` drift per unit time before the run is aborted.
pub const DRIFT_PER_TIME: f64 = 1e-6;

pub fn nls_evolve(
    phi: &LatticeState,
    p: f64,
    sign: f64,
    t_final: f64,
    dt: f64,
    v: &FourierSeries,
    theta: &[f64],
    freq: &Frequency,
) -> Result<NlsTrajectory> {
    nls_evolve_with(phi, p, sign, t_final, dt, v, theta, freq, Splitting::Strang)
}

#[allow(clippy::too_many_arguments)]
pub fn nls_evolve_with(
    phi: &LatticeState,
    p: f64,
    sign: f64,
    t_final: f64,
    dt: f64,
    v: &FourierSeries,
    theta: &[f64],
    freq: &Frequency,
    mode: Splitting,
) -> Result<NlsTrajectory> {
    if !(p > 1.0) {
        return Err(Error::Invalid(format!("exponent p = {p} must exceed 1")));
    }
    if sign.abs() != 1.0 {
        return Err(Error::Invalid("sign must be +1 or -1".into()));
    }
    if !(t_final >= 0.0) || !(dt > 0.0) {
        return Err(Error::Invalid("need t_final >= 0 and dt > 0".into()));
    }
    let dt_max = 0.1 / (2.0 + v.sup_bound() + phi.linf_norm().powf(p - 1.0));
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("dt = {dt} exceeds 0.1/(2+|V|+|phi|^(p-1)) = {dt_max}")));
    }
    let prop = Propagator::new(v, theta, freq, phi.half_width());
    let mut horizon = t_final;
    let mut boundary_reach = false;
    if mode == Splitting::Strang && horizon > prop.max_safe_time() {
        horizon = prop.max_safe_time();
        boundary_reach = true;
    }
    let steps = (horizon / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { horizon / steps as f64 };
    let norm0 = phi.l2_norm();
    let mut q = phi.clone();
    let mut out = NlsTrajectory {
        times: Vec::with_capacity(steps + 1),
        sup_norms: Vec::with_capacity(steps + 1),
        l2_norms: Vec::with_capacity(steps + 1),
        l2_drift: 0.0,
        chain_ok: true,
        boundary_reach,
        final_state: LatticeState::zeros(0),
    };
    let record = |q: &LatticeState, t: f64, out: &mut NlsTrajectory| -> Result<()> {
        let l2 = q.l2_norm();
        let drift = if norm0 > 0.0 { (l2 - norm0).abs() / norm0 } else { l2 };
        if drift > DRIFT_PER_TIME * t.max(1.0) {
            return Err(Error::Contract(format!("l2 drift {drift:e} at t = {t} exceeds {DRIFT_PER_TIME:e} per unit time")));
        }
        let (lhs, rhs) = chain_terms(q, p);
        if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
            out.chain_ok = false;
        }
        out.l2_drift = out.l2_drift.max(drift);
        out.times.push(t);
        out.sup_norms.push(q.linf_norm());
        out.l2_norms.push(l2);
        Ok(())
    };
    record(&q, 0.0, &mut out)?;
    for s in 1..=steps {
        match mode {
            Splitting::Strang => {
                nonlinear_step(&mut q, p, sign, 0.5 * h);
                q = prop.evolve_unchecked(&q, h);
                nonlinear_step(&mut q, p, sign, 0.5 * h);
            }
            Splitting::NonlinearOnly => nonlinear_step(&mut q, p, sign, h),
        }
        record(&q, s as f64 * h, &mut out)?;
    }
    out.final_state = q;
    Ok(out)
}

/// `∫₀^∞ ⟨t−s⟩^{−ζ} ⟨s⟩^{−μ} ds` by Gauss–Legendre on geometric panels around
/// `0` and `t`, with the tail beyond `S = 10¹⁰ ⟨t⟩` taken from its
/// asymptotic expansion.
pub fn convolution_integral(zeta: f64, mu: f64, t: f64) -> f64 {
    convolution_integral_with(zeta, mu, t, 16)
}

fn convolution_integral_with(zeta: f64, mu: f64, t: f64, order: usize) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("order > 0"));
    let f = |s: f64| japanese(t - s).powf(-zeta) * japanese(s).powf(-mu);
    let far = 1e10 * japanese(t);
    let mut cuts = vec![0.0];
    let mut d = 0.125;
    while d < t / 2.0 {
        cuts.push(d);
        cuts.push(t - d);
        d *= 2.0;
    }
    cuts.push(t / 2.0);
    cuts.push(t);
    let mut d = 0.125;
    while t + d < far {
        cuts.push(t + d);
        d *= 1.5;
    }
    cuts.push(far);
    cuts.retain(|x| *x >= 0.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let body: f64 = cuts.windows(2).map(|w| rule.integrate(w[0], w[1], f)).sum();
    let a = zeta + mu;
    let tail = far.powf(1.0 - a) / (a - 1.0) + zeta * t * far.powf(-a) / a;
    body + tail
}

/// Empirical `C₁ = sup_t ⟨t⟩^ζ ∫₀^∞ ⟨t−s⟩^{−ζ}⟨s⟩^{−μ} ds` over `t_samples`.
pub fn convolution_constant(zeta: f64, mu: f64, t_samples: &[f64]) -> Result<f64> {
    if !(zeta > 0.0 && zeta <= 1.0) || !(mu > 1.0) {
        return Err(Error::Invalid(format!("need 0 < zeta <= 1 and mu > 1 (got {zeta}, {mu})")));
    }
    if t_samples.is_empty() || t_samples.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Invalid("t samples must be finite and non-negative".into()));
    }
    Ok(t_samples
        .iter()
        .map(|&t| japanese(t).powf(zeta) * convolution_integral(zeta, mu, t))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Same sup with a lower-order rule, as a quadrature-refinement check.
pub fn convolution_constant_coarse(zeta: f64, mu: f64, t_samples: &[f64]) -> f64 {
    t_samples
        .iter()
        .map(|&t| japanese(t).powf(zeta) * convolution_integral_with(zeta, mu, t, 6))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sup_t ⟨t⟩^ζ ‖e^{−itH}φ‖∞ / ‖φ‖₁` over `times`.
pub fn measure_k1(phi: &LatticeState, zeta: f64, times: &[f64], v: &FourierSeries, theta: &[f64], freq: &Frequency) -> Result<f64> {
    let l1 = phi.l1_norm();
    if l1 == 0.0 {
        return Err(Error::Invalid("K1 needs a nonzero datum".into()));
    }
    let prof = decay_profile(phi, times, v, theta, freq)?;
    Ok(prof
        .times
        .iter()
        .zip(&prof.sup_norms)
        .map(|(t, s)| japanese(*t).powf(zeta) * s / l1)
        .fold(0.0, f64::max))
}

/// `(C₁ (4K₁)^{p−2})^{−1/(p−1)}`.
pub fn delta_star(k1: f64, c1: f64, p: f64) -> f64 {
    (c1 * (4.0 * k1).powf(p - 2.0)).powf(-1.0 / (p - 1.0))
}

/// An NLS trajectory with the constants needed for the bootstrap verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlsRun {
    pub p: f64,
    pub sign: f64,
    pub zeta: f64,
    /// `‖φ‖₁`.
    pub delta0: f64,
    pub k1: f64,
    pub trajectory: NlsTrajectory,
}

impl NlsRun {
    /// `⟨t⟩^ζ ‖q(t)‖∞` along the trajectory.
    pub fn weighted_sup(&self) -> Vec<f64> {
        self.trajectory.times.iter().zip(&self.trajectory.sup_norms).map(|(t, s)| japanese(*t).powf(self.zeta) * s).collect()
    }
}

/// Whether `sup_t ⟨t⟩^ζ ‖q(t)‖∞ ≤ 4K₁δ₀`, with the ratio of the two sides.
pub fn bootstrap_check(run: &NlsRun) -> (bool, f64) {
    let sup = run.weighted_sup().into_iter().fold(0.0, f64::max);
    if sup == 0.0 {
        return (true, 0.0);
    }
    let margin = sup / (4.0 * run.k1 * run.delta0);
    (margin <= 1.0, margin)
}

/// Full bootstrap experiment on the datum `δ₀ · φ/‖φ‖₁`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub p: f64,
    pub zeta: f64,
    pub mu: f64,
    pub k1: f64,
    pub c1: f64,
    pub delta_star: f64,
    pub delta0: f64,
    pub passes: bool,
    pub margin: f64,
    pub l2_drift: f64,
    pub chain_ok: bool,
    pub boundary_reach: bool,
    pub run: NlsRun,
}

/// Parameters of [`bootstrap_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSetup {
    pub p: f64,
    pub sign: f64,
    pub zeta: f64,
    pub t_max: f64,
    pub dt: f64,
    /// `δ₀ = δ* · fraction` unless `delta0` is given.
    pub fraction: f64,
    pub delta0: Option<f64>,
    /// Spacing of the times at which `K₁` is sampled.
    pub k1_spacing: f64,
}

impl Default for BootstrapSetup {
    fn default() -> Self {
        Self { p: 6.0, sign: 1.0, zeta: 0.3, t_max: 500.0, dt: 0.04, fraction: 0.1, delta0: None, k1_spacing: 0.25 }
    }
}

/// Measures `K₁` on `shape`, `C₁` with `μ = ζ(p−2)` over `[0, t_max]`, sets
/// `δ₀` and runs the NLS bootstrap.
pub fn bootstrap_experiment(
    shape: &LatticeState,
    setup: &BootstrapSetup,
    v: &FourierSeries,
    theta: &[f64],
    freq: &Frequency,
) -> Result<BootstrapReport> {
    let BootstrapSetup { p, sign, zeta, t_max, dt, fraction, delta0, k1_spacing } = *setup;
    let mu = zeta * (p - 2.0);
    if !(zeta > 1.0 / (p - 2.0) && zeta < 1.0 / 3.0) {
        return Err(Error::Invalid(format!("need 1/(p-2) < zeta < 1/3 (p = {p}, zeta = {zeta})")));
    }
    let n = (t_max / k1_spacing).ceil() as usize;
    let times: Vec<f64> = (0..=n).map(|i| (i as f64 * k1_spacing).min(t_max)).collect();
    let k1 = measure_k1(shape, zeta, &times, v, theta, freq)?;
    let c1 = convolution_constant(zeta, mu, &times)?;
    let ds = delta_star(k1, c1, p);
    let d0 = delta0.unwrap_or(fraction * ds);
    let phi = shape.scale(C64::new(d0 / shape.l1_norm(), 0.0));
    let trajectory = nls_evolve(&phi, p, sign, t_max, dt, v, theta, freq)?;
    let run = NlsRun { p, sign, zeta, delta0: d0, k1, trajectory };
    let (passes, margin) = bootstrap_check(&run);
    Ok(BootstrapReport {
        p,
        zeta,
        mu,
        k1,
        c1,
        delta_star: ds,
        delta0: d0,
        passes,
        margin,
        l2_drift: run.trajectory.l2_drift,
        chain_ok: run.trajectory.chain_ok,
        boundary_reach: run.trajectory.boundary_reach,
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_datum_stays_zero() {
        let f = Frequency::golden();
        let tr = nls_evolve(&LatticeState::zeros(80), 6.0, 1.0, 5.0, 0.04, &FourierSeries::cosine(1, 0.01), &[0.0], &f).unwrap();
        assert!(tr.sup_norms.iter().all(|s| *s == 0.0));
        let run = NlsRun { p: 6.0, sign: 1.0, zeta: 0.3, delta0: 0.0, k1: 1.0, trajectory: tr };
        assert_eq!(bootstrap_check(&run), (true, 0.0));
    }

    #[test]
    fn nonlinear_flow_keeps_moduli() {
        let f = Frequency::golden();
        let phi = LatticeState::gaussian(30, 4.0).scale(C64::new(0.9, 0.0));
        let tr =
            nls_evolve_with(&phi, 3.0, -1.0, 2.0, 0.01, &FourierSeries::zero(1), &[0.0], &f, Splitting::NonlinearOnly).unwrap();
        for (a, b) in tr.final_state.values().iter().zip(phi.values()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-13 * b.norm());
        }
    }

    #[test]
    fn arctangent_closed_form() {
        // ζ + μ = 2 at t = 0 gives ∫₀^∞ (1+s²)^{-1} ds
        assert!((convolution_integral(0.5, 1.5, 0.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-8);
    }

    #[test]
    fn rejects_large_steps() {
        let f = Frequency::golden();
        let r = nls_evolve(&LatticeState::delta(80), 6.0, 1.0, 1.0, 0.5, &FourierSeries::zero(1), &[0.0], &f);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn delta_star_formula() {
        let d = delta_star(0.5, 4.0, 6.0);
        assert!((4.0 * 2f64.powi(4) * d.powi(5) - 1.0).abs() < 1e-12);
    }
}
