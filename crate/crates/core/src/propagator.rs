//! `e^{−itH_θ}` on a finite window by Chebyshev expansion, decay profiles and
//! the spectral reconstruction of the evolution.

use crate::error::{Error, Result};
use crate::lattice_operator::{diagonal, LatticeState};
use crate::special::bessel_j_all;
use crate::spectral_transform::{SpectralGrid, SpectralTable};
use crate::{FourierSeries, Frequency, C64};

/// Chebyshev coefficients are dropped once every remaining `|J_k(at)|` is
/// below this.
const TAIL: f64 = 1e-15;

/// `H_θ` on a fixed window, ready for repeated propagation.
#[derive(Debug, Clone)]
pub struct Propagator {
    diag: Vec<f64>,
    /// Spectral enclosure half-width `2 + ‖V‖∞`.
    radius: f64,
    half_width: usize,
}

impl Propagator {
    pub fn new(v: &FourierSeries, theta: &[f64], freq: &Frequency, half_width: usize) -> Self {
        Self { diag: diagonal(v, theta, freq, half_width), radius: 2.0 + v.sup_bound(), half_width }
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Largest `|t|` for which the light cone of the initial support stays
    /// 50 sites inside the window.
    pub fn max_safe_time(&self) -> f64 {
        (self.half_width as f64 - 50.0).max(0.0) / (2.0 * self.radius)
    }

    /// `e^{−itH} q` with the window-margin precondition enforced.
    pub fn evolve(&self, q: &LatticeState, t: f64) -> Result<LatticeState> {
        if t.abs() > self.max_safe_time() + 1e-12 {
            return Err(Error::Precondition(format!(
                "window N = {} too small for t = {} (needs N >= 2(2+|V|)|t| + 50)",
                self.half_width, t
            )));
        }
        Ok(self.evolve_unchecked(q, t))
    }

    /// `e^{−itH} q` without the window check (Dirichlet reflection is then
    /// part of the answer).
    pub fn evolve_unchecked(&self, q: &LatticeState, t: f64) -> LatticeState {
        assert_eq!(q.half_width(), self.half_width);
        if t == 0.0 {
            return q.clone();
        }
        let a = self.radius;
        let x = a * t;
        let kmax = (x.abs() + 30.0 + 8.0 * x.abs().cbrt()) as usize;
        let j = bessel_j_all(kmax, x);
        let mut order = kmax;
        while order > 0 && j[order].abs() < TAIL {
            order -= 1;
        }
        let len = q.values().len();
        let inv_a = 1.0 / a;
        let nz: Vec<usize> = (0..len).filter(|&i| q.values()[i].norm() > 0.0).collect();
        let (mut lo, mut hi) = match (nz.first(), nz.last()) {
            (Some(&l), Some(&h)) => (l, h),
            _ => return q.clone(),
        };
        // T_0 q, T_1 q
        let mut prev: Vec<C64> = q.values().to_vec();
        let mut cur = vec![C64::new(0.0, 0.0); len];
        lo = lo.saturating_sub(1);
        hi = (hi + 1).min(len - 1);
        self.scaled_apply(&prev, &mut cur, lo, hi, inv_a);
        let mut out: Vec<C64> = prev.iter().map(|v| v * j[0]).collect();
        let mut phase = C64::new(0.0, -2.0);
        for (i, o) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *o += phase * j[1] * cur[i];
        }
        let mut next = vec![C64::new(0.0, 0.0); len];
        for jk in j.iter().take(order + 1).skip(2) {
            lo = lo.saturating_sub(1);
            hi = (hi + 1).min(len - 1);
            // next = 2 H̃ cur − prev
            self.scaled_apply(&cur, &mut next, lo, hi, 2.0 * inv_a);
            for i in lo..=hi {
                next[i] -= prev[i];
            }
            phase *= C64::new(0.0, -1.0);
            let c = phase * *jk;
            for i in lo..=hi {
                out[i] += c * next[i];
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        LatticeState::from_values(out).expect("odd window")
    }

    /// `out[lo..=hi] = s · H q` restricted to the active range.
    fn scaled_apply(&self, q: &[C64], out: &mut [C64], lo: usize, hi: usize, s: f64) {
        let len = q.len();
        for i in lo..=hi {
            let mut v = q[i] * self.diag[i];
            if i > 0 {
                v -= q[i - 1];
            }
            if i + 1 < len {
                v -= q[i + 1];
            }
            out[i] = v * s;
        }
    }

    /// `⟨q, H q⟩`.
    pub fn energy(&self, q: &LatticeState) -> f64 {
        let mut hq = vec![C64::new(0.0, 0.0); q.values().len()];
        crate::lattice_operator::apply_h_diag(&self.diag, q.values(), &mut hq);
        q.values().iter().zip(&hq).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// `e^{−itH_θ} q0` on the window of `q0`.
pub fn evolve(q0: &LatticeState, t: f64, v: &FourierSeries, theta: &[f64], freq: &Frequency) -> Result<LatticeState> {
    Propagator::new(v, theta, freq, q0.half_width()).evolve(q0, t)
}

/// `‖q(t)‖∞` and `‖q(t)‖₂` along a list of times with a power-law fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DecayProfile {
    pub times: Vec<f64>,
    pub sup_norms: Vec<f64>,
    pub l2_norms: Vec<f64>,
    /// Least-squares slope of `log ‖q‖∞` against `log ⟨t⟩` over `t ≥ 10`.
    pub slope: f64,
    /// Two standard errors of the slope.
    pub slope_band: f64,
    pub half_width: usize,
    /// Set when the requested times ran past the window margin; the profile
    /// then stops at the last safe time.
    pub boundary_reach: bool,
}

/// `⟨t⟩ = √(1 + t²)`.
pub fn japanese(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

/// Slope and two-standard-error band of the least-squares line through
/// `(log ⟨t⟩, log y)` restricted to `t ≥ t_min`.
pub fn fit_power_law(times: &[f64], ys: &[f64], t_min: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(ys)
        .filter(|(t, y)| **t >= t_min && **y > 0.0)
        .map(|(t, y)| (japanese(*t).ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::INFINITY);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let band = if pts.len() > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
        2.0 * (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    (slope, band)
}

/// Evolves `phi` through the sorted `times` (incrementally) and records norms.
pub fn decay_profile(phi: &LatticeState, times: &[f64], v: &FourierSeries, theta: &[f64], freq: &Frequency) -> Result<DecayProfile> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| *t < 0.0) {
        return Err(Error::Invalid("times must be sorted and non-negative".into()));
    }
    let prop = Propagator::new(v, theta, freq, phi.half_width());
    let safe = prop.max_safe_time();
    let mut q = phi.clone();
    let mut t_prev = 0.0;
    let mut out = DecayProfile {
        times: Vec::new(),
        sup_norms: Vec::new(),
        l2_norms: Vec::new(),
        slope: f64::NAN,
        slope_band: f64::INFINITY,
        half_width: phi.half_width(),
        boundary_reach: false,
    };
    for &t in times {
        if t > safe {
            out.boundary_reach = true;
            break;
        }
        q = prop.evolve_unchecked(&q, t - t_prev);
        t_prev = t;
        out.times.push(t);
        out.sup_norms.push(q.linf_norm());
        out.l2_norms.push(q.l2_norm());
    }
    let (slope, band) = fit_power_law(&out.times, &out.sup_norms, 10.0);
    out.slope = slope;
    out.slope_band = band;
    Ok(out)
}

/// `n` logarithmically spaced times in `[t0, t1]`.
pub fn log_times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t0];
    }
    (0..n).map(|i| t0 * (t1 / t0).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Dyadic times `t0·2^k ≤ t1`, with `t1` appended if it is not already hit.
pub fn dyadic_times(t0: f64, t1: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = t0;
    while t <= t1 * (1.0 + 1e-12) {
        out.push(t);
        t *= 2.0;
    }
    if (out.last().copied().unwrap_or(0.0) - t1).abs() > 1e-9 * t1 {
        out.push(t1);
    }
    out
}

/// `q_n(t) ≈ (1/π) ∫ e^{−iEt} (g₁ K_n + g₂ J_n) ρ′ dE` with `(g₁, g₂) = S φ`.
pub fn reconstruct_evolution(phi: &LatticeState, t: f64, table: &SpectralTable) -> Result<LatticeState> {
    let grid: &SpectralGrid = table.grid();
    let h = grid.max_spacing();
    if h > std::f64::consts::PI / (8.0 * t.abs().max(1e-300)) {
        return Err(Error::Precondition(format!(
            "grid spacing {h:e} under-resolves e^(-iEt) at t = {t} (needs <= pi/(8t))"
        )));
    }
    let g = table.transform(phi);
    let phase: Vec<C64> = grid.energies().iter().map(|e| C64::new(0.0, -e * t).exp()).collect();
    Ok(table.inverse_with_weights(&g, &phase, phi.half_width()))
}
