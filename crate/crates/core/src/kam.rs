//! Finite-depth KAM reduction of the Schrödinger cocycle.
//!
//! Starting from `(ω, A₀(E) + F₀(θ))` the scheme alternates a non-resonance
//! test on the current rotation angle `ξ_j` of `A_j`, an optional resonant
//! rotation by `⟨k,θ⟩/2` (which lives on the doubled torus), and one KAM step
//! that removes the Fourier modes `0 < |k|₁ ≤ N_j` of the perturbation. After
//! `J` steps the conjugacy
//!
//! `Z_J(θ+ω)⁻¹ (A₀ + F₀(θ)) Z_J(θ) = A_J + F_J(θ)`
//!
//! holds exactly on the sampling grid, and `ρ_J = ξ_J + Σ_l ⟨k_l,ω⟩/2 (mod π)`
//! approximates the fibered rotation number.
//!
//! Everything is sampled on a `G^d` grid of the doubled torus; products and
//! inverses are pointwise, the homological equation is solved on Fourier
//! coefficients.

pub mod grid;

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    m2_det, m2_exp_traceless, m2_identity, m2_inv, m2_mul, m2_norm, m2_real, m2_sub, m2_zero, solve_complex, M2,
};
use crate::torus_freq::{dist_pi, half_resonance, modes, norm1, reduce_mod_pi, wrap_pi};
use crate::{FourierSeries, Frequency, C64, SL2};
use grid::{SparseSeries, TorusGrid, CHOP};

/// `σ`.
pub const SIGMA: f64 = 1.0 / 200.0;
/// Default floor on the truncation orders `N_j`.
pub const DEFAULT_N_MIN: usize = 20;
/// Default exponent `b` of the resonance band `ε_j^b / |k|^τ`.
pub const DEFAULT_BAND_EXPONENT: f64 = 0.5;
/// Default analyticity radius for the weighted norms.
pub const DEFAULT_RADIUS: f64 = 0.5;

/// The sequences `ε_j`, `N_j` and the numerical knobs of the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct KamSchedule {
    pub sigma: f64,
    /// `ε_0, …, ε_J` with `ε_{j+1} = ε_j^{1+σ}`.
    pub epsilon: Vec<f64>,
    /// `4^{j+1} σ |ln ε_j|` for `j < J`, before flooring.
    pub n_formula: Vec<f64>,
    /// `max(⌈N_j⌉, N_min)`.
    pub n_trunc: Vec<usize>,
    pub n_min: usize,
    /// Exponent `b` in the resonance band `ε_j^b / |k|^τ`.
    pub band_exponent: f64,
    /// Base radius `r` of the norm ladder `r_j = r(1/2 + 2^{−j−1})`.
    pub radius: f64,
    /// Grid points per coordinate of the doubled torus; 0 picks a default.
    pub grid_size: usize,
    /// Exponent of the `(3/2) ε_J^e` band near `sin ξ_J = 0`.
    pub sin_band_exponent: f64,
}

pub fn schedule(epsilon0: f64, j_max: usize, n_min: usize) -> Result<KamSchedule> {
    if !(epsilon0 > 0.0 && epsilon0 < 1.0) {
        return Err(Error::Invalid("epsilon0 must lie in (0, 1)".into()));
    }
    let mut epsilon = vec![epsilon0];
    for _ in 0..j_max {
        let e = *epsilon.last().expect("non-empty");
        epsilon.push(e.powf(1.0 + SIGMA));
    }
    let n_formula: Vec<f64> =
        (0..j_max).map(|j| 4f64.powi(j as i32 + 1) * SIGMA * epsilon[j].ln().abs()).collect();
    let n_trunc = n_formula.iter().map(|n| (n.ceil() as usize).max(n_min)).collect();
    Ok(KamSchedule {
        sigma: SIGMA,
        epsilon,
        n_formula,
        n_trunc,
        n_min,
        band_exponent: DEFAULT_BAND_EXPONENT,
        radius: DEFAULT_RADIUS,
        grid_size: 0,
        sin_band_exponent: 1.0 / 20.0,
    })
}

impl KamSchedule {
    pub fn with_band_exponent(mut self, b: f64) -> Self {
        self.band_exponent = b;
        self
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius = r;
        self
    }

    pub fn with_grid_size(mut self, g: usize) -> Self {
        self.grid_size = g;
        self
    }

    /// Number of steps the schedule supports.
    pub fn depth(&self) -> usize {
        self.n_trunc.len()
    }

    /// `r_j = r(1/2 + 2^{−j−1})`.
    pub fn radius_at(&self, j: usize) -> f64 {
        self.radius * (0.5 + 0.5f64.powi(j as i32 + 1))
    }

    fn grid_for(&self, dim: usize) -> usize {
        if self.grid_size > 0 {
            self.grid_size
        } else {
            match dim {
                1 => 256,
                2 => 64,
                _ => 16,
            }
        }
    }
}

/// Result of a resonance test.
#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    pub ok: bool,
    /// Violating mode of smallest `|k|₁` when `ok` is false.
    pub k: Option<Vec<i64>>,
}

/// `ok` iff `dist(ρ − ⟨k,ω⟩/2, πℤ) ≥ ε_j^b / |k|₁^τ` for all `0 < |k|₁ ≤ N_j`.
pub fn nonresonance_check(rho: f64, eps_j: f64, n_j: usize, freq: &Frequency, band_exponent: f64) -> Resonance {
    let band = eps_j.powf(band_exponent);
    for k in modes(freq.dim(), n_j) {
        let h = half_resonance(&k, freq).value;
        let width = band / (norm1(&k) as f64).powf(freq.tau());
        if dist_pi(rho - h) < width {
            return Resonance { ok: false, k: Some(k) };
        }
    }
    Resonance { ok: true, k: None }
}

/// Rotation angle of `A_J`: real `ξ` (elliptic) or `re + i·im` (hyperbolic,
/// `re ∈ {0, π}`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Xi {
    Real(f64),
    Imaginary { re: f64, im: f64 },
}

impl Xi {
    /// Signed angle `sign(c)·arccos(tr/2)` for `A = [[a,b],[c,d]]`.
    pub fn of(a: &SL2) -> Self {
        let t = a.trace() / 2.0;
        if t.abs() <= 1.0 {
            let x = t.acos();
            Xi::Real(if a.c < 0.0 { -x } else { x })
        } else {
            let re = if t > 0.0 { 0.0 } else { std::f64::consts::PI };
            Xi::Imaginary { re, im: t.abs().acosh() }
        }
    }

    pub fn real(&self) -> Option<f64> {
        match self {
            Xi::Real(x) => Some(*x),
            Xi::Imaginary { .. } => None,
        }
    }

    pub fn is_imaginary(&self) -> bool {
        matches!(self, Xi::Imaginary { .. })
    }

    fn base(&self) -> f64 {
        match self {
            Xi::Real(x) => *x,
            Xi::Imaginary { re, .. } => *re,
        }
    }
}

/// Bookkeeping of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub j: usize,
    pub n_trunc: usize,
    /// Weighted norm of `F` entering the homological solve (after any
    /// resonant rotation), at radius `r_j`.
    pub f_norm_before: f64,
    /// Weighted norm of `F_{j+1}` at radius `r_{j+1}`.
    pub f_norm_after: f64,
    pub min_divisor: f64,
    /// `‖F_{j+1}‖ · min_divisor / ‖F_j‖²`.
    pub contraction_constant: f64,
    pub resonance: Option<Vec<i64>>,
    pub xi: Xi,
    pub rho: f64,
}

/// State of a `J`-step reduction at one energy.
#[derive(Debug, Clone)]
pub struct ReducedCocycle {
    pub energy: f64,
    /// Number of steps performed.
    pub step: usize,
    pub a: SL2,
    /// `k_0, …, k_{J−1}`; the zero vector where no resonance was used.
    pub history: Vec<Vec<i64>>,
    pub xi: Xi,
    pub rho: f64,
    /// Sup over the test points of `‖Z(θ+ω)⁻¹(A₀+F₀(θ))Z(θ) − (A_J+F_J(θ))‖`.
    pub residual_norm: f64,
    /// Sup over the test points of `|det Z(θ) − 1|`.
    pub z_det_error: f64,
    /// Weighted norm of `F_J` at radius `r_J`.
    pub f_norm: f64,
    /// First step that needed a resonant rotation, plus one; 0 if none.
    pub layer: usize,
    pub steps: Vec<StepRecord>,
    v: FourierSeries,
    freq: Frequency,
    grid: Arc<TorusGrid>,
    radius: f64,
    f_vals: Vec<M2>,
    z_vals: Vec<M2>,
    f_series: SparseSeries,
    z_series: SparseSeries,
}

fn to_m2(a: &SL2) -> M2 {
    m2_real(a.a, a.b, a.c, a.d)
}

fn real_part(x: &M2) -> M2 {
    m2_real(x[0][0].re, x[0][1].re, x[1][0].re, x[1][1].re)
}

fn rotation_m2(x: f64) -> M2 {
    m2_real(x.cos(), -x.sin(), x.sin(), x.cos())
}

fn dot(k: &[i64], theta: &[f64]) -> f64 {
    k.iter().zip(theta).map(|(a, t)| *a as f64 * t).sum()
}

/// `ρ_J` from the angle and the resonance history.
fn rho_of(xi: &Xi, history: &[Vec<i64>], freq: &Frequency) -> f64 {
    let pi = std::f64::consts::PI;
    let base = xi.base();
    if history.iter().all(|k| k.iter().all(|x| *x == 0)) {
        return if base < 0.0 { base + pi } else { base.min(pi) };
    }
    let s: f64 = history.iter().map(|k| freq.dot(k) / 2.0).sum();
    reduce_mod_pi(base + s)
}

/// 64 test points on the doubled torus, off the sampling grid.
pub fn test_points(dim: usize) -> Vec<Vec<f64>> {
    let four_pi = 4.0 * std::f64::consts::PI;
    let alphas = [0.0, 2f64.sqrt(), 3f64.sqrt(), 5f64.sqrt(), 7f64.sqrt()];
    (0..64)
        .map(|i| {
            let s = i as f64 + 0.5;
            (0..dim)
                .map(|c| if c == 0 { four_pi * s / 64.0 } else { four_pi * (s * alphas[c % 5]).fract() })
                .collect()
        })
        .collect()
}

impl ReducedCocycle {
    /// The unreduced cocycle `A = A₀(E)`, `F = F₀`, `Z = I`.
    pub fn initial(e: f64, v: &FourierSeries, freq: &Frequency, schedule: &KamSchedule) -> Result<Self> {
        if v.dim() != freq.dim() {
            return Err(Error::Invalid("potential and frequency dimensions differ".into()));
        }
        let grid = Arc::new(TorusGrid::new(freq.dim(), schedule.grid_for(freq.dim())));
        let f_vals: Vec<M2> = (0..grid.len())
            .map(|i| m2_real(v.eval(&grid.point(i)), 0.0, 0.0, 0.0))
            .collect();
        let a = SL2::new(-e, -1.0, 1.0, 0.0);
        let xi = Xi::of(&a);
        let mut s = Self {
            energy: e,
            step: 0,
            a,
            history: Vec::new(),
            xi,
            rho: 0.0,
            residual_norm: 0.0,
            z_det_error: 0.0,
            f_norm: 0.0,
            layer: 0,
            steps: Vec::new(),
            v: v.clone(),
            freq: freq.clone(),
            z_vals: vec![m2_identity(); grid.len()],
            grid,
            radius: schedule.radius_at(0),
            f_vals,
            f_series: SparseSeries::default(),
            z_series: SparseSeries::default(),
        };
        s.refresh();
        Ok(s)
    }

    pub fn frequency(&self) -> &Frequency {
        &self.freq
    }

    pub fn potential(&self) -> &FourierSeries {
        &self.v
    }

    /// `F_J` as a sparse Fourier series (half-unit modes).
    pub fn f_series(&self) -> &SparseSeries {
        &self.f_series
    }

    /// `Z_J` as a sparse Fourier series (half-unit modes).
    pub fn z_series(&self) -> &SparseSeries {
        &self.z_series
    }

    /// `Z_J(θ)`, real part.
    pub fn z_at(&self, theta: &[f64]) -> M2 {
        real_part(&self.z_series.eval(theta))
    }

    /// `F_J(θ)`, real part.
    pub fn f_at(&self, theta: &[f64]) -> M2 {
        real_part(&self.f_series.eval(theta))
    }

    /// Sum of `⟨k_l,ω⟩/2` over the history (not reduced).
    pub fn resonance_shift(&self) -> f64 {
        self.history.iter().map(|k| self.freq.dot(k) / 2.0).sum()
    }

    fn refresh(&mut self) {
        let fc = self.grid.forward(&self.f_vals);
        self.f_series = self.grid.sparse(&fc);
        let zc = self.grid.forward(&self.z_vals);
        self.z_series = self.grid.sparse(&zc);
        self.f_norm = self.f_series.weighted_norm(self.radius);
        self.xi = Xi::of(&self.a);
        self.rho = rho_of(&self.xi, &self.history, &self.freq);
    }

    /// Sup-norm conjugacy defect and `det Z` error over `points`.
    pub fn conjugacy_residual(&self, points: &[Vec<f64>]) -> (f64, f64) {
        let a = to_m2(&self.a);
        let mut res = 0.0f64;
        let mut det_err = 0.0f64;
        for th in points {
            let z = self.z_at(th);
            let shifted: Vec<f64> = th.iter().zip(self.freq.omega()).map(|(t, w)| t + w).collect();
            let zs = self.z_at(&shifted);
            let m0 = m2_real(-self.energy + self.v.eval(th), -1.0, 1.0, 0.0);
            let lhs = m2_mul(&m2_mul(&m2_inv(&zs), &m0), &z);
            let rhs = crate::linalg::m2_add(&a, &self.f_at(th));
            res = res.max(m2_norm(&m2_sub(&lhs, &rhs)));
            det_err = det_err.max((m2_det(&z).re - 1.0).abs());
        }
        (res, det_err)
    }

    fn update_residual(&mut self) {
        let (r, d) = self.conjugacy_residual(&test_points(self.freq.dim()));
        self.residual_norm = r;
        self.z_det_error = d;
    }

    /// Recomputes `A` and `F` from scratch: `G = Z(·+ω)⁻¹ (A₀+F₀) Z`,
    /// `A = mean(G)/√det`, `F = G − A` projected on integer modes.
    fn recompute(&mut self) -> Result<()> {
        let g = &self.grid;
        let zc = g.forward(&self.z_vals);
        let zs = g.backward(&g.shift(&zc, self.freq.omega()));
        let gv: Vec<M2> = (0..g.len())
            .map(|i| {
                let th = g.point(i);
                let m0 = m2_real(-self.energy + self.v.eval(&th), -1.0, 1.0, 0.0);
                real_part(&m2_mul(&m2_mul(&m2_inv(&zs[i]), &m0), &self.z_vals[i]))
            })
            .collect();
        let mut gc = g.forward(&gv);
        let mean = real_part(&gc[0]);
        let det = m2_det(&mean).re;
        if !(det > 0.0) {
            return Err(Error::Contract(format!("constant part lost unimodularity (det = {det:e})")));
        }
        let s = det.sqrt();
        self.a = SL2::new(mean[0][0].re / s, mean[0][1].re / s, mean[1][0].re / s, mean[1][1].re / s);
        let a = to_m2(&self.a);
        for (idx, c) in gc.iter_mut().enumerate() {
            let m = g.mode(idx);
            if m.iter().any(|x| x % 2 != 0) || m2_norm(c) < CHOP {
                *c = m2_zero();
            }
        }
        gc[0] = m2_sub(&gc[0], &a);
        self.f_vals = g.backward(&gc).iter().map(real_part).collect();
        Ok(())
    }
}

/// Divisors `|1 − e^{i⟨k,ω⟩} μ_b/μ_a|` of the homological operator, `μ`
/// the eigenvalues of `A`.
fn divisors(a: &SL2, phase: C64) -> f64 {
    let t = C64::new(a.trace() / 2.0, 0.0);
    let s = (t * t - 1.0).sqrt();
    let (m1, m2) = (t + s, t - s);
    let one = C64::new(1.0, 0.0);
    [(one - phase).norm(), (one - phase * m1 / m2).norm(), (one - phase * m2 / m1).norm()]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// One KAM step at level `j`.
///
/// With `Gₖ` the coefficients of `A⁻¹F`, the traceless `Wₖ` solves
/// `Wₖ − e^{i⟨k,ω⟩} A⁻¹ Wₖ A = −Gₖ` for `0 < |k|₁ ≤ N_j` (a 4×4 linear system
/// per mode, equivalent to the eigenbasis divisors `e^{i⟨k,ω⟩}e^{±2iξ} − 1`
/// and `e^{i⟨k,ω⟩} − 1` but stable near parabolic `A`). Then
/// `Z ← Z·exp(W)` and `A`, `F` are recomputed from the original cocycle.
pub fn kam_step(state: &ReducedCocycle, schedule: &KamSchedule, j: usize) -> Result<ReducedCocycle> {
    let n = *schedule
        .n_trunc
        .get(j)
        .ok_or_else(|| Error::Invalid(format!("schedule has no level {j}")))?;
    let mut s = state.clone();
    let f_before = s.f_series.weighted_norm(schedule.radius_at(j));
    let resonance = s.history.get(j).filter(|k| k.iter().any(|x| *x != 0)).cloned();
    let mut min_div = f64::INFINITY;
    if !s.f_series.is_zero() {
        let g = s.grid.clone();
        let a = to_m2(&s.a);
        let ainv = m2_inv(&a);
        let gv: Vec<M2> = s.f_vals.iter().map(|f| m2_mul(&ainv, f)).collect();
        let gc = g.forward(&gv);
        let mut wc = vec![m2_zero(); g.len()];
        for (idx, gk) in gc.iter().enumerate() {
            let m = g.mode(idx);
            if m.iter().any(|x| x % 2 != 0) {
                continue;
            }
            let k: Vec<i64> = m.iter().map(|x| x / 2).collect();
            let k1 = norm1(&k);
            if k1 == 0 || k1 as usize > n || m2_norm(gk) < CHOP {
                continue;
            }
            let phase = C64::new(0.0, s.freq.dot(&k)).exp();
            let div = divisors(&s.a, phase);
            if div < 1e-14 {
                return Err(Error::SmallDivisor { step: j, k, divisor: div });
            }
            min_div = min_div.min(div);
            let half_tr = (gk[0][0] + gk[1][1]) / 2.0;
            let rhs = [-(gk[0][0] - half_tr), -gk[0][1], -gk[1][0], -(gk[1][1] - half_tr)];
            // row (i,j), column (p,q): δ − phase·Ainv[i][p]·A[q][j]
            let mut l = vec![C64::new(0.0, 0.0); 16];
            for (r, (i, jj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                for (c, (p, q)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let delta = if r == c { 1.0 } else { 0.0 };
                    l[r * 4 + c] = C64::new(delta, 0.0) - phase * ainv[i][p] * a[q][jj];
                }
            }
            let mut b = rhs;
            solve_complex(&mut l, &mut b, 4);
            wc[idx] = [[b[0], b[1]], [b[2], b[3]]];
        }
        let wv = g.backward(&wc);
        for (z, w) in s.z_vals.iter_mut().zip(&wv) {
            let w = real_part(w);
            *z = real_part(&m2_mul(z, &m2_exp_traceless(&w)));
        }
        s.recompute()?;
    }
    s.step = j + 1;
    s.radius = schedule.radius_at(j + 1);
    s.refresh();
    s.update_residual();
    let contraction_constant = if f_before > 0.0 { s.f_norm * min_div / (f_before * f_before) } else { 0.0 };
    s.steps.push(StepRecord {
        j,
        n_trunc: n,
        f_norm_before: f_before,
        f_norm_after: s.f_norm,
        min_divisor: min_div,
        contraction_constant,
        resonance,
        xi: s.xi,
        rho: s.rho,
    });
    Ok(s)
}

/// Real `P` with `det P = 1` and `P⁻¹ A P = R(ξ)` for elliptic `A`.
fn rotation_frame(a: &SL2, xi: f64) -> Result<M2> {
    let det = a.c * xi.sin();
    if !(det > 0.0) {
        return Err(Error::Contract("constant part is not elliptic".into()));
    }
    let s = det.sqrt();
    Ok(m2_real((xi.cos() - a.d) / s, -xi.sin() / s, a.c / s, 0.0))
}

/// Conjugation by `P·R(⟨k,θ⟩/2)`, which moves `ξ` to `ξ − ⟨k,ω⟩/2`, then a
/// resonance test of the new angle at level `j`.
pub fn resonant_rotation(state: &ReducedCocycle, k: &[i64], schedule: &KamSchedule, j: usize) -> Result<ReducedCocycle> {
    let mut s = state.clone();
    if k.iter().all(|x| *x == 0) {
        return Ok(s);
    }
    let xi = s.xi.real().ok_or_else(|| Error::Precondition("resonant rotation needs a real angle".into()))?;
    let p = rotation_frame(&s.a, xi)?;
    let pinv = m2_inv(&p);
    let kw = s.freq.dot(k);
    let g = s.grid.clone();
    for i in 0..g.len() {
        let th = g.point(i);
        let x = dot(k, &th) / 2.0;
        let r = rotation_m2(x);
        let r_back = rotation_m2(-x - kw / 2.0);
        let f = m2_mul(&m2_mul(&pinv, &s.f_vals[i]), &p);
        s.f_vals[i] = real_part(&m2_mul(&m2_mul(&r_back, &f), &r));
        s.z_vals[i] = real_part(&m2_mul(&m2_mul(&s.z_vals[i], &p), &r));
    }
    let new_xi = xi - kw / 2.0;
    s.a = SL2::rotation(new_xi);
    s.history.push(k.to_vec());
    if s.layer == 0 {
        s.layer = j + 1;
    }
    s.refresh();
    if let (Some(&eps), Some(&n)) = (schedule.epsilon.get(j), schedule.n_trunc.get(j)) {
        let chk = nonresonance_check(wrap_pi(new_xi), eps, n, &s.freq, schedule.band_exponent);
        if let Some(k2) = chk.k {
            return Err(Error::DoubleResonance { step: j, k: k2 });
        }
    }
    Ok(s)
}

/// `J` alternations of resonance test, optional resonant rotation and KAM step.
pub fn reduce(e: f64, v: &FourierSeries, freq: &Frequency, schedule: &KamSchedule, j_max: usize) -> Result<ReducedCocycle> {
    if j_max > schedule.depth() {
        return Err(Error::Invalid(format!("schedule supports {} steps, {} requested", schedule.depth(), j_max)));
    }
    let mut s = ReducedCocycle::initial(e, v, freq, schedule)?;
    for j in 0..j_max {
        let mut rotated = false;
        if !s.f_series.is_zero() {
            if let Some(xi) = s.xi.real() {
                let chk = nonresonance_check(xi, schedule.epsilon[j], schedule.n_trunc[j], freq, schedule.band_exponent);
                if let Some(k) = chk.k {
                    s = resonant_rotation(&s, &k, schedule, j)?;
                    rotated = true;
                }
            }
        }
        if !rotated {
            s.history.push(vec![0; freq.dim()]);
        }
        s = kam_step(&s, schedule, j)?;
    }
    if j_max == 0 {
        s.update_residual();
    }
    Ok(s)
}

/// One grid cell of a spectral partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionCell {
    pub energy: f64,
    /// `None` when the reduction aborted.
    pub layer: Option<usize>,
    pub xi: Option<Xi>,
    pub rho: Option<f64>,
    pub history: Vec<Vec<i64>>,
}

/// Maximal run of cells sharing a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionInterval {
    pub lo: f64,
    pub hi: f64,
    pub layer: Option<usize>,
    /// Real `ξ_J` is non-decreasing across neighbouring cells with the same
    /// history.
    pub xi_monotone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPartition {
    pub cells: Vec<PartitionCell>,
    pub intervals: Vec<PartitionInterval>,
    pub component_count: usize,
    /// `|ln ε₀|^{2J²d}`.
    pub component_bound: f64,
}

/// Labels every energy of `e_grid` with the layer of its reduction and
/// merges equal neighbours into intervals.
pub fn partition_spectrum(
    v: &FourierSeries,
    freq: &Frequency,
    schedule: &KamSchedule,
    j_max: usize,
    e_grid: &[f64],
) -> Result<SpectralPartition> {
    if e_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("energy grid must be strictly increasing".into()));
    }
    if j_max > schedule.depth() {
        return Err(Error::Invalid("schedule too short".into()));
    }
    let cells: Vec<PartitionCell> = e_grid
        .par_iter()
        .map(|&e| match reduce(e, v, freq, schedule, j_max) {
            Ok(s) => PartitionCell { energy: e, layer: Some(s.layer), xi: Some(s.xi), rho: Some(s.rho), history: s.history },
            Err(_) => PartitionCell { energy: e, layer: None, xi: None, rho: None, history: Vec::new() },
        })
        .collect();
    let edge = |i: usize| -> f64 {
        if i == 0 {
            e_grid[0]
        } else if i == e_grid.len() {
            e_grid[e_grid.len() - 1]
        } else {
            0.5 * (e_grid[i - 1] + e_grid[i])
        }
    };
    let mut intervals: Vec<PartitionInterval> = Vec::new();
    let mut start = 0;
    for i in 1..=cells.len() {
        if i == cells.len() || cells[i].layer != cells[start].layer {
            let mut mono = true;
            for w in cells[start..i].windows(2) {
                if let (Some(Xi::Real(a)), Some(Xi::Real(b))) = (w[0].xi, w[1].xi) {
                    if w[0].history == w[1].history && b < a {
                        mono = false;
                    }
                }
            }
            intervals.push(PartitionInterval { lo: edge(start), hi: edge(i), layer: cells[start].layer, xi_monotone: mono });
            start = i;
        }
    }
    let component_bound = schedule.epsilon[0].ln().abs().powf((2 * j_max * j_max * freq.dim()) as f64);
    Ok(SpectralPartition { component_count: intervals.len(), cells, intervals, component_bound })
}

/// Finite-difference checks of `ξ_J′ = −(tr A_J)′/(2 sin ξ_J)` at the centre
/// of an energy stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct XiDiagnostics {
    pub energy: f64,
    pub xi: f64,
    pub xi_prime: f64,
    pub xi_second: f64,
    pub trace_prime: f64,
    /// `|ξ′ + (tr A)′/(2 sin ξ)|`.
    pub identity_error: f64,
    /// `ξ′ > 1/3`.
    pub window_ok: bool,
    /// `|sin ξ| ≤ (3/2) ε_J^{e}` (the excluded edge band).
    pub near_edge: bool,
    pub edge_band: f64,
}

pub fn xi_derivative_diagnostics(states: &[ReducedCocycle], schedule: &KamSchedule) -> Result<XiDiagnostics> {
    if states.len() < 5 {
        return Err(Error::Invalid("stencil needs at least 5 energies".into()));
    }
    let c = states.len() / 2;
    let h = states[c + 1].energy - states[c].energy;
    for w in states.windows(2) {
        if ((w[1].energy - w[0].energy) - h).abs() > 1e-9 * h.abs().max(1e-300) {
            return Err(Error::Invalid("stencil must be equally spaced".into()));
        }
        if w[0].history != w[1].history || w[0].step != w[1].step {
            return Err(Error::Invalid("stencil crosses a partition component boundary".into()));
        }
    }
    let xs: Vec<f64> = states
        .iter()
        .map(|s| s.xi.real().ok_or_else(|| Error::Invalid("stencil contains a gap energy".into())))
        .collect::<Result<_>>()?;
    let tr: Vec<f64> = states.iter().map(|s| s.a.trace()).collect();
    let d1 = |f: &[f64]| (f[c - 2] - 8.0 * f[c - 1] + 8.0 * f[c + 1] - f[c + 2]) / (12.0 * h);
    let xi_prime = d1(&xs);
    let trace_prime = d1(&tr);
    let xi_second = (xs[c + 1] - 2.0 * xs[c] + xs[c - 1]) / (h * h);
    let xi = xs[c];
    let eps_j = schedule.epsilon[states[c].step.min(schedule.epsilon.len() - 1)];
    let edge_band = 1.5 * eps_j.powf(schedule.sin_band_exponent);
    Ok(XiDiagnostics {
        energy: states[c].energy,
        xi,
        xi_prime,
        xi_second,
        trace_prime,
        identity_error: (xi_prime + trace_prime / (2.0 * xi.sin())).abs(),
        window_ok: xi_prime > 1.0 / 3.0,
        near_edge: xi.sin().abs() <= edge_band,
        edge_band,
    })
}
