//! Frequency vectors on `(ℝ/2πℤ)^d`, the Diophantine margin and half-resonances.
//!
//! A frequency `ω` is Diophantine with constants `(γ, τ)` when
//! `|⟨k,ω⟩ − jπ| > γ / |k|^τ` for every `k ≠ 0` and every integer `j`.
//! Only a finite prefix `0 < |k|₁ ≤ K` can be checked; the constructor does
//! that for `K = K_check` and rejects anything that fails.

use crate::error::{Error, Result};
use crate::Real;

/// Default number of modes checked at construction.
pub const DEFAULT_K_CHECK: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Frequency<T> {
    omega: Vec<T>,
    gamma: T,
    tau: T,
}

/// `⟨k,ω⟩/2` reduced into `[0, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfResonance<T> {
    pub k: Vec<i64>,
    pub value: T,
}

impl<T: Real> Frequency<T> {
    /// Checked constructor using [`DEFAULT_K_CHECK`].
    pub fn new(omega: Vec<T>, gamma: T, tau: T) -> Result<Self> {
        Self::with_check(omega, gamma, tau, DEFAULT_K_CHECK)
    }

    /// Checked constructor: `γ > 0`, `τ > d − 1` and margin `≥ γ` up to `k_check`.
    pub fn with_check(omega: Vec<T>, gamma: T, tau: T, k_check: usize) -> Result<Self> {
        let f = Self::unchecked(omega, gamma, tau)?;
        if k_check > 0 {
            let (margin, k) = diophantine_margin(&f, k_check);
            if margin < f.gamma {
                return Err(Error::Resonant { k, margin: margin.to_f64().unwrap_or(f64::NAN) });
            }
        }
        Ok(f)
    }

    /// Validates `γ` and `τ` only; the Diophantine prefix is not checked.
    pub fn unchecked(omega: Vec<T>, gamma: T, tau: T) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Invalid("frequency must have d >= 1".into()));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid("frequency components must be finite".into()));
        }
        if !(gamma > T::zero()) {
            return Err(Error::Invalid("gamma must be positive".into()));
        }
        let d1 = T::of((omega.len() - 1) as f64);
        if !(tau > d1) {
            return Err(Error::Invalid(format!("tau must exceed d-1 = {}", d1)));
        }
        Ok(Self { omega, gamma, tau })
    }

    /// `d = 1`, `ω = 2π(√5−1)/2`, `γ = 1/2`, `τ = 1`.
    pub fn golden() -> Self {
        let g = (T::of(5.0).sqrt() - T::one()) / T::of(2.0);
        Self::new(vec![T::TAU() * g], T::of(0.5), T::one()).expect("golden frequency is Diophantine")
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[T] {
        &self.omega
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// `⟨k, ω⟩`.
    pub fn dot(&self, k: &[i64]) -> T {
        debug_assert_eq!(k.len(), self.omega.len());
        k.iter()
            .zip(&self.omega)
            .fold(T::zero(), |acc, (&ki, &w)| acc + T::of(ki as f64) * w)
    }
}

/// Nearest integer to `x`, ties going to the smaller one.
fn round_half_down<T: Real>(x: T) -> T {
    let f = x.floor();
    if x - f > T::of(0.5) {
        f + T::one()
    } else {
        f
    }
}

/// `x` reduced into `[0, π)`.
pub fn reduce_mod_pi<T: Real>(x: T) -> T {
    let pi = T::PI();
    let r = x - pi * (x / pi).floor();
    if r >= pi || r < T::zero() {
        T::zero()
    } else {
        r
    }
}

/// Signed representative of `x` modulo `π` in `[−π/2, π/2]`.
pub fn wrap_pi<T: Real>(x: T) -> T {
    let pi = T::PI();
    x - pi * round_half_down(x / pi)
}

/// `dist(x, πℤ)`.
pub fn dist_pi<T: Real>(x: T) -> T {
    wrap_pi(x).abs()
}

/// `|k|₁`.
pub fn norm1(k: &[i64]) -> i64 {
    k.iter().map(|x| x.abs()).sum()
}

/// All `k ∈ ℤ^d` with `0 < |k|₁ ≤ kmax`, ordered by `|k|₁` and then
/// lexicographically.
pub fn modes(d: usize, kmax: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for n in 1..=kmax as i64 {
        shell(d, n, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

fn shell(d: usize, remaining: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
    if prefix.len() + 1 == d {
        for v in [-remaining, remaining] {
            prefix.push(v);
            out.push(prefix.clone());
            prefix.pop();
            if remaining == 0 {
                break;
            }
        }
        return;
    }
    for v in -remaining..=remaining {
        prefix.push(v);
        shell(d, remaining - v.abs(), prefix, out);
        prefix.pop();
    }
}

/// `⟨k,ω⟩/2 mod π` in `[0, π)`.
pub fn half_resonance<T: Real>(k: &[i64], freq: &Frequency<T>) -> HalfResonance<T> {
    HalfResonance { k: k.to_vec(), value: reduce_mod_pi(freq.dot(k) / T::of(2.0)) }
}

/// `min_{0<|k|₁≤K} |k|₁^τ · dist(⟨k,ω⟩, πℤ)` and a minimiser (the first one
/// in [`modes`] order).
pub fn diophantine_margin<T: Real>(freq: &Frequency<T>, kmax: usize) -> (T, Vec<i64>) {
    let mut best = T::infinity();
    let mut arg = vec![0; freq.dim()];
    for k in modes(freq.dim(), kmax) {
        let n = T::of(norm1(&k) as f64);
        let m = n.powf(freq.tau) * dist_pi(freq.dot(&k));
        if m < best {
            best = m;
            arg = k;
        }
    }
    (best, arg)
}
