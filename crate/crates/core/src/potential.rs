//! Real-analytic potentials on the torus as finite Fourier series.
//!
//! `V(θ) = Σ_k c_k e^{i⟨k,θ⟩}` with `c_{−k} = conj(c_k)`, so `V` is real on
//! real `θ`. The analytic norm on the strip `|Im θ| < r` is bounded by the
//! computable weight sum `Σ_k |c_k| e^{r|k|₁}`.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::torus_freq::{modes, norm1, Frequency};
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries<T> {
    dim: usize,
    /// Sorted by mode; absent modes are zero.
    coef: Vec<(Vec<i64>, Complex<T>)>,
}

impl<T: Real> FourierSeries<T> {
    /// Builds a series from `(k, c_k)` pairs. Repeated modes are summed.
    /// Fails if the table is not conjugate-symmetric.
    pub fn new(dim: usize, entries: Vec<(Vec<i64>, Complex<T>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        let mut coef: Vec<(Vec<i64>, Complex<T>)> = Vec::with_capacity(entries.len());
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (k, c) in entries {
            if k.len() != dim {
                return Err(Error::Invalid(format!("mode {:?} has wrong dimension", k)));
            }
            match coef.last_mut() {
                Some((kk, cc)) if *kk == k => *cc += c,
                _ => coef.push((k, c)),
            }
        }
        let s = Self { dim, coef };
        let scale = s.coef.iter().fold(T::zero(), |m, (_, c)| m.max(c.norm()));
        let tol = T::of(1e-12) * scale.max(T::one());
        for (k, c) in &s.coef {
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            if (s.coefficient(&neg) - c.conj()).norm() > tol {
                return Err(Error::Invalid(format!("coefficient table is not real at mode {:?}", k)));
            }
        }
        Ok(s)
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, coef: Vec::new() }
    }

    /// The constant function `c`.
    pub fn constant(dim: usize, c: T) -> Self {
        Self { dim, coef: vec![(vec![0; dim], Complex::new(c, T::zero()))] }
    }

    /// `2ε cos θ₁` on the `dim`-torus.
    pub fn cosine(dim: usize, eps: T) -> Self {
        let mut e = vec![0; dim];
        e[0] = 1;
        let m: Vec<i64> = e.iter().map(|x| -x).collect();
        let c = Complex::new(eps, T::zero());
        Self::new(dim, vec![(e, c), (m, c)]).expect("cosine table is real")
    }

    /// Random real-analytic potential with modes `|k|₁ ≤ kmax` and
    /// coefficients decaying like `e^{−2r|k|₁}`, scaled so that
    /// `analytic_norm_bound(r) = eps`. The constant mode is left at zero.
    pub fn random_analytic(dim: usize, eps: T, r: T, kmax: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for k in modes(dim, kmax) {
            // keep one representative of each ±k pair
            if k.iter().find(|&&x| x != 0).copied().unwrap_or(0) < 0 {
                continue;
            }
            let w = (-r * T::of(norm1(&k) as f64)).exp();
            let re = T::of(rng.gen_range(-1.0..1.0));
            let im = T::of(rng.gen_range(-1.0..1.0));
            let c = Complex::new(re, im) * w * w;
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            entries.push((k, c));
            entries.push((neg, c.conj()));
        }
        let s = Self::new(dim, entries).expect("symmetric by construction");
        let b = s.analytic_norm_bound(r);
        if b > T::zero() {
            s.scaled(eps / b)
        } else {
            s
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.coef.iter().all(|(_, c)| c.norm() == T::zero())
    }

    pub fn coefficients(&self) -> &[(Vec<i64>, Complex<T>)] {
        &self.coef
    }

    pub fn coefficient(&self, k: &[i64]) -> Complex<T> {
        match self.coef.binary_search_by(|(kk, _)| kk.as_slice().cmp(k)) {
            Ok(i) => self.coef[i].1,
            Err(_) => Complex::new(T::zero(), T::zero()),
        }
    }

    /// Largest `|k|₁` in the table.
    pub fn max_mode(&self) -> i64 {
        self.coef.iter().map(|(k, _)| norm1(k)).max().unwrap_or(0)
    }

    pub fn scaled(&self, a: T) -> Self {
        Self { dim: self.dim, coef: self.coef.iter().map(|(k, c)| (k.clone(), *c * a)).collect() }
    }

    /// `Σ_k c_k e^{i⟨k,θ⟩}` (complex; the imaginary part is rounding noise).
    pub fn eval_complex(&self, theta: &[T]) -> Complex<T> {
        debug_assert_eq!(theta.len(), self.dim);
        let mut s = Complex::new(T::zero(), T::zero());
        for (k, c) in &self.coef {
            let ph = k.iter().zip(theta).fold(T::zero(), |a, (&ki, &t)| a + T::of(ki as f64) * t);
            s += *c * Complex::new(ph.cos(), ph.sin());
        }
        s
    }

    /// `V(θ)`.
    pub fn eval(&self, theta: &[T]) -> T {
        self.eval_complex(theta).re
    }

    /// `V(θ + nω)` for `n = lo..=hi`.
    pub fn orbit(&self, theta: &[T], freq: &Frequency<T>, lo: i64, hi: i64) -> Vec<T> {
        let w = freq.omega();
        let mut th = vec![T::zero(); self.dim];
        (lo..=hi)
            .map(|n| {
                for i in 0..self.dim {
                    th[i] = theta[i] + T::of(n as f64) * w[i];
                }
                self.eval(&th)
            })
            .collect()
    }

    /// `Σ_k |c_k| e^{r|k|₁}`.
    pub fn analytic_norm_bound(&self, r: T) -> T {
        self.coef
            .iter()
            .fold(T::zero(), |a, (k, c)| a + c.norm() * (r * T::of(norm1(k) as f64)).exp())
    }

    /// `Σ_k |c_k|`, an upper bound for `sup |V|` on the real torus.
    pub fn sup_bound(&self) -> T {
        self.coef.iter().fold(T::zero(), |a, (_, c)| a + c.norm())
    }

    /// Series of `θ ↦ V(θ + δ)`.
    pub fn shifted(&self, delta: &[T]) -> Self {
        let coef = self
            .coef
            .iter()
            .map(|(k, c)| {
                let ph = k.iter().zip(delta).fold(T::zero(), |a, (&ki, &t)| a + T::of(ki as f64) * t);
                (k.clone(), *c * Complex::new(ph.cos(), ph.sin()))
            })
            .collect();
        Self { dim: self.dim, coef }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_real_tables() {
        let c = Complex::new(1.0, 0.5);
        assert!(FourierSeries::new(1, vec![(vec![1], c)]).is_err());
        assert!(FourierSeries::new(1, vec![(vec![1], c), (vec![-1], c.conj())]).is_ok());
        assert!(FourierSeries::new(1, vec![(vec![0], Complex::new(1.0, 1.0))]).is_err());
    }

    #[test]
    fn duplicate_modes_are_summed() {
        let one = Complex::new(1.0, 0.0);
        let s = FourierSeries::new(1, vec![(vec![0], one), (vec![0], one)]).unwrap();
        assert_eq!(s.coefficient(&[0]), Complex::new(2.0, 0.0));
        assert_eq!(s.coefficients().len(), 1);
    }

    #[test]
    fn random_series_is_normalised_and_deterministic() {
        let a = FourierSeries::<f64>::random_analytic(2, 0.01, 0.5, 4, 7);
        let b = FourierSeries::<f64>::random_analytic(2, 0.01, 0.5, 4, 7);
        assert_eq!(a, b);
        assert!((a.analytic_norm_bound(0.5) - 0.01).abs() < 1e-15);
        assert_eq!(a.coefficient(&[0, 0]), Complex::new(0.0, 0.0));
    }

    #[test]
    fn orbit_matches_pointwise_eval() {
        let f = Frequency::<f64>::golden();
        let v = FourierSeries::cosine(1, 0.3);
        let o = v.orbit(&[0.2], &f, -3, 3);
        for (i, n) in (-3..=3).enumerate() {
            let th = 0.2 + n as f64 * f.omega()[0];
            assert!((o[i] - 0.6 * th.cos()).abs() < 1e-14);
        }
    }
}
