//! Matrix-valued functions sampled on the doubled torus `(ℝ/4πℤ)^d`.
//!
//! A function is stored by its values at `θ = 4π i / G` per coordinate and
//! expanded as `Σ_m c_m e^{i⟨m,θ⟩/2}` with half-unit modes `m ∈ [−G/2, G/2)^d`.
//! Functions on the ordinary torus have only even `m`.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::linalg::{m2_norm, m2_zero, M2};
use crate::C64;

/// Coefficients with operator norm below this are treated as rounding noise.
pub const CHOP: f64 = 1e-14;

pub struct TorusGrid {
    dim: usize,
    size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusGrid").field("dim", &self.dim).field("size", &self.size).finish()
    }
}

impl TorusGrid {
    pub fn new(dim: usize, size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { dim, size, fwd: planner.plan_fft_forward(size), inv: planner.plan_fft_inverse(size) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    fn digits(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for slot in out.iter_mut().rev() {
            *slot = idx % self.size;
            idx /= self.size;
        }
        out
    }

    /// Grid point with flat index `idx` (last coordinate fastest).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = 4.0 * std::f64::consts::PI / self.size as f64;
        self.digits(idx).into_iter().map(|i| h * i as f64).collect()
    }

    /// Signed half-unit mode of coefficient slot `idx`.
    pub fn mode(&self, idx: usize) -> Vec<i64> {
        let g = self.size as i64;
        self.digits(idx)
            .into_iter()
            .map(|i| {
                let i = i as i64;
                if i >= g / 2 {
                    i - g
                } else {
                    i
                }
            })
            .collect()
    }

    /// Slot of half-unit mode `m`, if representable.
    pub fn slot(&self, m: &[i64]) -> Option<usize> {
        let g = self.size as i64;
        let mut idx = 0usize;
        for &x in m {
            if x < -g / 2 || x >= g / 2 {
                return None;
            }
            idx = idx * self.size + x.rem_euclid(g) as usize;
        }
        Some(idx)
    }

    fn transform(&self, data: &mut [C64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let g = self.size;
        let total = self.len();
        let mut buf = vec![C64::new(0.0, 0.0); g];
        for axis in 0..self.dim {
            let stride = g.pow((self.dim - 1 - axis) as u32);
            for base in 0..total {
                if (base / stride) % g != 0 {
                    continue;
                }
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = data[base + i * stride];
                }
                plan.process(&mut buf);
                for (i, b) in buf.iter().enumerate() {
                    data[base + i * stride] = *b;
                }
            }
        }
    }

    /// Values → coefficients.
    pub fn forward(&self, vals: &[M2]) -> Vec<M2> {
        let scale = 1.0 / self.len() as f64;
        self.map_entries(vals, false, scale)
    }

    /// Coefficients → values.
    pub fn backward(&self, coefs: &[M2]) -> Vec<M2> {
        self.map_entries(coefs, true, 1.0)
    }

    fn map_entries(&self, input: &[M2], inverse: bool, scale: f64) -> Vec<M2> {
        let mut out = vec![m2_zero(); input.len()];
        let mut buf = vec![C64::new(0.0, 0.0); input.len()];
        for i in 0..2 {
            for j in 0..2 {
                for (b, x) in buf.iter_mut().zip(input) {
                    *b = x[i][j];
                }
                self.transform(&mut buf, inverse);
                for (o, b) in out.iter_mut().zip(&buf) {
                    o[i][j] = b * scale;
                }
            }
        }
        out
    }

    /// Coefficients of `θ ↦ X(θ + ω)` given those of `X`.
    pub fn shift(&self, coefs: &[M2], omega: &[f64]) -> Vec<M2> {
        coefs
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let m = self.mode(idx);
                let ph: f64 = m.iter().zip(omega).map(|(a, w)| *a as f64 * w / 2.0).sum();
                let z = C64::new(0.0, ph).exp();
                [[c[0][0] * z, c[0][1] * z], [c[1][0] * z, c[1][1] * z]]
            })
            .collect()
    }

    /// Sparse list of the coefficients above [`CHOP`].
    pub fn sparse(&self, coefs: &[M2]) -> SparseSeries {
        let terms = coefs
            .iter()
            .enumerate()
            .filter(|(_, c)| m2_norm(c) >= CHOP)
            .map(|(idx, c)| (self.mode(idx), *c))
            .collect();
        SparseSeries { terms }
    }
}

/// Matrix Fourier series on the doubled torus in half-unit modes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSeries {
    pub terms: Vec<(Vec<i64>, M2)>,
}

impl SparseSeries {
    /// `Σ_m c_m e^{i⟨m,θ⟩/2}`.
    pub fn eval(&self, theta: &[f64]) -> M2 {
        let mut acc = m2_zero();
        for (m, c) in &self.terms {
            let ph: f64 = m.iter().zip(theta).map(|(a, t)| *a as f64 * t / 2.0).sum();
            let z = C64::new(ph.cos(), ph.sin());
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += c[i][j] * z;
                }
            }
        }
        acc
    }

    /// `Σ ‖c_m‖ e^{r|m/2|₁}` over integer modes (even `m`).
    pub fn weighted_norm(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(m, _)| m.iter().all(|x| x % 2 == 0))
            .map(|(m, c)| {
                let k1: i64 = m.iter().map(|x| (x / 2).abs()).sum();
                m2_norm(c) * (r * k1 as f64).exp()
            })
            .fold(0.0, |a, x| a + x)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::m2_real;

    #[test]
    fn round_trip_and_evaluation_in_two_dimensions() {
        let g = TorusGrid::new(2, 8);
        let vals: Vec<M2> = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                let v = (p[0]).cos() + 0.5 * (p[1] / 2.0 - p[0]).sin();
                m2_real(v, 1.0, -v, 0.0)
            })
            .collect();
        let c = g.forward(&vals);
        let back = g.backward(&c);
        for (a, b) in vals.iter().zip(&back) {
            assert!(m2_norm(&crate::linalg::m2_sub(a, b)) < 1e-13);
        }
        let s = g.sparse(&c);
        let th = [0.37f64, 2.1];
        let exact = th[0].cos() + 0.5 * (th[1] / 2.0 - th[0]).sin();
        assert!((s.eval(&th)[0][0].re - exact).abs() < 1e-13);
        assert_eq!(g.slot(&g.mode(37)), Some(37));
    }
}
