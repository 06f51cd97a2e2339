//! The operator `H_θ` on the finite window `[−N, N]` with Dirichlet boundary.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{tridiag_count_below, tridiag_eigenvalues, tridiag_eigenvector};
use crate::{FourierSeries, Frequency, C64};

/// Complex sequence on `[−N, N]`; values outside the window are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    half_width: usize,
    values: Vec<C64>,
}

impl LatticeState {
    pub fn zeros(half_width: usize) -> Self {
        Self { half_width, values: vec![C64::new(0.0, 0.0); 2 * half_width + 1] }
    }

    /// `δ₀`.
    pub fn delta(half_width: usize) -> Self {
        let mut s = Self::zeros(half_width);
        s.values[half_width] = C64::new(1.0, 0.0);
        s
    }

    /// Values listed for `n = −N..=N`.
    pub fn from_values(values: Vec<C64>) -> Result<Self> {
        if values.len() % 2 == 0 {
            return Err(Error::Invalid("window length must be odd".into()));
        }
        Ok(Self { half_width: values.len() / 2, values })
    }

    /// `c · e^{−n²/(2w²)}` normalised to unit ℓ².
    pub fn gaussian(half_width: usize, width: f64) -> Self {
        let mut s = Self::zeros(half_width);
        for (i, v) in s.values.iter_mut().enumerate() {
            let n = i as f64 - half_width as f64;
            *v = C64::new((-n * n / (2.0 * width * width)).exp(), 0.0);
        }
        let nrm = s.l2_norm();
        s.scale(C64::new(1.0 / nrm, 0.0))
    }

    /// Entries with real and imaginary parts uniform in `[−1, 1]` on
    /// `|n| ≤ support`, zero elsewhere.
    pub fn random<R: rand::Rng>(half_width: usize, support: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(half_width);
        let r = support.min(half_width);
        for v in &mut s.values[half_width - r..=half_width + r] {
            *v = C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        }
        s
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    /// `q_n`, zero outside the window.
    pub fn get(&self, n: i64) -> C64 {
        let i = n + self.half_width as i64;
        if i < 0 || i >= self.values.len() as i64 {
            C64::new(0.0, 0.0)
        } else {
            self.values[i as usize]
        }
    }

    pub fn set(&mut self, n: i64, z: C64) {
        let i = (n + self.half_width as i64) as usize;
        self.values[i] = z;
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { half_width: self.half_width, values: self.values.iter().map(|v| v * c).collect() }
    }

    /// `a·self + b·other`; both on the same window.
    pub fn combine(&self, a: C64, other: &Self, b: C64) -> Self {
        assert_eq!(self.half_width, other.half_width);
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { half_width: self.half_width, values }
    }

    pub fn conj(&self) -> Self {
        Self { half_width: self.half_width, values: self.values.iter().map(|v| v.conj()).collect() }
    }

    /// Same sequence on a window of half-width `m` (truncating if smaller).
    pub fn resized(&self, m: usize) -> Self {
        let mut s = Self::zeros(m);
        for n in -(m as i64)..=m as i64 {
            s.set(n, self.get(n));
        }
        s
    }

    /// `Σ conj(self_n) other_n`.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.half_width, other.half_width);
        self.values.iter().zip(&other.values).map(|(x, y)| x.conj() * y).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.half_width, other.half_width);
        self.values.iter().zip(&other.values).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
    }
}

/// `V(θ + nω)` for `n = −N..=N`.
pub fn diagonal(v: &FourierSeries, theta: &[f64], freq: &Frequency, half_width: usize) -> Vec<f64> {
    let n = half_width as i64;
    v.orbit(theta, freq, -n, n)
}

/// `out = H q` for the tridiagonal operator with the given diagonal and unit
/// negative hopping.
pub fn apply_h_diag(diag: &[f64], q: &[C64], out: &mut [C64]) {
    let len = q.len();
    for i in 0..len {
        let mut s = q[i] * diag[i];
        if i > 0 {
            s -= q[i - 1];
        }
        if i + 1 < len {
            s -= q[i + 1];
        }
        out[i] = s;
    }
}

/// `(Hq)_n = −(q_{n+1} + q_{n−1}) + V(θ + nω) q_n` on the window of `q`.
pub fn apply_h(v: &FourierSeries, theta: &[f64], freq: &Frequency, q: &LatticeState) -> LatticeState {
    let diag = diagonal(v, theta, freq, q.half_width);
    let mut out = LatticeState::zeros(q.half_width);
    apply_h_diag(&diag, &q.values, &mut out.values);
    out
}

/// Open interval free of sampled spectrum, with its rotation value `π·ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gap {
    pub lo: f64,
    pub hi: f64,
    pub rho: f64,
}

impl Gap {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub inf: f64,
    pub sup: f64,
    /// Ordered by position.
    pub gaps: Vec<Gap>,
}

/// Eigenvalues of the `(2N+1)×(2N+1)` section at phase `θ`.
pub fn truncated_spectrum(v: &FourierSeries, theta: &[f64], freq: &Frequency, half_width: usize) -> Result<SpectrumSummary> {
    if half_width < 2 {
        return Err(Error::Invalid("window half-width must be at least 2".into()));
    }
    let diag = diagonal(v, theta, freq, half_width);
    let ev = tridiag_eigenvalues(&diag, &vec![-1.0; 2 * half_width])?;
    Ok(SpectrumSummary { inf: ev[0], sup: ev[ev.len() - 1], eigenvalues: ev, gaps: Vec::new() })
}

/// Phases `θ_m = m(2N+1)ω`, `m = 0..samples`: points of one orbit spaced so
/// that consecutive windows sample disjoint stretches of it.
pub fn orbit_phases(freq: &Frequency, half_width: usize, samples: usize) -> Vec<Vec<f64>> {
    let stride = (2 * half_width + 1) as f64;
    (0..samples)
        .map(|m| freq.omega().iter().map(|w| m as f64 * stride * w).collect())
        .collect()
}

/// Integrated density of states: fraction of eigenvalues `≤ E`, averaged
/// over orbit phases.
pub fn ids(e: f64, v: &FourierSeries, freq: &Frequency, half_width: usize, theta_samples: usize) -> Result<f64> {
    Ok(ids_grid(&[e], v, freq, half_width, theta_samples)?[0])
}

/// [`ids`] on many energies at once (one Sturm count per phase and energy).
pub fn ids_grid(es: &[f64], v: &FourierSeries, freq: &Frequency, half_width: usize, theta_samples: usize) -> Result<Vec<f64>> {
    if half_width < 2 || theta_samples == 0 {
        return Err(Error::Invalid("need N >= 2 and at least one phase sample".into()));
    }
    let off = vec![-1.0; 2 * half_width];
    let phases = orbit_phases(freq, half_width, theta_samples);
    let counts: Vec<Vec<usize>> = phases
        .par_iter()
        .map(|th| {
            let diag = diagonal(v, th, freq, half_width);
            es.iter().map(|&e| tridiag_count_below(&diag, &off, e)).collect()
        })
        .collect();
    let total = (theta_samples * (2 * half_width + 1)) as f64;
    Ok((0..es.len()).map(|i| counts.iter().map(|c| c[i]).sum::<usize>() as f64 / total).collect())
}

/// Eigenvectors with less than this share of their ℓ² mass in the central
/// half of the window are treated as boundary states by [`detect_gaps`].
pub const BULK_WEIGHT: f64 = 0.45;

/// Gaps of width `≥ resolution` in the union of the sampled spectra.
///
/// Dirichlet truncation creates eigenvalues inside true gaps, carried by
/// states living at the window edges. Those are discarded via [`BULK_WEIGHT`]
/// before the union is scanned; the rotation value of each gap is computed
/// from the unfiltered count.
pub fn detect_gaps(
    v: &FourierSeries,
    freq: &Frequency,
    half_width: usize,
    resolution: f64,
    theta_samples: usize,
) -> Result<SpectrumSummary> {
    if !(resolution > 0.0) {
        return Err(Error::Invalid("resolution must be positive".into()));
    }
    if half_width < 2 || theta_samples == 0 {
        return Err(Error::Invalid("need N >= 2 and at least one phase sample".into()));
    }
    let len = 2 * half_width + 1;
    let off = vec![-1.0; len - 1];
    let (q0, q1) = (half_width - half_width / 2, half_width + half_width / 2);
    let phases = orbit_phases(freq, half_width, theta_samples);
    let per_phase: Vec<Result<(Vec<f64>, Vec<f64>)>> = phases
        .par_iter()
        .map(|th| {
            let diag = diagonal(v, th, freq, half_width);
            let ev = tridiag_eigenvalues(&diag, &off)?;
            let bulk = ev
                .iter()
                .copied()
                .filter(|&lam| {
                    let x = tridiag_eigenvector(&diag, &off, lam);
                    x[q0..=q1].iter().map(|t| t * t).sum::<f64>() >= BULK_WEIGHT
                })
                .collect();
            Ok((ev, bulk))
        })
        .collect();
    let mut all = Vec::with_capacity(len * theta_samples);
    let mut bulk = Vec::new();
    for r in per_phase {
        let (ev, b) = r?;
        all.extend(ev);
        bulk.extend(b);
    }
    all.sort_by(|a, b| a.total_cmp(b));
    bulk.sort_by(|a, b| a.total_cmp(b));
    let total = all.len() as f64;
    let mut gaps = Vec::new();
    for w in bulk.windows(2) {
        if w[1] - w[0] >= resolution {
            let mid = 0.5 * (w[0] + w[1]);
            let below = all.partition_point(|&x| x <= mid) as f64;
            gaps.push(Gap { lo: w[0], hi: w[1], rho: std::f64::consts::PI * below / total });
        }
    }
    Ok(SpectrumSummary {
        inf: all[0],
        sup: all[all.len() - 1],
        eigenvalues: all,
        gaps,
    })
}
