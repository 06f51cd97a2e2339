//! Small dense and tridiagonal linear algebra used across the crate.

use crate::error::{Error, Result};
use crate::C64;

/// Complex 2×2 matrix, row-major.
pub type M2 = [[C64; 2]; 2];

pub fn m2_real(a: f64, b: f64, c: f64, d: f64) -> M2 {
    [[C64::new(a, 0.0), C64::new(b, 0.0)], [C64::new(c, 0.0), C64::new(d, 0.0)]]
}

pub fn m2_identity() -> M2 {
    m2_real(1.0, 0.0, 0.0, 1.0)
}

pub fn m2_zero() -> M2 {
    m2_real(0.0, 0.0, 0.0, 0.0)
}

pub fn m2_mul(x: &M2, y: &M2) -> M2 {
    let mut r = m2_zero();
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    r
}

pub fn m2_add(x: &M2, y: &M2) -> M2 {
    [[x[0][0] + y[0][0], x[0][1] + y[0][1]], [x[1][0] + y[1][0], x[1][1] + y[1][1]]]
}

pub fn m2_sub(x: &M2, y: &M2) -> M2 {
    [[x[0][0] - y[0][0], x[0][1] - y[0][1]], [x[1][0] - y[1][0], x[1][1] - y[1][1]]]
}

pub fn m2_scale(x: &M2, s: C64) -> M2 {
    [[x[0][0] * s, x[0][1] * s], [x[1][0] * s, x[1][1] * s]]
}

pub fn m2_det(x: &M2) -> C64 {
    x[0][0] * x[1][1] - x[0][1] * x[1][0]
}

pub fn m2_trace(x: &M2) -> C64 {
    x[0][0] + x[1][1]
}

/// Inverse via the adjugate.
pub fn m2_inv(x: &M2) -> M2 {
    let d = m2_det(x);
    [[x[1][1] / d, -x[0][1] / d], [-x[1][0] / d, x[0][0] / d]]
}

/// Spectral (operator 2-) norm.
pub fn m2_norm(x: &M2) -> f64 {
    let f2: f64 = x.iter().flatten().map(|z| z.norm_sqr()).sum();
    let d = m2_det(x).norm();
    let disc = (f2 * f2 - 4.0 * d * d).max(0.0);
    ((f2 + disc.sqrt()) / 2.0).sqrt()
}

/// `exp(W)` for traceless `W`: `cosh(s) I + sinh(s)/s W` with `s² = −det W`.
pub fn m2_exp_traceless(w: &M2) -> M2 {
    let s2 = -m2_det(w);
    let s = s2.sqrt();
    let (ch, shs) = if s.norm() < 1e-4 {
        // series to O(s^8)
        let ch = C64::new(1.0, 0.0) + s2 / 2.0 + s2 * s2 / 24.0 + s2 * s2 * s2 / 720.0;
        let shs = C64::new(1.0, 0.0) + s2 / 6.0 + s2 * s2 / 120.0 + s2 * s2 * s2 / 5040.0;
        (ch, shs)
    } else {
        (s.cosh(), s.sinh() / s)
    };
    [[ch + shs * w[0][0], shs * w[0][1]], [shs * w[1][0], ch + shs * w[1][1]]]
}

/// Solves `A x = b` in place (row-major `n×n`) by Gaussian elimination with
/// partial pivoting. Returns the smallest pivot modulus.
pub fn solve_complex(a: &mut [C64], b: &mut [C64], n: usize) -> f64 {
    let mut min_pivot = f64::INFINITY;
    for col in 0..n {
        let mut p = col;
        for r in col + 1..n {
            if a[r * n + col].norm() > a[p * n + col].norm() {
                p = r;
            }
        }
        if p != col {
            for j in 0..n {
                a.swap(col * n + j, p * n + j);
            }
            b.swap(col, p);
        }
        let piv = a[col * n + col];
        min_pivot = min_pivot.min(piv.norm());
        if piv.norm() == 0.0 {
            continue;
        }
        for r in col + 1..n {
            let f = a[r * n + col] / piv;
            if f.norm() == 0.0 {
                continue;
            }
            for j in col..n {
                let v = a[col * n + j];
                a[r * n + j] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for j in col + 1..n {
            s -= a[col * n + j] * b[j];
        }
        let piv = a[col * n + col];
        b[col] = if piv.norm() == 0.0 { C64::new(0.0, 0.0) } else { s / piv };
    }
    min_pivot
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e.len() == d.len() − 1`), ascending. Implicit QL with
/// Wilkinson shifts.
pub fn tridiag_eigenvalues(d: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    let n = d.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    assert_eq!(e.len() + 1, n);
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).collect();
    const MAX_IT: usize = 60;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_IT {
                return Err(Error::NoConvergence(MAX_IT));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(d)
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal matrix
/// (Sturm sequence count).
pub fn tridiag_count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let tiny = f64::EPSILON * (1.0 + x.abs());
    let mut count = 0;
    let mut q = d[0] - x;
    for i in 0..d.len() {
        if i > 0 {
            q = d[i] - x - e[i - 1] * e[i - 1] / q;
        }
        if q == 0.0 {
            q = tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenvector for an (approximate) eigenvalue `lambda` by two sweeps of
/// inverse iteration; returned with unit ℓ² norm.
pub fn tridiag_eigenvector(d: &[f64], e: &[f64], lambda: f64) -> Vec<f64> {
    let n = d.len();
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 2.0 * e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let shift = lambda + scale * 1e-13;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i as f64) * 0.7071).sin()).collect();
    for _ in 0..3 {
        // Thomas algorithm with partial safeguarding
        let mut c = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut b = d[0] - shift;
        if b == 0.0 {
            b = f64::EPSILON * scale;
        }
        c[0] = if n > 1 { e[0] / b } else { 0.0 };
        y[0] = x[0] / b;
        for i in 1..n {
            let mut den = d[i] - shift - e[i - 1] * c[i - 1];
            if den == 0.0 {
                den = f64::EPSILON * scale;
            }
            if i + 1 < n {
                c[i] = e[i] / den;
            }
            y[i] = (x[i] - e[i - 1] * y[i - 1]) / den;
        }
        for i in (0..n - 1).rev() {
            y[i] -= c[i] * y[i + 1];
        }
        let nrm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !nrm.is_finite() || nrm == 0.0 {
            break;
        }
        x = y.into_iter().map(|v| v / nrm).collect();
    }
    x
}
