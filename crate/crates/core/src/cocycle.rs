//! The Schrödinger cocycle `(ω, A₀(E) + F₀(θ))`.
//!
//! `H_θ q = E q` is equivalent to `(q_{n+1}, q_n)ᵀ = M(θ + nω) (q_n, q_{n−1})ᵀ`
//! with `M(θ) = [[−E + V(θ), −1], [1, 0]]`. With this sign convention the free
//! rotation number is `ρ₀(E) = arccos(−E/2)`.

use crate::potential::FourierSeries;
use crate::torus_freq::Frequency;
use crate::Real;

/// Real 2×2 matrix, nominally unimodular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SL2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Real> SL2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { a, b, c, d }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::one())
    }

    /// Rotation by angle `x`: `[[cos x, −sin x], [sin x, cos x]]`.
    pub fn rotation(x: T) -> Self {
        Self::new(x.cos(), -x.sin(), x.sin(), x.cos())
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }

    pub fn det(&self) -> T {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> T {
        self.a + self.d
    }

    /// Inverse assuming unit determinant.
    pub fn inverse(&self) -> Self {
        Self::new(self.d, -self.b, -self.c, self.a)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    /// Divides by `√det` so the result has determinant 1 (for `det > 0`).
    pub fn normalized(&self) -> Self {
        self.scale(T::one() / self.det().abs().sqrt())
    }

    /// Operator 2-norm.
    pub fn norm(&self) -> T {
        let f2 = self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d;
        let dt = self.det().abs();
        let two = T::of(2.0);
        let disc = (f2 * f2 - T::of(4.0) * dt * dt).max(T::zero());
        ((f2 + disc.sqrt()) / two).sqrt()
    }

    pub fn apply(&self, v: [T; 2]) -> [T; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        (self.a - o.a).abs().max((self.b - o.b).abs()).max((self.c - o.c).abs()).max((self.d - o.d).abs())
    }
}

/// Finite-`n` estimate of the fibered rotation number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationEstimate<T> {
    /// In `[0, π]`.
    pub value: T,
    pub iterations: usize,
    /// Spread of the estimate over the last tenth of the prefixes.
    pub oscillation: T,
}

fn orbit_point<T: Real>(theta: &[T], freq: &Frequency<T>, n: usize, out: &mut [T]) {
    let nn = T::of(n as f64);
    for (i, w) in freq.omega().iter().enumerate() {
        out[i] = theta[i] + nn * *w;
    }
}

/// `A₀(E) + F₀(θ) = [[−E + V(θ), −1], [1, 0]]`.
pub fn transfer_matrix<T: Real>(e: T, v: &FourierSeries<T>, theta: &[T]) -> SL2<T> {
    SL2::new(-e + v.eval(theta), -T::one(), T::one(), T::zero())
}

/// `M(θ + (n−1)ω) ··· M(θ)` together with `log` of the scale factored out.
/// The true product is `e^{log_scale} · matrix`.
pub fn cocycle_product_scaled<T: Real>(
    e: T,
    v: &FourierSeries<T>,
    theta: &[T],
    freq: &Frequency<T>,
    n: usize,
) -> (SL2<T>, T) {
    let mut p = SL2::identity();
    let mut log_scale = T::zero();
    let mut th = vec![T::zero(); theta.len()];
    for m in 0..n {
        orbit_point(theta, freq, m, &mut th);
        p = transfer_matrix(e, v, &th).mul(&p);
        if (m + 1) % 32 == 0 {
            let s = p.norm();
            if s > T::zero() {
                p = p.scale(T::one() / s);
                log_scale += s.ln();
            }
        }
    }
    (p, log_scale)
}

/// Ordered product `M(θ + (n−1)ω) ··· M(θ)`, rescaled to determinant 1
/// while the computed determinant is still meaningful (`‖M‖² ε_mach` small).
/// Entries overflow for long hyperbolic products; use
/// [`cocycle_product_scaled`] there.
pub fn cocycle_product<T: Real>(e: T, v: &FourierSeries<T>, theta: &[T], freq: &Frequency<T>, n: usize) -> SL2<T> {
    let (p, log_scale) = cocycle_product_scaled(e, v, theta, freq, n);
    let m = p.scale(log_scale.exp());
    // past that point det is rounding noise and dividing by it only hurts
    if (m.det() - T::one()).abs() < T::of(1e-6) {
        m.normalized()
    } else {
        m
    }
}

/// `(1/n) log ‖M_n‖` averaged over 8 phases `θ + (2πj/8)(1,…,1)`.
pub fn lyapunov_exponent<T: Real>(e: T, v: &FourierSeries<T>, theta: &[T], freq: &Frequency<T>, n_max: usize) -> T {
    let phases = 8;
    let mut acc = T::zero();
    for j in 0..phases {
        let shift = T::of(2.0 * std::f64::consts::PI * j as f64 / phases as f64);
        let th: Vec<T> = theta.iter().map(|&x| x + shift).collect();
        let (p, log_scale) = cocycle_product_scaled(e, v, &th, freq, n_max);
        acc += (log_scale + p.norm().ln()) / T::of(n_max as f64);
    }
    (acc / T::of(phases as f64)).max(T::zero())
}

/// Smooth bump `exp(−1/(t(1−t)))` on `(0,1)`.
fn bump<T: Real>(t: T) -> T {
    if t <= T::zero() || t >= T::one() {
        T::zero()
    } else {
        (-T::one() / (t * (T::one() - t))).exp()
    }
}

/// Fibered rotation number by continuous angle tracking.
///
/// A line element `v = (q_n, q_{n−1})` is pushed through the cocycle. For the
/// Schrödinger form the projective lift moves every angle by an amount in
/// `(−π/2, 3π/2)`, so the atan2 increment in `(−π, π]` is lifted by adding
/// `2π` when it falls below `−π/2`. Increments are averaged with the bump
/// weight, which converges faster than any power of `1/n` for smooth
/// quasi-periodic increments.
pub fn rotation_number<T: Real>(
    e: T,
    v: &FourierSeries<T>,
    theta: &[T],
    freq: &Frequency<T>,
    n_max: usize,
) -> RotationEstimate<T> {
    let n_max = n_max.max(20);
    let pi = T::PI();
    let two_pi = pi + pi;
    let half_pi = pi / T::of(2.0);
    // prefixes n_max·(0.9 + 0.01 i), i = 0..=10
    let prefixes: Vec<usize> = (0..=10).map(|i| (n_max as f64 * (0.9 + 0.01 * i as f64)).round() as usize).collect();
    let mut num = vec![T::zero(); prefixes.len()];
    let mut den = vec![T::zero(); prefixes.len()];
    let inv_len: Vec<T> = prefixes.iter().map(|&l| T::one() / T::of(l as f64)).collect();
    let mut th = vec![T::zero(); theta.len()];
    let (mut x, mut y) = (T::one(), T::zero());
    for n in 0..n_max {
        orbit_point(theta, freq, n, &mut th);
        let a = -e + v.eval(&th);
        let (nx, ny) = (a * x - y, x);
        let cross = x * ny - y * nx;
        let dot = x * nx + y * ny;
        let mut delta = cross.atan2(dot);
        if delta < -half_pi {
            delta += two_pi;
        }
        let r = (nx * nx + ny * ny).sqrt();
        x = nx / r;
        y = ny / r;
        let tn = T::of(n as f64 + 0.5);
        for (i, &len) in prefixes.iter().enumerate() {
            if n < len {
                let w = bump(tn * inv_len[i]);
                num[i] += w * delta;
                den[i] += w;
            }
        }
    }
    let est: Vec<T> = num.iter().zip(&den).map(|(a, b)| *a / *b).collect();
    let lo = est.iter().fold(T::infinity(), |m, v| m.min(*v));
    let hi = est.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let value = est[est.len() - 1].max(T::zero()).min(pi);
    RotationEstimate { value, iterations: n_max, oscillation: hi - lo }
}

/// Central difference `dρ/dE`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoDerivative<T> {
    /// Clamped to `≥ 0`.
    pub value: T,
    /// Set when the rotation-number oscillation exceeds `h · value`.
    pub noisy: bool,
}

pub fn rho_derivative<T: Real>(
    e: T,
    v: &FourierSeries<T>,
    theta: &[T],
    freq: &Frequency<T>,
    h_step: T,
    n_max: usize,
) -> RhoDerivative<T> {
    let hi = rotation_number(e + h_step, v, theta, freq, n_max);
    let lo = rotation_number(e - h_step, v, theta, freq, n_max);
    let value = ((hi.value - lo.value) / (h_step + h_step)).max(T::zero());
    let osc = hi.oscillation.max(lo.oscillation);
    RhoDerivative { value, noisy: osc > h_step * value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{FourierSeries, Frequency, SL2};

    fn free() -> FourierSeries {
        FourierSeries::zero(1)
    }

    #[test]
    fn transfer_matrix_values() {
        let v = FourierSeries::cosine(1, 0.01);
        let m = transfer_matrix(0.0, &v, &[0.0]);
        assert!((m.a - 0.02).abs() < 1e-15);
        assert_eq!((m.b, m.c, m.d), (-1.0, 1.0, 0.0));
        assert_eq!(m.det(), 1.0);
        assert_eq!(transfer_matrix(-2.0, &free(), &[0.0]).trace(), 2.0);
    }

    #[test]
    fn free_products_are_periodic() {
        let f = Frequency::golden();
        let p4 = cocycle_product(0.0, &free(), &[0.0], &f, 4);
        assert!(p4.max_abs_diff(&SL2::identity()) < 1e-15);
        let p6 = cocycle_product(1.0, &free(), &[0.0], &f, 6);
        assert!(p6.max_abs_diff(&SL2::identity()) < 1e-14);
        let p1 = cocycle_product(0.3, &free(), &[0.0], &f, 1);
        assert_eq!(p1, transfer_matrix(0.3, &free(), &[0.0]));
    }

    #[test]
    fn long_products_stay_unimodular() {
        let f = Frequency::golden();
        let v = FourierSeries::cosine(1, 0.3);
        let p = cocycle_product(0.4, &v, &[0.1], &f, 1000);
        assert!((p.det() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn free_lyapunov() {
        let f = Frequency::golden();
        assert!(lyapunov_exponent(0.0, &free(), &[0.0], &f, 2000) < 1e-3);
        let exact = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((lyapunov_exponent(3.0, &free(), &[0.0], &f, 10_000) - exact).abs() < 1e-3);
        let v = FourierSeries::cosine(1, 0.01);
        assert!(lyapunov_exponent(0.0, &v, &[0.0], &f, 10_000) <= 0.01);
    }

    #[test]
    fn free_rotation_number() {
        let f = Frequency::golden();
        let r = rotation_number(0.0, &free(), &[0.0], &f, 2000);
        assert!((r.value - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        assert!(rotation_number(-2.0, &free(), &[0.0], &f, 2000).value < 1e-2);
        assert!((rotation_number(2.0, &free(), &[0.0], &f, 2000).value - std::f64::consts::PI).abs() < 1e-2);
        assert!(rotation_number(-3.0, &free(), &[0.0], &f, 2000).value < 1e-12);
        assert!((rotation_number(3.0, &free(), &[0.0], &f, 2000).value - std::f64::consts::PI).abs() < 1e-12);
        for e in [-1.9, -1.0, 0.37, 1.5, 1.99] {
            let r = rotation_number(e, &free(), &[0.0], &f, 20_000);
            assert!((r.value - (-e / 2.0f64).acos()).abs() < 1e-6, "E={e}: {}", r.value);
        }
    }

    #[test]
    fn free_rho_derivative() {
        let f = Frequency::golden();
        let d0 = rho_derivative(0.0, &free(), &[0.0], &f, 1e-3, 20_000);
        assert!((d0.value - 0.5).abs() < 1e-3);
        let d1 = rho_derivative(1.9, &free(), &[0.0], &f, 1e-3, 20_000);
        assert!((d1.value - 1.0 / (4.0f64 - 3.61).sqrt()).abs() < 1e-2);
    }
}
