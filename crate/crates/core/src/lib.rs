//! Numerical laboratory for quasi-periodic Schrödinger operators on ℤ.
//!
//! The operator is `(H_θ q)_n = −(q_{n+1} + q_{n−1}) + V(θ + nω) q_n` with a
//! real-analytic potential `V` on the torus `(ℝ/2πℤ)^d` and a Diophantine
//! frequency `ω`. The crate covers:
//!
//! * frequencies and half-resonances ([`torus_freq`]), analytic potentials ([`potential`]);
//! * finite sections, integrated density of states and gaps ([`lattice_operator`]);
//! * transfer matrices, Lyapunov exponent and fibered rotation number ([`cocycle`]);
//! * a finite-depth KAM reduction of the Schrödinger cocycle ([`kam`]);
//! * Bloch waves and the approximate spectral transform ([`spectral_transform`]);
//! * Van der Corput bounds for spectral oscillatory integrals ([`oscillatory`]);
//! * Chebyshev propagation and decay fits ([`propagator`]);
//! * the small-data discrete NLS bootstrap ([`nls`]);
//! * the `qpdl` command-line front end ([`cli`]).
//!
//! The foundation layer (frequencies, Fourier series, SL(2,ℝ) cocycles) is
//! generic over [`Real`]; the aliases below fix it to `f64`, which is what the
//! rest of the crate uses.

pub mod cli;
pub mod cocycle;
pub mod error;
pub mod kam;
pub mod lattice_operator;
pub mod linalg;
pub mod nls;
pub mod oscillatory;
pub mod potential;
pub mod propagator;
pub mod special;
pub mod spectral_transform;
pub mod torus_freq;

pub use error::{Error, Result};

/// Floating-point scalar accepted by the generic foundation layer.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 is representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over `f64`.
pub type C64 = num_complex::Complex<f64>;

pub type Frequency = torus_freq::Frequency<f64>;
pub type HalfResonance = torus_freq::HalfResonance<f64>;
pub type FourierSeries = potential::FourierSeries<f64>;
pub type SL2 = cocycle::SL2<f64>;
pub type RotationEstimate = cocycle::RotationEstimate<f64>;
