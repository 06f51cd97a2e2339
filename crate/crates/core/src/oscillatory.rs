//! Van der Corput bounds and the spectral oscillatory integral
//!
//! ```text
//! I_M(t) = ∫_Σ h(E) e^{−iEt} cos(Mρ(E)) ρ′(E) dE,
//! ```
//!
//! evaluated directly in the `ρ` variable and bounded by integration by parts
//! (large `|M|`) or by a per-component Van der Corput estimate on the inverse
//! function `E(ρ)`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kam::{KamSchedule, SpectralPartition};
use crate::propagator::japanese;
use crate::spectral_transform::{SpectralGrid, RHO_PRIME_FLOOR};
use crate::C64;

/// `x ↦ [ψ(x), ψ′(x), ψ″(x), ψ‴(x)]`.
pub type PhaseFn = Arc<dyn Fn(f64) -> [f64; 4] + Send + Sync>;

/// Points used to verify `|ψ^{(k)}| ≥ c` when a profile is built.
pub const VERIFY_SAMPLES: usize = 4096;

/// Bound on the `C¹` norm of the amplitude (value and `E`-derivative).
pub const AMPLITUDE_CAP: f64 = 16.0 / 15.0;

/// Default number of transversality samples per spectral component.
pub const DEFAULT_SAMPLES: usize = 64;

/// Real phase on `(a, b)` whose `k`-th derivative stays above `c` in modulus.
#[derive(Clone)]
pub struct PhaseProfile {
    a: f64,
    b: f64,
    phase: PhaseFn,
    k: u32,
    c: f64,
}

impl std::fmt::Debug for PhaseProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhaseProfile").field("a", &self.a).field("b", &self.b).field("k", &self.k).field("c", &self.c).finish()
    }
}

impl PhaseProfile {
    /// Builds the profile after checking `|ψ^{(k)}| ≥ c` on [`VERIFY_SAMPLES`]
    /// points of `[a, b]`.
    pub fn new(a: f64, b: f64, phase: PhaseFn, k: u32, c: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Invalid(format!("bad interval ({a}, {b})")));
        }
        if !(2..=3).contains(&k) {
            return Err(Error::Invalid(format!("derivative order {k} unsupported (k must be 2 or 3)")));
        }
        if !(c > 0.0) {
            return Err(Error::Invalid("lower bound c must be positive".into()));
        }
        let p = Self { a, b, phase, k, c };
        let worst = p.sampled_min(VERIFY_SAMPLES);
        if worst < c {
            return Err(Error::Precondition(format!("|psi^({k})| drops to {worst:e} < c = {c:e}")));
        }
        Ok(p)
    }

    /// Profile without a derivative floor (`c = 0`): usable for quadrature,
    /// refused by [`vdc_bound`].
    pub fn unverified(a: f64, b: f64, phase: PhaseFn) -> Self {
        Self { a, b, phase, k: 2, c: 0.0 }
    }

    /// `ψ(x) = Σ coeffs[i] x^i` with `c` set to 0.99 of the sampled minimum
    /// of `|ψ^{(k)}|`.
    pub fn polynomial(a: f64, b: f64, coeffs: &[f64], k: u32) -> Result<Self> {
        let cs = coeffs.to_vec();
        let phase: PhaseFn = Arc::new(move |x| poly_derivs(&cs, x));
        let probe = Self { a, b, phase: phase.clone(), k, c: 1.0 };
        let m = probe.sampled_min(2 * VERIFY_SAMPLES);
        Self::new(a, b, phase, k, 0.99 * m)
    }

    fn sampled_min(&self, n: usize) -> f64 {
        (0..=n)
            .map(|i| {
                let x = self.a + (self.b - self.a) * i as f64 / n as f64;
                (self.phase)(x)[self.k as usize].abs()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn order(&self) -> u32 {
        self.k
    }

    pub fn lower_bound(&self) -> f64 {
        self.c
    }

    pub fn eval(&self, x: f64) -> [f64; 4] {
        (self.phase)(x)
    }
}

fn poly_derivs(c: &[f64], x: f64) -> [f64; 4] {
    let mut d = [0.0; 4];
    for &ci in c.iter().rev() {
        d[3] = d[3] * x + 3.0 * d[2];
        d[2] = d[2] * x + 2.0 * d[1];
        d[1] = d[1] * x + d[0];
        d[0] = d[0] * x + ci;
    }
    d
}

/// `5·2^{k−1} − 2` for `k ∈ {2, 3}`.
pub fn vdc_constant(k: u32) -> Result<f64> {
    match k {
        2 => Ok(8.0),
        3 => Ok(18.0),
        _ => Err(Error::Invalid(format!("no Van der Corput constant for k = {k}"))),
    }
}

/// `(5·2^{k−1}−2) c^{−1/k} (h_end + TV(h)) |λ|^{−1/k}`.
pub fn vdc_bound(profile: &PhaseProfile, lambda: f64, h_end: f64, h_total_variation: f64) -> Result<f64> {
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(Error::Invalid("lambda must be finite and nonzero".into()));
    }
    if profile.c <= 0.0 {
        return Err(Error::Precondition("profile has no verified derivative floor".into()));
    }
    vdc_raw(profile.k, profile.c, lambda, h_end, h_total_variation)
}

fn vdc_raw(k: u32, c: f64, lambda: f64, h_end: f64, tv: f64) -> Result<f64> {
    let kk = k as f64;
    Ok(vdc_constant(k)? * c.powf(-1.0 / kk) * (h_end.abs() + tv) * lambda.abs().powf(-1.0 / kk))
}

fn gauss_rule(n: usize) -> &'static [(f64, f64)] {
    static R8: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    static R10: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    static R12: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    let cell = match n {
        8 => &R8,
        10 => &R10,
        12 => &R12,
        _ => unreachable!("unsupported rule"),
    };
    cell.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(n).expect("n > 0")).as_node_weight_pairs().to_vec())
}

fn gauss<F: Fn(f64) -> C64>(rule: &[(f64, f64)], a: f64, b: f64, f: &F) -> C64 {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    rule.iter().map(|(x, w)| f(m + r * x) * *w).sum::<C64>() * r
}

/// Value of an oscillatory quadrature with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrature {
    pub value: C64,
    pub error: f64,
    pub panels: usize,
    /// False if some panel hit the subdivision cap.
    pub converged: bool,
}

const MAX_DEPTH: u32 = 40;
const QUAD_TOL: f64 = 1e-10;

/// `∫_a^b h(x) e^{iλψ(x)} dx` by adaptive Gauss–Legendre panels no wider than
/// `π / (4|λ| max|ψ′|)`.
pub fn oscillatory_quadrature(profile: &PhaseProfile, h: &dyn Fn(f64) -> f64, lambda: f64) -> Quadrature {
    let (a, b) = profile.interval();
    let rule = gauss_rule(10);
    let f = |x: f64| C64::from_polar(h(x), lambda * profile.eval(x)[0]);
    let slope = |x0: f64, x1: f64| -> f64 {
        (0..=4).map(|i| profile.eval(x0 + (x1 - x0) * i as f64 / 4.0)[1].abs()).fold(0.0, f64::max)
    };
    let mut stack: Vec<(f64, f64, u32)> = vec![(a, b, 0)];
    let mut out = Quadrature { value: C64::new(0.0, 0.0), error: 0.0, panels: 0, converged: true };
    let len = b - a;
    while let Some((x0, x1, depth)) = stack.pop() {
        let w = x1 - x0;
        let turn = w * lambda.abs() * slope(x0, x1);
        if turn > PI / 4.0 && depth < MAX_DEPTH {
            let pieces = ((turn / (PI / 4.0)).ceil() as usize).clamp(2, 4096);
            let h = w / pieces as f64;
            for i in 0..pieces {
                stack.push((x0 + i as f64 * h, x0 + (i + 1) as f64 * h, depth + 1));
            }
            continue;
        }
        let mid = 0.5 * (x0 + x1);
        let whole = gauss(rule, x0, x1, &f);
        let halves = gauss(rule, x0, mid, &f) + gauss(rule, mid, x1, &f);
        let err = (whole - halves).norm();
        if err <= QUAD_TOL * w / len || depth >= MAX_DEPTH {
            if depth >= MAX_DEPTH && err > QUAD_TOL * w / len {
                out.converged = false;
            }
            out.value += halves;
            out.error += err;
            out.panels += 1;
        } else {
            stack.push((x0, mid, depth + 1));
            stack.push((mid, x1, depth + 1));
        }
    }
    out
}

/// Outcome of a Van der Corput fuzzing campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VdcFuzzReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `|integral| / bound`.
    pub worst_ratio: f64,
    pub unconverged: usize,
}

/// Random polynomial phases of degree ≤ 5 on random intervals, random
/// amplitudes `α + β cos(γx + φ)` and frequencies `|λ| ∈ [1, 10³]`.
pub fn vdc_fuzz(trials: usize, seed: u64) -> Result<VdcFuzzReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = VdcFuzzReport { trials, violations: 0, worst_ratio: 0.0, unconverged: 0 };
    let mut done = 0;
    while done < trials {
        let k = if rng.gen_bool(0.5) { 2 } else { 3 };
        let a = rng.gen_range(-1.0..1.0);
        let b = a + rng.gen_range(0.3..2.0);
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0];
        let coeffs: Vec<f64> = (0..6).map(|i| rng.gen_range(-2.0..2.0) / fact[i]).collect();
        let profile = match PhaseProfile::polynomial(a, b, &coeffs, k) {
            Ok(p) if p.lower_bound() > 1e-2 => p,
            _ => continue,
        };
        let (al, be, ga, ph) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..2.0 * PI));
        let h = move |x: f64| al + be * (ga * x + ph).cos();
        let tv = total_variation(&h, a, b, 4096);
        let lambda = 10f64.powf(rng.gen_range(0.0..3.0)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let q = oscillatory_quadrature(&profile, &h, lambda);
        let bound = vdc_bound(&profile, lambda, h(b), tv)?;
        if !q.converged {
            rep.unconverged += 1;
        }
        if q.value.norm() > bound + q.error {
            rep.violations += 1;
        }
        rep.worst_ratio = rep.worst_ratio.max(q.value.norm() / bound);
        done += 1;
    }
    Ok(rep)
}

/// `Σ |h(x_{i+1}) − h(x_i)|` on `n` equal steps.
pub fn total_variation(h: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let mut prev = h(a);
    let mut tv = 0.0;
    for i in 1..=n {
        let v = h(a + (b - a) * i as f64 / n as f64);
        tv += (v - prev).abs();
        prev = v;
    }
    tv
}

/// Newton-form interpolant with derivatives up to order three.
struct Newton {
    xs: Vec<f64>,
    coefs: Vec<f64>,
}

impl Newton {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let mut c = ys.to_vec();
        for j in 1..xs.len() {
            for i in (j..xs.len()).rev() {
                c[i] = (c[i] - c[i - 1]) / (xs[i] - xs[i - j]);
            }
        }
        Self { xs: xs.to_vec(), coefs: c }
    }

    fn derivs(&self, x: f64) -> [f64; 4] {
        let mut d = [0.0; 4];
        for i in (0..self.coefs.len()).rev() {
            let u = x - self.xs[i];
            d[3] = d[3] * u + 3.0 * d[2];
            d[2] = d[2] * u + 2.0 * d[1];
            d[1] = d[1] * u + d[0];
            d[0] = d[0] * u + self.coefs[i];
        }
        d
    }

    fn value(&self, x: f64) -> f64 {
        self.coefs.iter().zip(&self.xs).rev().fold(0.0, |acc, (c, xi)| acc * (x - xi) + c)
    }
}

const STENCIL: usize = 6;

/// Maximal run of grid cells on which `ρ` strictly increases, seen in the
/// `ρ` variable.
#[derive(Debug, Clone)]
struct Band {
    /// Grid indices `first..=last` of the run's nodes.
    first: usize,
    last: usize,
    /// `ρ` at those nodes.
    knots: Vec<f64>,
    /// Interpolation data `(ρ, E, h)`. The end nodes are left out when they
    /// sit on a plateau, since their `E` then lies outside the band.
    xs: Vec<f64>,
    es: Vec<f64>,
    hs: Vec<f64>,
}

impl Band {
    fn local(&self, x: f64) -> (Newton, Newton) {
        let n = self.xs.len();
        let m = STENCIL.min(n);
        let pos = self.xs.partition_point(|&v| v < x);
        let start = pos.saturating_sub(m / 2).min(n - m);
        let r = start..start + m;
        (Newton::new(&self.xs[r.clone()], &self.es[r.clone()]), Newton::new(&self.xs[r.clone()], &self.hs[r]))
    }

    fn energy(&self, x: f64) -> f64 {
        self.local(x).0.value(x)
    }
}

fn bands(grid: &SpectralGrid, h: &[f64]) -> Vec<Band> {
    let e = grid.energies();
    let rho = &grid.rho;
    let n = e.len();
    let active: Vec<bool> = (0..n - 1).map(|i| rho[i + 1] - rho[i] > RHO_PRIME_FLOOR * (e[i + 1] - e[i])).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n - 1 {
        if !active[i] {
            i += 1;
            continue;
        }
        let first = i;
        while i < n - 1 && active[i] {
            i += 1;
        }
        let last = i;
        let lo = if first == 0 { first } else { first + 1 };
        let hi = if last == n - 1 { last } else { last - 1 };
        let (mut xs, mut es, mut hs) = (Vec::new(), Vec::new(), Vec::new());
        if hi >= lo && hi - lo >= 1 {
            for j in lo..=hi {
                xs.push(rho[j]);
                es.push(e[j]);
                hs.push(h[j]);
            }
        } else {
            for j in [first, last] {
                xs.push(rho[j]);
                es.push(e[j]);
                hs.push(h[j]);
            }
        }
        out.push(Band { first, last, knots: rho[first..=last].to_vec(), xs, es, hs });
    }
    out
}

/// Direct value, its error estimate and (when requested) the certified bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscIntegralResult {
    pub direct: C64,
    /// Difference between 12- and 8-point Gauss rules, summed over panels.
    pub quad_error: f64,
    pub bound: Option<CertifiedBound>,
}

/// Partition and schedule needed for the certified bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundContext<'a> {
    pub partition: &'a SpectralPartition,
    pub schedule: &'a KamSchedule,
    pub j: usize,
    /// Transversality samples per component.
    pub samples: usize,
}

/// `I_M(t)` over the grid, integrated in `ρ` band by band.
pub fn spectral_osc_integral(
    h_grid: &[f64],
    m: f64,
    t: f64,
    grid: &SpectralGrid,
    ctx: Option<BoundContext<'_>>,
) -> Result<OscIntegralResult> {
    if h_grid.len() != grid.len() || h_grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("amplitude must be finite with one value per grid energy".into()));
    }
    let bs = bands(grid, h_grid);
    let (r12, r8) = (gauss_rule(12), gauss_rule(8));
    let mut direct = C64::new(0.0, 0.0);
    let mut quad_error = 0.0;
    for band in &bs {
        for w in band.knots.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let (pe, ph) = band.local(0.5 * (x0 + x1));
            let f = |x: f64| C64::from_polar(ph.value(x) * (m * x).cos(), -t * pe.value(x));
            let turn = t.abs() * (pe.value(x1) - pe.value(x0)).abs() + m.abs() * (x1 - x0);
            let panels = ((turn / 2.0).ceil() as usize).max(1);
            let step = (x1 - x0) / panels as f64;
            for p in 0..panels {
                let (a, b) = (x0 + p as f64 * step, x0 + (p + 1) as f64 * step);
                let fine = gauss(r12, a, b, &f);
                quad_error += (fine - gauss(r8, a, b, &f)).norm();
                direct += fine;
            }
        }
    }
    let bound = match ctx {
        Some(c) => Some(certify(h_grid, m, t, grid, &bs, c)?),
        None => None,
    };
    Ok(OscIntegralResult { direct, quad_error, bound })
}

/// Which estimate produced the certified bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundPath {
    /// `|M| ≥ (32/5)⟨t⟩^{4/3}`: boundary terms plus integration by parts.
    IntegrationByParts,
    /// Change of variable `E(ρ)` and Van der Corput on each component.
    VanDerCorput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SegmentKind {
    VanDerCorput(u32),
    /// `sup|F| · length`, used where it beats the oscillatory estimate.
    Trivial,
    /// Neither derivative cleared its floor.
    Fallback,
}

/// Bound on one sub-interval of a component, in the `ρ` variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentBound {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub kind: SegmentKind,
    /// Sampled lower bound of `|d^k E/dρ^k|` (zero unless Van der Corput).
    pub c: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentBound {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub layer: Option<usize>,
    pub segments: Vec<SegmentBound>,
    pub bound: f64,
}

/// Certified upper bound on `|I_M(t)|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifiedBound {
    pub path: BoundPath,
    /// Integration-by-parts or summed Van der Corput bound.
    pub main: f64,
    /// `½ ε_J^{3σ/4}`, only on the Van der Corput path.
    pub step1_rho: f64,
    /// `2|M| ε_J^{1/4}`, only on the Van der Corput path.
    pub step1_m: f64,
    pub total: f64,
    pub component_count: usize,
    pub components: Vec<ComponentBound>,
    /// Set when some segment fell back to the length bound.
    pub flagged: bool,
}

/// Certified bound for `I_M(t)` with amplitude `h_grid` on `grid`, using the
/// layers of `partition` (computed on the same energies).
pub fn certified_im_bound(h_grid: &[f64], m: f64, t: f64, grid: &SpectralGrid, ctx: BoundContext<'_>) -> Result<CertifiedBound> {
    if h_grid.len() != grid.len() {
        return Err(Error::Invalid("amplitude length differs from grid".into()));
    }
    certify(h_grid, m, t, grid, &bands(grid, h_grid), ctx)
}

fn certify(h: &[f64], m: f64, t: f64, grid: &SpectralGrid, bs: &[Band], ctx: BoundContext<'_>) -> Result<CertifiedBound> {
    let e = grid.energies();
    let cells = &ctx.partition.cells;
    if cells.len() != e.len() || cells.iter().zip(e).any(|(c, x)| (c.energy - x).abs() > 1e-12 * (1.0 + x.abs())) {
        return Err(Error::Invalid("partition and grid must share their energies".into()));
    }
    if ctx.j >= ctx.schedule.epsilon.len() {
        return Err(Error::Invalid("schedule too short for J".into()));
    }
    if ctx.samples < 2 {
        return Err(Error::Invalid("need at least two transversality samples".into()));
    }
    check_amplitude(h, e, bs)?;

    let pieces = split_by_layer(bs, cells.iter().map(|c| c.layer).collect());
    let count = pieces.len();
    let eps0 = ctx.schedule.epsilon[0];
    let eps_j = ctx.schedule.epsilon[ctx.j];
    let sigma = ctx.schedule.sigma;
    let jt = japanese(t);

    if m.abs() >= 32.0 / 5.0 * jt.powf(4.0 / 3.0) {
        let width = match (bs.first(), bs.last()) {
            (Some(f), Some(l)) => l.energy(*l.knots.last().expect("knots")) - f.energy(f.knots[0]),
            _ => 0.0,
        };
        let main = 32.0 / 15.0 / m.abs() * count as f64 + 32.0 / 15.0 / m.abs() * width * jt;
        let components = pieces
            .iter()
            .map(|p| ComponentBound { rho_lo: p.lo, rho_hi: p.hi, layer: p.layer, segments: Vec::new(), bound: f64::NAN })
            .collect();
        return Ok(CertifiedBound {
            path: BoundPath::IntegrationByParts,
            main,
            step1_rho: 0.0,
            step1_m: 0.0,
            total: main,
            component_count: count,
            components,
            flagged: false,
        });
    }

    let floor0 = 1.0 - eps0.powf(1.0 / 3.0);
    let mut components = Vec::with_capacity(count);
    let mut flagged = false;
    let mut main = 0.0;
    for p in &pieces {
        let band = &bs[p.band];
        let floor_hi = match p.layer {
            Some(l) if l > 0 => ctx.schedule.epsilon[l - 1].powf(7.0 * sigma / 8.0),
            _ => floor0,
        };
        let comp = component_bound(band, p, t, ctx.samples, floor0, floor_hi)?;
        flagged |= comp.segments.iter().any(|s| s.kind == SegmentKind::Fallback);
        main += comp.bound;
        components.push(comp);
    }
    let step1_rho = 0.5 * eps_j.powf(3.0 * sigma / 4.0);
    let step1_m = 2.0 * m.abs() * eps_j.powf(0.25);
    Ok(CertifiedBound {
        path: BoundPath::VanDerCorput,
        main,
        step1_rho,
        step1_m,
        total: main + step1_rho + step1_m,
        component_count: count,
        components,
        flagged,
    })
}

fn check_amplitude(h: &[f64], e: &[f64], bs: &[Band]) -> Result<()> {
    for b in bs {
        for i in b.first..=b.last {
            if h[i].abs() > AMPLITUDE_CAP * (1.0 + 1e-12) {
                return Err(Error::Precondition(format!("|h| = {} exceeds 16/15 at E = {}", h[i].abs(), e[i])));
            }
            if i < b.last {
                let d = (h[i + 1] - h[i]) / (e[i + 1] - e[i]);
                if d.abs() > AMPLITUDE_CAP * (1.0 + 1e-9) {
                    return Err(Error::Precondition(format!("|h'| = {} exceeds 16/15 near E = {}", d.abs(), e[i])));
                }
            }
        }
    }
    Ok(())
}

/// Part of a band with a single KAM layer.
struct Piece {
    band: usize,
    lo: f64,
    hi: f64,
    layer: Option<usize>,
}

fn split_by_layer(bs: &[Band], layers: Vec<Option<usize>>) -> Vec<Piece> {
    let mut out = Vec::new();
    for (bi, b) in bs.iter().enumerate() {
        // end nodes may sit in a gap; label them by their inner neighbour
        let inner = |i: usize| -> Option<usize> {
            let i = i.clamp((b.first + 1).min(b.last), b.last.saturating_sub(1).max(b.first));
            layers[i]
        };
        let mut lo = b.knots[0];
        let mut cur = inner(b.first);
        for i in b.first + 1..b.last {
            if layers[i] != cur {
                let x = b.knots[i - b.first];
                out.push(Piece { band: bi, lo, hi: x, layer: cur });
                lo = x;
                cur = layers[i];
            }
        }
        out.push(Piece { band: bi, lo, hi: *b.knots.last().expect("knots"), layer: cur });
    }
    out
}

fn component_bound(band: &Band, p: &Piece, t: f64, samples: usize, floor0: f64, floor_hi: f64) -> Result<ComponentBound> {
    let len = p.hi - p.lo;
    let xs: Vec<f64> = (0..samples).map(|i| p.lo + len * (i as f64 + 0.5) / samples as f64).collect();
    let data: Vec<([f64; 4], [f64; 4])> = xs
        .iter()
        .map(|&x| {
            let (pe, ph) = band.local(x);
            (pe.derivs(x), ph.derivs(x))
        })
        .collect();
    // higher layers try k = 2 against their own floor first, then the
    // layer-0 dichotomy
    let layer0 = !matches!(p.layer, Some(l) if l > 0);
    let class: Vec<Option<u32>> = data
        .iter()
        .map(|(d, _)| {
            if !layer0 && d[2].abs() >= floor_hi {
                Some(2)
            } else if d[3].abs() >= floor0 {
                Some(3)
            } else if d[2].abs() >= floor0 {
                Some(2)
            } else {
                None
            }
        })
        .collect();
    let f_at = |x: f64| band.local(x).1.value(x);
    let mut segments = Vec::new();
    let mut s = 0;
    while s < samples {
        let mut e = s + 1;
        while e < samples && class[e] == class[s] {
            e += 1;
        }
        let lo = if s == 0 { p.lo } else { 0.5 * (xs[s - 1] + xs[s]) };
        let hi = if e == samples { p.hi } else { 0.5 * (xs[e - 1] + xs[e]) };
        let mut fs = vec![f_at(lo)];
        fs.extend(data[s..e].iter().map(|(_, hd)| hd[0]));
        fs.push(f_at(hi));
        let tv: f64 = fs.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let sup = fs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let trivial = sup * (hi - lo);
        let seg = match class[s] {
            Some(k) => {
                let c = data[s..e].iter().map(|(d, _)| d[k as usize].abs()).fold(f64::INFINITY, f64::min);
                let vdc = if t != 0.0 { vdc_raw(k, c, t, *fs.last().expect("nonempty"), tv)? } else { f64::INFINITY };
                if vdc <= trivial {
                    SegmentBound { rho_lo: lo, rho_hi: hi, kind: SegmentKind::VanDerCorput(k), c, bound: vdc }
                } else {
                    SegmentBound { rho_lo: lo, rho_hi: hi, kind: SegmentKind::Trivial, c, bound: trivial }
                }
            }
            None => SegmentBound { rho_lo: lo, rho_hi: hi, kind: SegmentKind::Fallback, c: 0.0, bound: trivial },
        };
        segments.push(seg);
        s = e;
    }
    let bound = segments.iter().map(|s| s.bound).sum();
    Ok(ComponentBound { rho_lo: p.lo, rho_hi: p.hi, layer: p.layer, segments, bound })
}

/// Outcome of fuzzing the certified bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImFuzzReport {
    pub trials: usize,
    /// `|direct| > total + quad_error` without a fallback flag.
    pub violations: usize,
    pub flagged: usize,
    pub large_m_trials: usize,
    pub worst_ratio: f64,
}

/// Random `(M, t, h)` with `h(E) = α cos(βE + φ)` inside the `C¹` caps; half
/// the trials use `|M|` on the integration-by-parts side.
pub fn im_fuzz(grid: &SpectralGrid, ctx: BoundContext<'_>, trials: usize, seed: u64) -> Result<ImFuzzReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ImFuzzReport { trials, violations: 0, flagged: 0, large_m_trials: 0, worst_ratio: 0.0 };
    for i in 0..trials {
        let t = 10f64.powf(rng.gen_range(0.0..2.3)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let m = if i % 2 == 0 {
            rng.gen_range(-20.0..20.0)
        } else {
            rep.large_m_trials += 1;
            32.0 / 5.0 * japanese(t).powf(4.0 / 3.0) * rng.gen_range(1.0..3.0)
        };
        let beta: f64 = rng.gen_range(0.0..3.0);
        let alpha = AMPLITUDE_CAP / beta.max(1.0) * rng.gen_range(0.0..1.0);
        let phi = rng.gen_range(0.0..2.0 * PI);
        let h: Vec<f64> = grid.energies().iter().map(|e| alpha * (beta * e + phi).cos()).collect();
        let r = spectral_osc_integral(&h, m, t, grid, Some(ctx))?;
        let b = r.bound.expect("bound requested");
        if b.flagged {
            rep.flagged += 1;
        } else if r.direct.norm() > b.total + r.quad_error {
            rep.violations += 1;
        }
        rep.worst_ratio = rep.worst_ratio.max(r.direct.norm() / b.total);
    }
    Ok(rep)
}
