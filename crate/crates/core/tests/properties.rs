//! Randomised and structural invariants of every module.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use qpdl::cocycle::{cocycle_product, lyapunov_exponent, rotation_number, transfer_matrix};
use qpdl::kam::{partition_spectrum, reduce, schedule, SpectralPartition};
use qpdl::lattice_operator::{apply_h, detect_gaps, ids_grid, truncated_spectrum, LatticeState};
use qpdl::linalg::{tridiag_count_below, tridiag_eigenvalues};
use qpdl::nls::{chain_terms, nls_evolve, nonlinear_step};
use qpdl::oscillatory::{
    certified_im_bound, oscillatory_quadrature, spectral_osc_integral, vdc_bound, BoundContext, BoundPath,
    PhaseProfile,
};
use qpdl::propagator::{evolve, japanese, Propagator};
use qpdl::spectral_transform::{bloch_wave, eigen_residual, eigenfunctions, Normalization, SpectralGrid, SpectralTable};
use qpdl::torus_freq::{diophantine_margin, dist_pi, half_resonance, reduce_mod_pi};
use qpdl::{FourierSeries, Frequency, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn golden() -> Frequency {
    Frequency::golden()
}

fn random_state(half_width: usize, support: usize, seed: u64) -> LatticeState {
    LatticeState::random(half_width, support, &mut ChaCha8Rng::seed_from_u64(seed))
}

// torus_freq

proptest! {
    #[test]
    fn half_resonance_is_antisymmetric_mod_pi(k in -200i64..200) {
        let f = golden();
        let a = half_resonance(&[k], &f).value;
        let b = half_resonance(&[-k], &f).value;
        prop_assert!(dist_pi(a + b) < 1e-9);
        prop_assert!((0.0..PI).contains(&a));
    }

    #[test]
    fn reduce_mod_pi_lands_in_range(x in -1e4f64..1e4) {
        let r = reduce_mod_pi(x);
        prop_assert!((0.0..PI).contains(&r));
        prop_assert!(dist_pi(r - x) < 1e-9);
    }
}

#[test]
fn diophantine_margin_is_non_increasing_in_k() {
    let f = Frequency::unchecked(vec![2.0f64.sqrt(), 3.0f64.sqrt()], 1e-2, 2.0).unwrap();
    let mut prev = f64::INFINITY;
    for k in 1..=30 {
        let (m, _) = diophantine_margin(&f, k);
        assert!(m <= prev);
        prev = m;
    }
}

#[test]
fn rational_frequencies_are_rejected() {
    // ω = 2π·3/7: ⟨7,ω⟩ ∈ 2πℤ
    let w = 2.0 * PI * 3.0 / 7.0;
    assert!(Frequency::new(vec![w], 1e-6, 1.0).is_err());
    let f = Frequency::unchecked(vec![w], 1e-6, 1.0).unwrap();
    assert!(diophantine_margin(&f, 7).0 < 1e-12);
}

// potential

proptest! {
    #[test]
    fn shift_commutes_with_evaluation(seed in 0u64..1000, d0 in -3.0f64..3.0, d1 in -3.0f64..3.0,
                                      t0 in -3.0f64..3.0, t1 in -3.0f64..3.0) {
        let v = FourierSeries::random_analytic(2, 0.3, 0.5, 4, seed);
        let lhs = v.shifted(&[d0, d1]).eval(&[t0, t1]);
        let rhs = v.eval(&[t0 + d0, t1 + d1]);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert!(v.eval_complex(&[t0, t1]).im.abs() < 1e-13);
    }

    #[test]
    fn analytic_norm_is_monotone_in_radius(seed in 0u64..1000, r in 0.0f64..2.0, dr in 0.0f64..1.0) {
        let v = FourierSeries::random_analytic(1, 0.1, 0.7, 6, seed);
        prop_assert!(v.analytic_norm_bound(r) <= v.analytic_norm_bound(r + dr));
    }

    #[test]
    fn cosine_norm_is_exponential(eps in 1e-4f64..1.0, r in 0.0f64..3.0) {
        let v = FourierSeries::cosine(1, eps);
        prop_assert!((v.analytic_norm_bound(r) / (2.0 * eps) / r.exp() - 1.0).abs() < 1e-14);
    }
}

// lattice_operator

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn h_is_symmetric(seed in 0u64..1000, eps in 0.0f64..1.0, theta in 0.0f64..6.3) {
        let f = golden();
        let v = FourierSeries::cosine(1, eps);
        let p = random_state(40, 40, seed);
        let q = random_state(40, 40, seed + 1);
        let a = p.inner(&apply_h(&v, &[theta], &f, &q));
        let b = apply_h(&v, &[theta], &f, &p).inner(&q);
        prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        let s = C64::new(0.3, -1.2);
        let lin = apply_h(&v, &[theta], &f, &p.combine(s, &q, C64::new(1.0, 0.0)));
        let sep = apply_h(&v, &[theta], &f, &p).combine(s, &apply_h(&v, &[theta], &f, &q), C64::new(1.0, 0.0));
        prop_assert!(lin.max_abs_diff(&sep) < 1e-12);
    }

    #[test]
    fn section_spectrum_is_enclosed(eps in 0.0f64..1.5, theta in 0.0f64..6.3) {
        let v = FourierSeries::cosine(1, eps);
        let s = truncated_spectrum(&v, &[theta], &golden(), 60).unwrap();
        let b = 2.0 + v.sup_bound();
        prop_assert!(s.inf >= -b - 1e-12 && s.sup <= b + 1e-12);
    }

    #[test]
    fn sturm_count_matches_eigenvalues(seed in 0u64..1000, x in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..25).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let e = vec![-1.0; 24];
        let ev = tridiag_eigenvalues(&d, &e).unwrap();
        prop_assert_eq!(tridiag_count_below(&d, &e, x), ev.iter().filter(|l| **l < x).count());
    }
}

#[test]
fn ids_is_monotone_and_flat_across_gaps() {
    let f = golden();
    let v = FourierSeries::cosine(1, 0.15);
    // the gap resolution must exceed the Dirichlet level spacing ~ 2π/(2N+1)
    let n = 1000;
    let es: Vec<f64> = (0..200).map(|i| -2.4 + 4.8 * i as f64 / 199.0).collect();
    let k = ids_grid(&es, &v, &f, n, 8).unwrap();
    assert!(k.windows(2).all(|w| w[1] >= w[0]));
    let gaps = detect_gaps(&v, &f, n, 5e-3, 16).unwrap();
    assert!(!gaps.gaps.is_empty());
    let tol = 2.0 / (2 * n + 1) as f64;
    for g in &gaps.gaps {
        let inside = ids_grid(&[g.lo + 0.1 * g.width(), g.hi - 0.1 * g.width()], &v, &f, n, 16).unwrap();
        assert!((inside[1] - inside[0]).abs() <= tol, "gap [{}, {}]", g.lo, g.hi);
        // each gap carries a half-resonance label
        let labelled = (-12i64..=12).any(|m| dist_pi(g.rho - half_resonance(&[m], &f).value) < 5e-3);
        assert!(labelled, "gap at rho = {}", g.rho);
    }
}

// cocycle

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transfer_matrices_are_unimodular(e in -3.0f64..3.0, theta in 0.0f64..6.3, eps in 0.0f64..1.0) {
        let v = FourierSeries::cosine(1, eps);
        prop_assert_eq!(transfer_matrix(e, &v, &[theta]).det(), 1.0);
        let p = cocycle_product(e, &v, &[theta], &golden(), 300);
        // ad − bc cannot resolve better than the rounding of its products
        let floor = 8.0 * f64::EPSILON * p.norm().powi(2);
        prop_assert!((p.det() - 1.0).abs() < 1e-8 + floor);
    }

    #[test]
    fn rotation_number_is_monotone(e in -2.6f64..2.6, de in 0.0f64..0.3) {
        let f = golden();
        let v = FourierSeries::cosine(1, 0.2);
        let a = rotation_number(e, &v, &[0.0], &f, 20_000);
        let b = rotation_number(e + de, &v, &[0.0], &f, 20_000);
        prop_assert!(b.value >= a.value - 2.0 * a.oscillation.max(b.oscillation));
        prop_assert!((0.0..=PI).contains(&a.value));
        prop_assert!(lyapunov_exponent(e, &v, &[0.0], &f, 2000) >= 0.0);
    }
}

#[test]
fn rotation_number_outside_the_spectrum() {
    let f = golden();
    let v = FourierSeries::cosine(1, 0.2);
    assert!(rotation_number(-2.5, &v, &[0.0], &f, 20_000).value < 1e-12);
    assert!((rotation_number(2.5, &v, &[0.0], &f, 20_000).value - PI).abs() < 1e-3);
}

// kam

#[test]
fn reduction_steps_contract_and_keep_residuals() {
    let f = golden();
    let v = FourierSeries::cosine(1, 1e-3);
    let s = schedule(1e-3, 2, 20).unwrap();
    for e in [-1.9, -1.1, -0.35, 0.0, 0.8, 1.6] {
        let st = match reduce(e, &v, &f, &s, 2) {
            Ok(st) => st,
            Err(err) => panic!("E = {e}: {err}"),
        };
        assert!(st.residual_norm < 1e-8, "E = {e}");
        for r in &st.steps {
            assert!(r.f_norm_after < r.f_norm_before, "E = {e}, step {}", r.j);
        }
        for (l, k) in st.history.iter().enumerate() {
            let n1: i64 = k.iter().map(|x| x.abs()).sum();
            assert!(n1 == 0 || n1 as usize <= s.n_trunc[l]);
        }
        for j in 0..=2 {
            assert!(reduce(e, &v, &f, &s, j).unwrap().residual_norm < 1e-8);
        }
    }
}

#[test]
fn partition_labels_survive_refinement() {
    let f = golden();
    let v = FourierSeries::cosine(1, 1e-3);
    let s = schedule(1e-3, 2, 20).unwrap();
    let coarse: Vec<f64> = (0..41).map(|i| -2.1 + 4.2 * i as f64 / 40.0).collect();
    let fine: Vec<f64> = (0..81).map(|i| -2.1 + 4.2 * i as f64 / 80.0).collect();
    let a = partition_spectrum(&v, &f, &s, 2, &coarse).unwrap();
    let b = partition_spectrum(&v, &f, &s, 2, &fine).unwrap();
    for (i, c) in a.cells.iter().enumerate() {
        let near_boundary = |p: &SpectralPartition| {
            p.intervals.iter().any(|iv| (iv.lo - c.energy).abs() <= 4.2 / 40.0 || (iv.hi - c.energy).abs() <= 4.2 / 40.0)
        };
        if c.layer != b.cells[2 * i].layer {
            assert!(near_boundary(&a) || near_boundary(&b), "E = {}", c.energy);
        }
    }
}

// spectral_transform

#[test]
fn bloch_waves_are_generalised_eigenfunctions() {
    let f = golden();
    let v = FourierSeries::cosine(1, 1e-3);
    let s = schedule(1e-3, 2, 20).unwrap();
    for e in [-1.5, -0.2, 0.9] {
        let st = reduce(e, &v, &f, &s, 2).unwrap();
        let w = bloch_wave(&st, &[0.3], 60, Normalization::Density).unwrap();
        assert!(eigen_residual(&w, &v, &[0.3], &f, 5) < 1e-6, "E = {e}");
        assert!(eigenfunctions(&st, &[0.3], 30).unwrap().misfit < 1e-6);
    }
}

#[test]
fn free_round_trip_improves_with_resolution() {
    let q = random_state(10, 10, 5);
    let err = |points: usize| {
        let es: Vec<f64> = (0..points).map(|i| -2.0 + 4.0 * i as f64 / (points - 1) as f64).collect();
        let t = SpectralTable::free(es, 10).unwrap();
        t.inverse(&t.transform(&q), 10).max_abs_diff(&q)
    };
    let (a, b, c) = (err(200), err(400), err(800));
    assert!(b <= a && c <= b, "{a:e} {b:e} {c:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transforms_are_linear(seed in 0u64..1000, re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let es: Vec<f64> = (0..300).map(|i| -2.0 + 4.0 * i as f64 / 299.0).collect();
        let t = SpectralTable::free(es, 12).unwrap();
        let (p, q) = (random_state(12, 12, seed), random_state(12, 12, seed + 7));
        let a = C64::new(re, im);
        let one = C64::new(1.0, 0.0);
        let lhs = t.transform(&p.combine(a, &q, one));
        let rhs = t.transform(&p).combine(a, &t.transform(&q), one);
        for i in 0..lhs.g1.len() {
            prop_assert!((lhs.g1[i] - rhs.g1[i]).norm() < 1e-12 && (lhs.g2[i] - rhs.g2[i]).norm() < 1e-12);
        }
        let back = t.inverse(&lhs, 12);
        let sep = t.inverse(&t.transform(&p), 12).combine(a, &t.inverse(&t.transform(&q), 12), one);
        prop_assert!(back.max_abs_diff(&sep) < 1e-12);
    }
}

// oscillatory

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_respects_vdc(a2 in 0.5f64..3.0, a1 in -2.0f64..2.0, lambda in 1.0f64..500.0, neg in any::<bool>()) {
        let lam = if neg { -lambda } else { lambda };
        let p = PhaseProfile::polynomial(0.0, 1.0, &[0.0, a1, a2], 2).unwrap();
        let q = oscillatory_quadrature(&p, &|_| 1.0, lam);
        prop_assert!(q.value.norm() <= vdc_bound(&p, lam, 1.0, 0.0).unwrap() + q.error);
    }

    #[test]
    fn vdc_bound_is_homogeneous(lambda in 1.0f64..1e4, s in 1.0f64..100.0, k in 2u32..4) {
        let p = PhaseProfile::new(0.0, 1.0, Arc::new(|x| [x * x * x / 6.0, x * x / 2.0, x, 1.0]), k, 0.5).unwrap_or_else(|_| {
            PhaseProfile::new(0.0, 1.0, Arc::new(|x| [x * x * x / 6.0 + x * x, x * x / 2.0 + 2.0 * x, x + 2.0, 1.0]), k, 1.0).unwrap()
        });
        let r = vdc_bound(&p, s * lambda, 1.0, 0.0).unwrap() / vdc_bound(&p, lambda, 1.0, 0.0).unwrap();
        prop_assert!((r - s.powf(-1.0 / k as f64)).abs() < 1e-12);
    }
}

struct OscSetup {
    grid: SpectralGrid,
    partition: SpectralPartition,
    schedule: qpdl::kam::KamSchedule,
}

fn osc_setup() -> &'static OscSetup {
    static S: OnceLock<OscSetup> = OnceLock::new();
    S.get_or_init(|| {
        let f = golden();
        let v = FourierSeries::cosine(1, 1e-3);
        let s = schedule(1e-3, 2, 20).unwrap();
        let es = SpectralGrid::uniform_energies(&v, 400, 0.01);
        let grid = SpectralGrid::build(&v, &f, es.clone(), 5000).unwrap();
        let partition = partition_spectrum(&v, &f, &s, 2, &es).unwrap();
        OscSetup { grid, partition, schedule: s }
    })
}

#[test]
fn zero_frequency_integral_is_total_rho_variation() {
    let o = osc_setup();
    let h = vec![1.0; o.grid.len()];
    let r = spectral_osc_integral(&h, 0.0, 0.0, &o.grid, None).unwrap();
    let span = o.grid.rho[o.grid.len() - 1] - o.grid.rho[0];
    assert!((r.direct.re - span).abs() <= 1e-9 + r.quad_error);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn large_m_bound_decreases_in_m(t in -50.0f64..50.0, m in 1.0f64..3.0, dm in 0.0f64..100.0) {
        let o = osc_setup();
        let ctx = BoundContext { partition: &o.partition, schedule: &o.schedule, j: 2, samples: 64 };
        let h = vec![0.5; o.grid.len()];
        let m0 = 32.0 / 5.0 * japanese(t).powf(4.0 / 3.0) * m;
        let a = certified_im_bound(&h, m0, t, &o.grid, ctx).unwrap();
        let b = certified_im_bound(&h, -(m0 + dm), t, &o.grid, ctx).unwrap();
        prop_assert_eq!(a.path, BoundPath::IntegrationByParts);
        prop_assert!(b.total <= a.total);
    }

    #[test]
    fn certified_bound_dominates_direct_value(t in -100.0f64..100.0, m in -20.0f64..20.0, beta in 0.0f64..1.0) {
        let o = osc_setup();
        let ctx = BoundContext { partition: &o.partition, schedule: &o.schedule, j: 2, samples: 64 };
        let h: Vec<f64> = o.grid.energies().iter().map(|e| (beta * e).cos()).collect();
        let r = spectral_osc_integral(&h, m, t, &o.grid, Some(ctx)).unwrap();
        let b = r.bound.unwrap();
        prop_assert!(b.flagged || r.direct.norm() <= b.total);
    }
}

// propagator

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_is_unitary_and_conserves_energy(seed in 0u64..1000, t in 0.0f64..60.0, eps in 0.0f64..0.5) {
        let f = golden();
        let v = FourierSeries::cosine(1, eps);
        let q = random_state(400, 10, seed);
        let p = Propagator::new(&v, &[0.7], &f, 400);
        let r = p.evolve(&q, t).unwrap();
        prop_assert!((r.l2_norm() / q.l2_norm() - 1.0).abs() < 1e-10);
        prop_assert!((p.energy(&r) - p.energy(&q)).abs() <= 1e-9 * p.energy(&q).abs().max(q.l2_norm().powi(2)));
    }

    #[test]
    fn group_property_and_time_reversal(seed in 0u64..1000, s in 0.0f64..30.0, t in 0.0f64..30.0) {
        let f = golden();
        let v = FourierSeries::cosine(1, 0.2);
        let q = random_state(400, 10, seed);
        let th = [1.3];
        let two = evolve(&evolve(&q, s, &v, &th, &f).unwrap(), t, &v, &th, &f).unwrap();
        let one = evolve(&q, s + t, &v, &th, &f).unwrap();
        prop_assert!(two.max_abs_diff(&one) < 1e-9);
        let back = evolve(&evolve(&q, t, &v, &th, &f).unwrap().conj(), t, &v, &th, &f).unwrap();
        prop_assert!(back.max_abs_diff(&q.conj()) < 1e-9);
    }

    #[test]
    fn evolution_is_linear(seed in 0u64..1000, re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let f = golden();
        let v = FourierSeries::cosine(1, 0.1);
        let (p, q) = (random_state(200, 10, seed), random_state(200, 10, seed + 3));
        let a = C64::new(re, im);
        let one = C64::new(1.0, 0.0);
        let lhs = evolve(&p.combine(a, &q, one), 25.0, &v, &[0.0], &f).unwrap();
        let rhs = evolve(&p, 25.0, &v, &[0.0], &f).unwrap().combine(a, &evolve(&q, 25.0, &v, &[0.0], &f).unwrap(), one);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
    }
}

// nls

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nonlinear_step_keeps_moduli(seed in 0u64..1000, p in 3.0f64..7.0, tau in -1.0f64..1.0) {
        let q0 = random_state(20, 20, seed);
        let mut q = q0.clone();
        nonlinear_step(&mut q, p, 1.0, tau);
        for (a, b) in q.values().iter().zip(q0.values()) {
            prop_assert!((a.norm() - b.norm()).abs() <= 1e-15 * b.norm().max(1.0));
        }
    }

    #[test]
    fn chain_inequality(seed in 0u64..1000, p in 3.0f64..8.0, s in 0.01f64..3.0) {
        let q = random_state(20, 20, seed).scale(C64::new(s, 0.0));
        let (lhs, rhs) = chain_terms(&q, p);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }
}

#[test]
fn strang_splitting_is_second_order() {
    let f = golden();
    let v = FourierSeries::cosine(1, 0.01);
    let phi = LatticeState::delta(200).scale(C64::new(0.8, 0.0));
    let run = |dt: f64| nls_evolve(&phi, 3.0, 1.0, 10.0, dt, &v, &[0.0], &f).unwrap();
    let r = run(0.0025).final_state;
    let e1 = run(0.02).final_state.max_abs_diff(&r);
    let e2 = run(0.01).final_state.max_abs_diff(&r);
    let ratio = e1 / e2;
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    let tr = run(0.01);
    assert!(tr.chain_ok);
    assert!(tr.l2_drift < 1e-8);
}
