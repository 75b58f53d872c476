use maxfeec::dynamics::{
    energy, energy_breakdown, evolve, flow_ha, flow_he, gauss_residual, step, step_matrix, symplectic_check, FieldState, Formulation,
    InverseMass, QUsage, SplitKind, SplitScheme, UnitSystem,
};
use maxfeec::feec::{build_space, Cochain, Family, FormSpace};
use maxfeec::mesh::{generate_cubical_lattice, generate_periodic_triangulation, MeshMethod};
use maxfeec::operators::{derivative_matrix, mass_matrix};
use maxfeec::spai::{make_pattern, spai_approximate_inverse, PatternKind};
use maxfeec::{FeecError, Mesh, Sparse};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use std::sync::Arc;

struct System {
    s1: FormSpace<f64>,
    s2: FormSpace<f64>,
    curl: Sparse,
    m1: Sparse,
    m2: Sparse,
}

fn system(mesh: Mesh, family: Family) -> System {
    let mesh = Arc::new(mesh);
    let s1 = build_space(&mesh, family, 1).unwrap();
    let s2 = build_space(&mesh, family, 2).unwrap();
    let curl = derivative_matrix(&s1, &s2).unwrap();
    let m1 = mass_matrix(&s1);
    let m2 = mass_matrix(&s2);
    System { s1, s2, curl, m1, m2 }
}

fn small_triangulation(n: usize) -> System {
    system(generate_periodic_triangulation(n, 1.0, 1.0, 3, MeshMethod::DelaunayTiled).unwrap(), Family::P1Minus)
}

fn spai_q(sys: &System, kind: PatternKind) -> Sparse {
    spai_approximate_inverse(&sys.m1, &make_pattern(&sys.m1, kind).unwrap()).unwrap().0
}

fn scheme(sys: &System, kind: SplitKind, dt: f64, q: InverseMass<f64>, units: UnitSystem<f64>) -> SplitScheme<f64> {
    SplitScheme::new(kind, dt, q, sys.curl.clone(), sys.m2.clone(), units).unwrap()
}

fn random_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_state(sys: &System, seed: u64) -> FieldState<f64> {
    let n = sys.s1.n_dofs();
    let a = Cochain::plain(&sys.s1, random_values(n, seed)).unwrap();
    let e = Cochain::plain(&sys.s1, random_values(n, seed + 1)).unwrap();
    FieldState::new(Formulation::AE, a, e)
}

fn to_na(a: &Sparse) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.rows(), a.cols());
    for (i, j, v) in a.triplets() {
        m[(i, j)] += v;
    }
    m
}

/// Generator of the exact dynamics on `(a, e)` with a symmetric `Q`.
fn generator(sys: &System, q: &DMatrix<f64>, units: UnitSystem<f64>) -> DMatrix<f64> {
    let n = sys.s1.n_dofs();
    let c = to_na(&sys.curl);
    let k = c.transpose() * to_na(&sys.m2) * c;
    let mut l = DMatrix::zeros(2 * n, 2 * n);
    l.view_mut((0, n), (n, n)).copy_from(&(-q));
    l.view_mut((n, 0), (n, n)).copy_from(&(k * units.c2()));
    l
}

fn stack(s: &FieldState<f64>) -> DVector<f64> {
    DVector::from_iterator(s.first.len() * 2, s.first.values.iter().chain(&s.e.values).copied())
}

#[test]
fn scalar_oscillator_step_has_closed_form_invariants() {
    // one edge, one face: a'' = -q k c^2 a
    let (q, k) = (0.7, 1.9);
    let units = UnitSystem::new(2.0, 0.25).unwrap();
    let omega2 = q * k * units.c2();
    let curl = Sparse::from_triplets(1, 1, vec![(0, 0, 1.0)]);
    let m2 = Sparse::from_triplets(1, 1, vec![(0, 0, k)]);
    for h in [0.01, 0.1, 0.5] {
        let qm = InverseMass::Sparse(Sparse::from_triplets(1, 1, vec![(0, 0, q)]));
        let s = SplitScheme::new(SplitKind::Strang, h, qm, curl.clone(), m2.clone(), units).unwrap();
        let phi = step_matrix(&s, 4).unwrap();
        let (p00, p10, p01, p11) = (phi[0][0], phi[0][1], phi[1][0], phi[1][1]);
        assert!((p00 + p11 - (2.0 - h * h * omega2)).abs() < 1e-14, "trace at h = {h}");
        assert!((p00 * p11 - p01 * p10 - 1.0).abs() < 1e-14, "determinant at h = {h}");
        // Strang is time-symmetric: both diagonal entries agree
        assert!((p00 - p11).abs() < 1e-14);
    }
}

#[test]
fn zero_step_and_zero_field_are_fixed_points() {
    let sys = small_triangulation(12);
    let units = UnitSystem::natural();
    let q = InverseMass::Sparse(spai_q(&sys, PatternKind::M1));
    let s0 = random_state(&sys, 1);
    for kind in [SplitKind::Strang, SplitKind::LieTrotter] {
        let sc = scheme(&sys, kind, 0.0, q.clone(), units);
        let out = evolve(&s0, &sc, 5);
        assert_eq!(out.first.values, s0.first.values);
        assert_eq!(out.e.values, s0.e.values);
        assert_eq!(out.time, 0.0);
    }
    let sc = scheme(&sys, SplitKind::Strang, 0.01, q, units);
    let mut z = s0.clone();
    z.e.values.iter_mut().for_each(|x| *x = 0.0);
    assert_eq!(flow_he(&z, 0.3, &sc).first.values, z.first.values);
    z.first.values.iter_mut().for_each(|x| *x = 0.0);
    let out = evolve(&z, &sc, 10);
    assert!(out.first.values.iter().chain(&out.e.values).all(|&x| x == 0.0));
    assert!((out.time - 0.1).abs() < 1e-15);
}

#[test]
fn negative_or_nan_steps_are_rejected() {
    let sys = small_triangulation(12);
    let q = InverseMass::Sparse(spai_q(&sys, PatternKind::Diagonal));
    for dt in [-1e-3, f64::NAN, f64::INFINITY] {
        let r = SplitScheme::new(SplitKind::Strang, dt, q.clone(), sys.curl.clone(), sys.m2.clone(), UnitSystem::natural());
        assert!(matches!(r, Err(FeecError::InvalidParameter(_))));
    }
}

#[test]
fn partial_flows_compose() {
    let sys = small_triangulation(15);
    let sc = scheme(&sys, SplitKind::Strang, 0.01, InverseMass::Sparse(spai_q(&sys, PatternKind::M1)), UnitSystem::new(1.5, 0.8).unwrap());
    let s = random_state(&sys, 7);
    let close = |x: &FieldState<f64>, y: &FieldState<f64>| (stack(x) - stack(y)).amax() < 1e-14;
    assert!(close(&flow_he(&flow_he(&s, 0.02, &sc), 0.03, &sc), &flow_he(&s, 0.05, &sc)));
    assert!(close(&flow_ha(&flow_ha(&s, 0.02, &sc), 0.03, &sc), &flow_ha(&s, 0.05, &sc)));
    // only step moves the clock
    assert_eq!(flow_he(&s, 0.5, &sc).time, 0.0);
    assert_eq!(step(&s, &sc).time, 0.01);
}

/// Slope of ln(err) against ln(dt) by least squares.
fn order(dts: &[f64], errs: &[f64]) -> f64 {
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / x.len() as f64, y.iter().sum::<f64>() / y.len() as f64);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn splitting_orders_against_matrix_exponential() {
    let sys = small_triangulation(9);
    assert!(2 * sys.s1.n_dofs() <= 60);
    let units = UnitSystem::new(2.0, 0.5).unwrap();
    let q = spai_q(&sys, PatternKind::M1);
    let qn = to_na(&q);
    let qsym = (&qn + qn.transpose()) * 0.5;
    let t_end = 0.2;
    let s0 = random_state(&sys, 11);
    let exact = (generator(&sys, &qsym, units) * t_end).exp() * stack(&s0);
    let dts: Vec<f64> = [64, 128, 256, 512, 1024].iter().map(|&k| t_end / k as f64).collect();
    for (kind, want) in [(SplitKind::Strang, 2.0), (SplitKind::LieTrotter, 1.0)] {
        let errs: Vec<f64> = dts
            .iter()
            .map(|&dt| {
                let sc = scheme(&sys, kind, dt, InverseMass::Sparse(q.clone()), units);
                let out = evolve(&s0, &sc, (t_end / dt).round() as usize);
                (stack(&out) - &exact).norm() / exact.norm()
            })
            .collect();
        let p = order(&dts, &errs);
        assert!((p - want).abs() <= 0.1, "{kind:?}: order {p}, errors {errs:?}");
    }
}

#[test]
fn exact_flow_conserves_the_discrete_energy() {
    let sys = small_triangulation(10);
    let units = UnitSystem::new(0.3, 4.0).unwrap();
    let q = spai_q(&sys, PatternKind::M1sq);
    let qn = to_na(&q);
    let qsym = (&qn + qn.transpose()) * 0.5;
    let sc = scheme(&sys, SplitKind::Strang, 1e-3, InverseMass::Sparse(q), units);
    let l = generator(&sys, &qsym, units);
    let s0 = random_state(&sys, 3);
    let h0 = energy(&s0, &sc);
    for t in [0.1, 0.7, 2.0] {
        let x = (&l * t).exp() * stack(&s0);
        let mut s = s0.clone();
        let n = s.first.len();
        s.first.values = x.rows(0, n).iter().copied().collect();
        s.e.values = x.rows(n, n).iter().copied().collect();
        assert!((energy(&s, &sc) - h0).abs() <= 1e-11 * h0, "t = {t}");
    }
}

#[test]
fn energy_terms_match_quadratic_forms() {
    let sys = small_triangulation(12);
    let units = UnitSystem::new(2.0, 3.0).unwrap();
    let q = spai_q(&sys, PatternKind::M1);
    let sc = scheme(&sys, SplitKind::Strang, 1e-3, InverseMass::Sparse(q.clone()), units);
    let s = random_state(&sys, 5);
    let e = DVector::from_vec(s.e.values.clone());
    let b = to_na(&sys.curl) * DVector::from_vec(s.first.values.clone());
    let br = energy_breakdown(&s, &sc);
    let qn = to_na(&q);
    assert!((br.electric - 0.5 * 2.0 * e.dot(&(&qn * &e))).abs() < 1e-12 * br.electric.abs());
    assert!((br.magnetic - 0.5 / 3.0 * b.dot(&(to_na(&sys.m2) * &b))).abs() < 1e-12 * br.magnetic);
    assert_eq!(br.total, br.electric + br.magnetic);
}

#[test]
fn strang_step_is_symplectic_for_every_pattern() {
    let sys = small_triangulation(30);
    let units = UnitSystem::new(1.7, 0.6).unwrap();
    let mut qs: Vec<InverseMass<f64>> = PatternKind::standard().iter().map(|&k| InverseMass::Sparse(spai_q(&sys, k))).collect();
    qs.push(InverseMass::exact(&sys.m1).unwrap());
    for q in qs {
        for dt in [0.0, 1e-3, 0.02] {
            for kind in [SplitKind::Strang, SplitKind::LieTrotter] {
                let dev = symplectic_check(&scheme(&sys, kind, dt, q.clone(), units)).unwrap();
                assert!(dev <= 1e-12, "{kind:?} dt {dt}: {dev}");
            }
        }
    }
}

#[test]
fn unsymmetrized_q_breaks_symplecticity_in_proportion_to_its_asymmetry() {
    let sys = small_triangulation(30);
    let q = spai_q(&sys, PatternKind::M1);
    let asym = q.asymmetry();
    assert!(asym > 1e-8, "M1-pattern inverse should not be symmetric");
    let units = UnitSystem::natural();
    for dt in [1e-3, 1e-2] {
        let sc = SplitScheme::with_q_usage(SplitKind::Strang, dt, InverseMass::Sparse(q.clone()), sys.curl.clone(), sys.m2.clone(), units, QUsage::AsProduced)
            .unwrap();
        assert_eq!(sc.q_usage(), QUsage::AsProduced);
        assert!((sc.q_asymmetry() - asym).abs() == 0.0);
        let dev = symplectic_check(&sc).unwrap();
        assert!(dev > 1e-12 && dev < 10.0 * dt * asym, "dt {dt}: deviation {dev}, asymmetry {asym}");
    }
}

#[test]
fn symplectic_check_refuses_large_systems() {
    let sys = small_triangulation(200);
    let sc = scheme(&sys, SplitKind::Strang, 1e-3, InverseMass::Sparse(spai_q(&sys, PatternKind::Diagonal)), UnitSystem::natural());
    assert!(matches!(symplectic_check(&sc), Err(FeecError::TooLarge { .. })));
}

fn lattice_system() -> (System, Sparse) {
    let sys = system(generate_cubical_lattice([3, 4, 3], [1.0, 0.5, 2.0]).unwrap(), Family::Q1Minus);
    let s3 = build_space(sys.s1.mesh(), Family::Q1Minus, 3).unwrap();
    let div = derivative_matrix(&sys.s2, &s3).unwrap();
    (sys, div)
}

#[test]
fn gauss_law_holds_over_long_runs() {
    let (sys, div) = lattice_system();
    let q = spai_q(&sys, PatternKind::M1);
    let sc = scheme(&sys, SplitKind::Strang, 0.02, InverseMass::Sparse(q), UnitSystem::natural());
    let s0 = random_state(&sys, 9).to_be(&sys.curl).unwrap();
    assert!(gauss_residual(&s0, &div).unwrap() <= 1e-13);
    let mut s = s0;
    for _ in 0..100 {
        s = evolve(&s, &sc, 100);
        let g = gauss_residual(&s, &div).unwrap();
        assert!(g <= 1e-13, "t = {}: {g}", s.time);
    }
    assert!(matches!(gauss_residual(&random_state(&sys, 1), &div), Err(FeecError::WrongFormulation(_))));
}

#[test]
fn both_formulations_follow_the_same_trajectory() {
    let (sys, _) = lattice_system();
    let sc = scheme(&sys, SplitKind::Strang, 0.01, InverseMass::exact(&sys.m1).unwrap(), UnitSystem::new(2.0, 0.5).unwrap());
    let ae = random_state(&sys, 4);
    let be = ae.to_be(&sys.curl).unwrap();
    let ae = evolve(&ae, &sc, 200);
    let be = evolve(&be, &sc, 200);
    let b_from_a = sys.curl.matvec(&ae.first.values);
    let scale = b_from_a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in b_from_a.iter().zip(&be.first.values) {
        assert!((x - y).abs() <= 1e-12 * scale.max(1.0));
    }
    for (x, y) in ae.e.values.iter().zip(&be.e.values) {
        assert!((x - y).abs() <= 1e-12);
    }
    assert!(be.to_be(&sys.curl).is_err());
}

#[test]
fn strang_energy_error_stays_bounded() {
    let sys = small_triangulation(40);
    let sc = scheme(&sys, SplitKind::Strang, 5e-3, InverseMass::Sparse(spai_q(&sys, PatternKind::M1)), UnitSystem::natural());
    let mut s = random_state(&sys, 2);
    let h0 = energy(&s, &sc);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        s = evolve(&s, &sc, 40);
        worst = worst.max(((energy(&s, &sc) - h0) / h0).abs());
    }
    assert!(worst < 0.05, "relative energy drift {worst}");
}
