//! Acceptance run: one PASS/FAIL line per criterion, with measured values,
//! pinned tolerances and wall time. Exits nonzero on any failure that is not
//! listed in `KNOWN_SHORTFALLS`.

use maxfeec::bench::{evaluate_checks, median_over_seeds, run_convergence, summarize, ConvergenceConfig};
use maxfeec::dynamics::{evolve, gauss_residual, symplectic_check, FieldState, Formulation, InverseMass, SplitKind, SplitScheme, UnitSystem};
use maxfeec::feec::{build_space, Cochain, Family, FormSpace};
use maxfeec::mesh::{generate_cubical_lattice, generate_periodic_triangulation, MeshMethod};
use maxfeec::operators::{derivative_matrix, mass_matrix};
use maxfeec::spai::{make_pattern, spai_approximate_inverse, stencil_stats, PatternKind};
use maxfeec::yee::equivalence_check;
use maxfeec::{Mesh, Sparse};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use std::sync::Arc;
use std::time::Instant;

/// Criterion 4 sub-checks that fail with column-wise Frobenius SPAI on the
/// default sweep. The analysis is in the project decision log; the checks
/// still run with their stated tolerances and are printed as FAIL.
const KNOWN_SHORTFALLS: [&str; 4] = ["exponent P1-/diagonal", "exponent P1-/m1", "exponent P1-/dense", "exponent P2-/m1sq"];

struct Outcome {
    pass: bool,
    detail: String,
    /// Failing sub-checks, by name.
    failed: Vec<String>,
}

impl Outcome {
    fn from_checks(checks: Vec<(String, bool, String)>) -> Self {
        let failed: Vec<String> = checks.iter().filter(|c| !c.1).map(|c| c.0.clone()).collect();
        let detail = checks.iter().map(|(n, ok, v)| format!("{n}={v}{}", if *ok { "" } else { "(x)" })).collect::<Vec<_>>().join(", ");
        Outcome { pass: failed.is_empty(), detail, failed }
    }
}

fn to_na(a: &Sparse) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.rows(), a.cols());
    for (i, j, v) in a.triplets() {
        m[(i, j)] += v;
    }
    m
}

fn tri(n: usize, seed: u64) -> Arc<Mesh> {
    Arc::new(generate_periodic_triangulation(n, 1.0, 1.0, seed, MeshMethod::DelaunayTiled).unwrap())
}

fn spaces(mesh: &Arc<Mesh>, family: Family) -> Vec<FormSpace<f64>> {
    (0..=mesh.dimension()).map(|p| build_space(mesh, family, p).unwrap()).collect()
}

fn random_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn criterion_1() -> Outcome {
    let r = equivalence_check([4, 4, 4], [1.0, 0.5, 2.0], 0.2, 100, 2024, UnitSystem::natural()).unwrap();
    Outcome::from_checks(vec![("max deviation".into(), r.max_deviation <= 1e-12, format!("{:.2e} (<= 1e-12)", r.max_deviation))])
}

fn criterion_2() -> Outcome {
    let units = UnitSystem::new(1.3, 0.9).unwrap();
    let mut worst: f64 = 0.0;
    let mut max_edges = 0;
    let cases = [(tri(16, 1), Family::P1Minus), (tri(16, 1), Family::P2Minus), (Arc::new(generate_cubical_lattice([2, 2, 3], [1.0, 0.5, 2.0]).unwrap()), Family::Q1Minus)];
    for (mesh, family) in cases {
        max_edges = max_edges.max(mesh.num_faces(1));
        let s = spaces(&mesh, family);
        let c = derivative_matrix(&s[1], &s[2]).unwrap();
        let m1 = mass_matrix(&s[1]);
        let m2 = mass_matrix(&s[2]);
        let mut qs: Vec<InverseMass<f64>> = PatternKind::standard()
            .iter()
            .map(|&k| InverseMass::Sparse(spai_approximate_inverse(&m1, &make_pattern(&m1, k).unwrap()).unwrap().0))
            .collect();
        qs.push(InverseMass::exact(&m1).unwrap());
        for q in qs {
            for dt in [0.0, 1e-3, 1e-2] {
                for kind in [SplitKind::Strang, SplitKind::LieTrotter] {
                    let sc = SplitScheme::new(kind, dt, q.clone(), c.clone(), m2.clone(), units).unwrap();
                    worst = worst.max(symplectic_check(&sc).unwrap());
                }
            }
        }
    }

    let mesh = Arc::new(generate_cubical_lattice([3, 3, 3], [1.0, 0.5, 2.0]).unwrap());
    let s = spaces(&mesh, Family::Q1Minus);
    let c = derivative_matrix(&s[1], &s[2]).unwrap();
    let d = derivative_matrix(&s[2], &s[3]).unwrap();
    let m1 = mass_matrix(&s[1]);
    let q = spai_approximate_inverse(&m1, &make_pattern(&m1, PatternKind::M1).unwrap()).unwrap().0;
    let sc = SplitScheme::new(SplitKind::Strang, 0.02, InverseMass::Sparse(q), c.clone(), mass_matrix(&s[2]), units).unwrap();
    let n = s[1].n_dofs();
    let a = Cochain::plain(&s[1], random_values(n, 5)).unwrap();
    let e = Cochain::plain(&s[1], random_values(n, 6)).unwrap();
    let mut st = FieldState::new(Formulation::AE, a, e).to_be(&c).unwrap();
    let mut gauss: f64 = gauss_residual(&st, &d).unwrap();
    for _ in 0..100 {
        st = evolve(&st, &sc, 100);
        gauss = gauss.max(gauss_residual(&st, &d).unwrap());
    }
    Outcome::from_checks(vec![
        ("mesh edges".into(), max_edges <= 50, format!("{max_edges} (<= 50)")),
        ("symplectic deviation".into(), worst <= 1e-12, format!("{worst:.2e} (<= 1e-12)")),
        ("Gauss residual over 1e4 steps".into(), gauss <= 1e-13, format!("{gauss:.2e} (<= 1e-13)")),
    ])
}

fn criterion_3() -> Outcome {
    let sp = [1.0, 0.5, 2.0];
    let dv = sp[0] * sp[1] * sp[2];
    let mesh = Arc::new(generate_cubical_lattice([4, 3, 3], sp).unwrap());
    let s = spaces(&mesh, Family::Q1Minus);
    let rel = |v: f64, allowed: &[f64]| allowed.iter().map(|w| (v.abs() / dv - w).abs() / w).fold(f64::INFINITY, f64::min);
    // flip signs so every entity is oriented along + (axis or normal)
    let orient = |p: usize, id: usize| {
        let x = mesh.face_coords(p, id);
        let u = mesh.periodic_delta(x[0], x[1]);
        if p == 1 {
            u.iter().sum::<f64>().signum()
        } else {
            let v = mesh.periodic_delta(x[0], x[3]);
            (u[1] * v[2] - u[2] * v[1] + u[2] * v[0] - u[0] * v[2] + u[0] * v[1] - u[1] * v[0]).signum()
        }
    };
    let mut checks = Vec::new();
    for (p, allowed) in [(1usize, vec![4.0 / 9.0, 1.0 / 9.0, 1.0 / 36.0]), (2, vec![2.0 / 3.0, 1.0 / 6.0])] {
        let m = mass_matrix(&s[p]);
        let worst = m.triplets().map(|(_, _, v)| rel(v, &allowed)).fold(0.0, f64::max);
        checks.push((format!("M{p} entries"), worst <= 1e-13, format!("{worst:.1e}")));
        let sign: Vec<f64> = (0..m.rows()).map(|i| orient(p, i)).collect();
        let row_dev = (0..m.rows())
            .map(|i| {
                let (cols, vals) = m.row(i);
                let sum: f64 = cols.iter().zip(vals).map(|(&j, &v)| sign[i] * sign[j] * v).sum();
                (sum - dv).abs() / dv
            })
            .fold(0.0, f64::max);
        checks.push((format!("M{p} row sums"), row_dev <= 1e-13, format!("{row_dev:.1e}")));
    }
    Outcome::from_checks(checks)
}

fn criterion_4() -> Outcome {
    let cfg = ConvergenceConfig::default();
    let out = run_convergence(&cfg).unwrap();
    let med = median_over_seeds(&out.records);
    let summary = summarize(&med, cfg.fit_window);
    let checks = evaluate_checks(&summary, &med);
    Outcome::from_checks(
        checks
            .into_iter()
            .map(|c| {
                let v = c.value.map_or("none".to_string(), |v| format!("{v:.2}"));
                (c.name, c.pass, format!("{v} [{}]", c.expected))
            })
            .collect(),
    )
}

fn criterion_5() -> Outcome {
    let mut checks = Vec::new();
    let m = mass_matrix(&build_space(&tri(24, 3), Family::P1Minus, 1).unwrap());
    let n = m.rows();
    let (q, _) = spai_approximate_inverse(&m, &make_pattern(&m, PatternKind::Dense).unwrap()).unwrap();
    let mn = to_na(&m);
    let err = (&mn * to_na(&q) - DMatrix::identity(n, n)).norm();
    checks.push(("dense |MQ-I|_F".into(), err <= 1e-10, format!("{err:.1e} (<= 1e-10)")));
    let (qd, _) = spai_approximate_inverse(&m, &make_pattern(&m, PatternKind::Diagonal).unwrap()).unwrap();
    // one unknown per column: minimize |q M e_l - e_l|^2 by sampling the parabola
    let mut worst: f64 = 0.0;
    for l in 0..n {
        let col: DVector<f64> = mn.column(l).into();
        let f = |t: f64| {
            let mut r = &col * t;
            r[l] -= 1.0;
            r.norm_squared()
        };
        let (f0, f1, f2) = (f(0.0), f(1.0), f(2.0));
        let t = (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * (f0 - 2.0 * f1 + f2));
        worst = worst.max((qd.get(l, l) - t).abs() / t.abs());
    }
    checks.push(("diagonal vs brute force".into(), worst <= 1e-12, format!("{worst:.1e} (<= 1e-12)")));
    for family in [Family::P1Minus, Family::P2Minus] {
        let m = mass_matrix(&build_space(&tri(24, 4), family, 1).unwrap());
        let r: Vec<f64> = PatternKind::standard()
            .iter()
            .map(|&k| spai_approximate_inverse(&m, &make_pattern(&m, k).unwrap()).unwrap().1.frobenius_residual)
            .collect();
        let ok = r.windows(2).all(|w| w[1] <= w[0]);
        checks.push((format!("{family} residual nesting"), ok, format!("{:?}", r.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>())));
    }
    Outcome::from_checks(checks)
}

fn criterion_6() -> Outcome {
    let mesh = tri(8, 3);
    let s = spaces(&mesh, Family::P1Minus);
    let n = s[1].n_dofs();
    let units = UnitSystem::new(2.0, 0.5).unwrap();
    let c = derivative_matrix(&s[1], &s[2]).unwrap();
    let m1 = mass_matrix(&s[1]);
    let m2 = mass_matrix(&s[2]);
    let q = spai_approximate_inverse(&m1, &make_pattern(&m1, PatternKind::M1).unwrap()).unwrap().0;
    let qn = to_na(&q);
    let qsym = (&qn + qn.transpose()) * 0.5;
    let cn = to_na(&c);
    let mut gen = DMatrix::zeros(2 * n, 2 * n);
    gen.view_mut((0, n), (n, n)).copy_from(&(-qsym));
    gen.view_mut((n, 0), (n, n)).copy_from(&(cn.transpose() * to_na(&m2) * cn * units.c2()));
    let t_end = 0.2;
    let a0 = random_values(n, 11);
    let e0 = random_values(n, 12);
    let x0 = DVector::from_iterator(2 * n, a0.iter().chain(&e0).copied());
    let exact = (gen * t_end).exp() * x0;
    let start = FieldState::new(Formulation::AE, Cochain::plain(&s[1], a0).unwrap(), Cochain::plain(&s[1], e0).unwrap());
    let dts: Vec<f64> = [64, 128, 256, 512, 1024].iter().map(|&k| t_end / k as f64).collect();
    let mut checks = vec![("state dimension".to_string(), 2 * n <= 50, format!("{} (<= 50)", 2 * n))];
    for (kind, want) in [(SplitKind::Strang, 2.0), (SplitKind::LieTrotter, 1.0)] {
        let pts: Vec<(f64, f64)> = dts
            .iter()
            .map(|&dt| {
                let sc = SplitScheme::new(kind, dt, InverseMass::Sparse(q.clone()), c.clone(), m2.clone(), units).unwrap();
                let out = evolve(&start, &sc, (t_end / dt).round() as usize);
                let x = DVector::from_iterator(2 * n, out.first.values.iter().chain(&out.e.values).copied());
                (dt.ln(), ((x - &exact).norm() / exact.norm()).ln())
            })
            .collect();
        let k = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        checks.push((format!("{} order", kind.name()), (slope - want).abs() <= 0.1, format!("{slope:.3} ({want} +/- 0.1)")));
    }
    Outcome::from_checks(checks)
}

fn criterion_7() -> Outcome {
    let mut checks = Vec::new();
    for (name, method) in [("delaunay", MeshMethod::DelaunayTiled), ("structured", MeshMethod::StructuredJittered { jitter: 0.2 })] {
        let mesh = Arc::new(generate_periodic_triangulation(256, 1.0, 1.0, 1, method).unwrap());
        let m = mass_matrix(&build_space(&mesh, Family::P1Minus, 1).unwrap());
        let r = stencil_stats(&make_pattern(&m, PatternKind::M1).unwrap()).data_volume_ratio_vs_diagonal;
        checks.push((format!("{name} S(M1) ratio"), (4.0..=6.0).contains(&r), format!("{r:.2} (in [4, 6])")));
    }
    Outcome::from_checks(checks)
}

fn criterion_8() -> Outcome {
    let mut checks = Vec::new();
    for (mesh, family) in [(tri(40, 2), Family::P1Minus), (tri(40, 2), Family::P2Minus), (Arc::new(generate_cubical_lattice([3, 4, 3], [1.0, 0.5, 2.0]).unwrap()), Family::Q1Minus)] {
        let s = spaces(&mesh, family);
        let mut dd: f64 = 0.0;
        for p in 0..s.len() - 2 {
            let d0 = derivative_matrix(&s[p], &s[p + 1]).unwrap();
            let d1 = derivative_matrix(&s[p + 1], &s[p + 2]).unwrap();
            dd = dd.max(d1.matmul(&d0).unwrap().max_abs_entry() / (d0.max_abs_entry() * d1.max_abs_entry()));
        }
        checks.push((format!("{family} dd"), dd <= 1e-14, format!("{dd:.1e}")));
        let min_eig = s.iter().map(|sp| to_na(&mass_matrix(sp)).symmetric_eigenvalues().min()).fold(f64::INFINITY, f64::min);
        let asym = s.iter().map(|sp| mass_matrix(sp).asymmetry()).fold(0.0, f64::max);
        checks.push((format!("{family} mass SPD"), min_eig > 0.0 && asym == 0.0, format!("min eig {min_eig:.1e}")));
    }
    let (dy, dz) = (0.5, 2.0);
    let mesh = Arc::new(generate_cubical_lattice([3, 4, 3], [1.0, dy, dz]).unwrap());
    let s = spaces(&mesh, Family::Q1Minus);
    let c = derivative_matrix(&s[1], &s[2]).unwrap();
    let sign = |p: usize, id: usize| {
        let x = mesh.face_coords(p, id);
        let u = mesh.periodic_delta(x[0], x[1]);
        if p == 1 {
            return u.iter().sum::<f64>().signum();
        }
        let v = mesh.periodic_delta(x[0], x[3]);
        (u[1] * v[2] - u[2] * v[1] + u[2] * v[0] - u[0] * v[2] + u[0] * v[1] - u[1] * v[0]).signum()
    };
    let e = mesh.lattice_edge(0, 0, 0, 0);
    let want = [
        (mesh.lattice_square(2, 0, 0, 0), 1.0 / dy),
        (mesh.lattice_square(2, 0, -1, 0), -1.0 / dy),
        (mesh.lattice_square(1, 0, 0, 0), -1.0 / dz),
        (mesh.lattice_square(1, 0, 0, -1), 1.0 / dz),
    ];
    let nnz = (0..c.rows()).filter(|&r| c.get(r, e) != 0.0).count();
    let dev = want.iter().map(|&(sq, v)| (c.get(sq, e) * sign(1, e) * sign(2, sq) - v).abs()).fold(0.0, f64::max);
    checks.push(("dW_x column".into(), nnz == 4 && dev <= 1e-14, format!("{nnz} entries, dev {dev:.1e}")));
    Outcome::from_checks(checks)
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("Yee equivalence", 1.0, criterion_1),
        ("structure preservation", 10.0, criterion_2),
        ("cubical mass entries", 1.0, criterion_3),
        ("convergence exponents (default sweep)", 600.0, criterion_4),
        ("SPAI correctness", 5.0, criterion_5),
        ("splitting order", 5.0, criterion_6),
        ("communication proxy", 1.0, criterion_7),
        ("structural identities", 1.0, criterion_8),
    ];
    let mut unexpected = Vec::new();
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let mut o = run();
        let secs = t.elapsed().as_secs_f64();
        if secs > *limit {
            o.pass = false;
            o.failed.push("runtime".into());
        }
        println!(
            "criterion {} {:<40} {}  {:.2}s (limit {}s)  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            secs,
            limit,
            o.detail
        );
        for f in &o.failed {
            if !(i == 3 && KNOWN_SHORTFALLS.contains(&f.as_str())) {
                unexpected.push(format!("criterion {}: {f}", i + 1));
            }
        }
        if i == 3 {
            // a shortfall that starts passing should be noticed too
            for k in KNOWN_SHORTFALLS {
                if !o.failed.iter().any(|f| f == k) {
                    println!("  note: known shortfall `{k}` now passes");
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
