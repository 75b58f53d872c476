use maxfeec::feec::{build_space, AnalyticForm, Family, Smoothness};
use maxfeec::mesh::{generate_cubical_lattice, generate_periodic_triangulation, MeshMethod, PeriodicMesh};
use proptest::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;

fn delaunay(n: usize, seed: u64) -> PeriodicMesh<f64> {
    generate_periodic_triangulation(n, 1.0, 1.0, seed, MeshMethod::DelaunayTiled).unwrap()
}

#[test]
fn structured_grid_counts() {
    let k = 5;
    let m = generate_periodic_triangulation::<f64>(k * k, 1.0, 1.0, 0, MeshMethod::StructuredJittered { jitter: 0.0 }).unwrap();
    assert_eq!(m.num_faces(0), k * k);
    assert_eq!(m.num_faces(1), 3 * k * k);
    assert_eq!(m.num_faces(2), 2 * k * k);
    assert_eq!(m.euler_characteristic(), 0);
}

#[test]
fn delaunay_generation_is_deterministic() {
    let a = delaunay(100, 7);
    let b = delaunay(100, 7);
    for p in 0..=2 {
        assert_eq!(a.faces(p), b.faces(p));
    }
    assert_eq!(a.vertices(), b.vertices());
    let c = delaunay(100, 8);
    assert_ne!(a.vertices(), c.vertices());
}

/// Brute force: no periodic image of any vertex lies strictly inside any circumcircle.
fn assert_empty_circumcircles(m: &PeriodicMesh<f64>) {
    let [lx, ly] = [m.periods()[0], m.periods()[1]];
    for t in 0..m.num_cells() {
        let x = m.cell_coords(t);
        let (ax, ay) = (x[0][0], x[0][1]);
        let (bx, by) = (x[1][0] - ax, x[1][1] - ay);
        let (cx, cy) = (x[2][0] - ax, x[2][1] - ay);
        let d = 2.0 * (bx * cy - by * cx);
        let ux = (cy * (bx * bx + by * by) - by * (cx * cx + cy * cy)) / d;
        let uy = (bx * (cx * cx + cy * cy) - cx * (bx * bx + by * by)) / d;
        let r2 = ux * ux + uy * uy;
        let (ox, oy) = (ax + ux, ay + uy);
        for v in m.vertices() {
            for i in -2..=2 {
                for j in -2..=2 {
                    let px = v[0] + i as f64 * lx - ox;
                    let py = v[1] + j as f64 * ly - oy;
                    assert!(px * px + py * py >= r2 * (1.0 - 1e-9), "triangle {t} circumcircle contains a vertex");
                }
            }
        }
    }
}

#[test]
fn delaunay_tiled_has_empty_circumcircles() {
    assert_empty_circumcircles(&delaunay(60, 3));
    assert_empty_circumcircles(&delaunay(150, 11));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn triangulations_are_closed_tori(n in 9usize..120, seed in 0u64..1000, structured in any::<bool>()) {
        let method = if structured { MeshMethod::StructuredJittered { jitter: 0.3 } } else { MeshMethod::DelaunayTiled };
        let m = generate_periodic_triangulation::<f64>(n, 1.0, 0.7, seed, method).unwrap();
        prop_assert_eq!(m.euler_characteristic(), 0);
        prop_assert_eq!(m.num_faces(2), 2 * m.num_faces(0));
        let mut uses: HashMap<usize, usize> = HashMap::new();
        for t in 0..m.num_cells() {
            for &e in m.cell_faces(1, t) {
                *uses.entry(e).or_default() += 1;
            }
        }
        prop_assert!(uses.values().all(|&u| u == 2));
        prop_assert!(m.min_angle_degrees() >= 1.0);
        let area: f64 = (0..m.num_cells()).map(|t| {
            let x = m.cell_coords(t);
            0.5 * ((x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[1][1] - x[0][1]) * (x[2][0] - x[0][0])).abs()
        }).sum();
        prop_assert!((area - 0.7).abs() < 1e-12);
    }
}

#[test]
fn q1_edge_forms_partition_unity_per_axis() {
    let mesh = Arc::new(generate_cubical_lattice::<f64>([3, 2, 2], [0.5, 1.0, 2.0]).unwrap());
    let s = build_space(&mesh, Family::Q1Minus, 1).unwrap();
    for cell in [0, 4, 11] {
        for r in [[0.1, 0.2, 0.3], [0.9, 0.5, 0.05], [0.5, 0.5, 0.5]] {
            let b = s.evaluate_basis(cell, r).unwrap();
            for axis in 0..3 {
                let sum: f64 = (0..4).map(|k| b[axis * 4 + k][axis]).sum();
                assert!((sum - 1.0).abs() < 1e-14, "axis {axis} sum {sum}");
                let off: f64 = (0..12).filter(|l| l / 4 != axis).map(|l| b[l][axis]).sum();
                assert_eq!(off, 0.0);
            }
        }
    }
}

#[test]
fn basis_vanishes_on_cells_away_from_its_entity() {
    let mesh = Arc::new(delaunay(40, 2));
    for family in [Family::P1Minus, Family::P2Minus] {
        let s = build_space(&mesh, family, 1).unwrap();
        let g = s.cell_dofs(0)[0];
        let mut unit = vec![0.0; s.n_dofs()];
        unit[g] = 1.0;
        for cell in 0..s.num_cells() {
            if s.cell_dofs(cell).contains(&g) {
                continue;
            }
            let v = s.evaluate(&unit, cell, [0.3, 0.3, 0.0]).unwrap();
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }
}

/// Periodic hat of half-width `h` centred at 0 on a period `l`.
fn hat(x: f64, h: f64, l: f64) -> f64 {
    let mut d = x.rem_euclid(l);
    if d > l / 2.0 {
        d -= l;
    }
    (1.0 - d.abs() / h).max(0.0)
}

#[test]
fn projecting_a_cubical_whitney_form_gives_a_unit_vector() {
    let (dx, dy, dz) = (0.5, 1.0, 2.0);
    let mesh = Arc::new(generate_cubical_lattice::<f64>([4, 3, 3], [dx, dy, dz]).unwrap());
    let s = build_space(&mesh, Family::Q1Minus, 1).unwrap();
    let (ly, lz) = (3.0 * dy, 3.0 * dz);
    // (1 - y/dy)(1 - z/dz) dx on the cell at the origin, continued as hats
    let w = AnalyticForm::new(3, 1, Smoothness::Polynomial(2), move |x: &[f64; 3]| {
        let on_edge_column = x[0].rem_euclid(4.0 * dx) < dx;
        vec![if on_edge_column { hat(x[1], dy, ly) * hat(x[2], dz, lz) } else { 0.0 }, 0.0, 0.0]
    });
    let c = s.canonical_projection(&w).unwrap();
    let e = mesh.lattice_edge(0, 0, 0, 0);
    for (i, &v) in c.values.iter().enumerate() {
        let want = if i == e { 1.0 } else { 0.0 };
        assert!((v - want).abs() < 1e-14, "dof {i}: {v}");
    }
}

#[test]
fn constant_forms_project_to_tangential_integrals() {
    let mesh = Arc::new(delaunay(50, 4));
    let s = build_space(&mesh, Family::P1Minus, 1).unwrap();
    let c = s.canonical_projection(&AnalyticForm::constant(2, 1, vec![2.0, -3.0])).unwrap();
    for e in 0..mesh.num_faces(1) {
        let x = mesh.face_coords(1, e);
        let want = 2.0 * (x[1][0] - x[0][0]) - 3.0 * (x[1][1] - x[0][1]);
        assert!((c.values[e] - want).abs() < 1e-13);
    }
}

#[test]
fn p2_cells_reproduce_linear_forms() {
    let mesh = Arc::new(delaunay(40, 9));
    let s = build_space(&mesh, Family::P2Minus, 1).unwrap();
    let f = |x: [f64; 3]| vec![1.0 + 2.0 * x[0] - x[1], 0.5 - 3.0 * x[1] + x[0]];
    for cell in [0, 7, 30] {
        let dofs = s.apply_local_dofs(cell, 1, 6, |_, x| vec![f(x)]).unwrap();
        for r in [[0.2, 0.5, 0.0], [0.6, 0.1, 0.0]] {
            let b = s.evaluate_basis(cell, r).unwrap();
            let x = s.physical_point(cell, r);
            let want = f(x);
            for k in 0..2 {
                let got: f64 = b.iter().zip(&dofs).map(|(bi, d)| bi[k] * d[0]).sum();
                assert!((got - want[k]).abs() < 1e-11, "cell {cell} component {k}: {got} vs {}", want[k]);
            }
        }
    }
    // Whitney forms only reproduce constants
    let s1 = build_space(&mesh, Family::P1Minus, 1).unwrap();
    let dofs = s1.apply_local_dofs(0, 1, 6, |_, x| vec![f(x)]).unwrap();
    let b = s1.evaluate_basis(0, [0.2, 0.5, 0.0]).unwrap();
    let x = s1.physical_point(0, [0.2, 0.5, 0.0]);
    let got: f64 = b.iter().zip(&dofs).map(|(bi, d)| bi[0] * d[0]).sum();
    assert!((got - f(x)[0]).abs() > 1e-6);
}
