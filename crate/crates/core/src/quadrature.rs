//! Quadrature on reference cells.
//!
//! Reference triangle: `{x, y >= 0, x + y <= 1}` (area 1/2).
//! Reference cube and segment: `[0,1]^d` (volume 1).

use crate::error::{FeecError, Result};
use crate::mesh::CellKind;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct QuadratureRule<T> {
    pub cell_kind: CellKind,
    pub order: usize,
    pub points: Vec<[T; 3]>,
    pub weights: Vec<T>,
}

/// Gauss-Legendre nodes and weights on `[0,1]`, computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre<T: Scalar>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1);
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    (idx.iter().map(|&i| T::lit(x[i])).collect(), idx.iter().map(|&i| T::lit(w[i])).collect())
}

const MAX_POINTS_PER_AXIS: usize = 5;
const MAX_TRIANGLE_ORDER: usize = 6;

/// Rule on `[0,1]` exact for polynomials of degree `order`.
pub fn segment_rule<T: Scalar>(order: usize) -> Result<(Vec<T>, Vec<T>)> {
    let n = order / 2 + 1;
    if n > MAX_POINTS_PER_AXIS + 1 {
        return Err(FeecError::UnsupportedOrder { order, cell: "segment".into() });
    }
    Ok(gauss_legendre(n))
}

pub fn quadrature_rule<T: Scalar>(cell_kind: CellKind, order: usize) -> Result<QuadratureRule<T>> {
    match cell_kind {
        CellKind::Simplex => triangle_rule(order),
        CellKind::Cube => cube_rule(order),
    }
}

fn triangle_rule<T: Scalar>(order: usize) -> Result<QuadratureRule<T>> {
    if order == 0 || order > MAX_TRIANGLE_ORDER {
        return Err(FeecError::UnsupportedOrder { order, cell: "triangle".into() });
    }
    if order == 1 {
        let third = T::one() / T::lit(3.0);
        return Ok(QuadratureRule {
            cell_kind: CellKind::Simplex,
            order,
            points: vec![[third, third, T::zero()]],
            weights: vec![T::lit(0.5)],
        });
    }
    // collapsed tensor rule: x = u, y = v (1 - u), Jacobian (1 - u)
    let n = (order + 2).div_ceil(2);
    let (g, w) = gauss_legendre::<T>(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let u = g[i];
            let v = g[j];
            points.push([u, v * (T::one() - u), T::zero()]);
            weights.push(w[i] * w[j] * (T::one() - u));
        }
    }
    Ok(QuadratureRule { cell_kind: CellKind::Simplex, order, points, weights })
}

fn cube_rule<T: Scalar>(order: usize) -> Result<QuadratureRule<T>> {
    let n = (order + 1).div_ceil(2).max(1);
    if n > MAX_POINTS_PER_AXIS {
        return Err(FeecError::UnsupportedOrder { order, cell: "cube".into() });
    }
    let (g, w) = gauss_legendre::<T>(n);
    let mut points = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                points.push([g[i], g[j], g[k]]);
                weights.push(w[i] * w[j] * w[k]);
            }
        }
    }
    Ok(QuadratureRule { cell_kind: CellKind::Cube, order, points, weights })
}

/// Tensor rule on the unit square, used for cube faces.
pub fn square_rule<T: Scalar>(order: usize) -> Result<(Vec<[T; 2]>, Vec<T>)> {
    let (g, w) = segment_rule::<T>(order)?;
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for j in 0..g.len() {
        for i in 0..g.len() {
            pts.push([g[i], g[j]]);
            wts.push(w[i] * w[j]);
        }
    }
    Ok((pts, wts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn gauss_legendre_small_cases() {
        let (x, w) = gauss_legendre::<f64>(1);
        assert!((x[0] - 0.5).abs() < 1e-16 && (w[0] - 1.0).abs() < 1e-16);
        let (x, w) = gauss_legendre::<f64>(2);
        let d = 0.5 / 3f64.sqrt();
        assert!((x[0] - (0.5 - d)).abs() < 1e-15 && (x[1] - (0.5 + d)).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn triangle_rules_are_exact() {
        for order in 1..=6usize {
            let r = quadrature_rule::<f64>(CellKind::Simplex, order).unwrap();
            let total: f64 = r.weights.iter().sum();
            assert!((total - 0.5).abs() < 1e-15);
            for a in 0..=order as u32 {
                for b in 0..=(order as u32 - a) {
                    // int x^a y^b over the reference triangle = a! b! / (a+b+2)!
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                    assert!((q - exact).abs() < 1e-15, "order {order} monomial x^{a} y^{b}");
                }
            }
        }
    }

    #[test]
    fn triangle_order_one_is_centroid() {
        let r = quadrature_rule::<f64>(CellKind::Simplex, 1).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.weights[0], 0.5);
    }

    #[test]
    fn cube_rules() {
        let r = quadrature_rule::<f64>(CellKind::Cube, 3).unwrap();
        assert_eq!(r.points.len(), 8);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let r = quadrature_rule::<f64>(CellKind::Cube, 9).unwrap();
        let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(9) * p[1].powi(4) * p[2]).sum();
        assert!((q - 1.0 / 10.0 / 5.0 / 2.0).abs() < 1e-15);
        assert!(quadrature_rule::<f64>(CellKind::Cube, 10).is_err());
        assert!(quadrature_rule::<f64>(CellKind::Simplex, 7).is_err());
        assert!(quadrature_rule::<f64>(CellKind::Simplex, 0).is_err());
    }
}
