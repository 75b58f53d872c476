//! Exterior derivative matrices, mass matrices, the curl-of-curl composite,
//! and L2 norms of discrete forms.

use crate::error::{FeecError, Result};
use crate::feec::{AnalyticForm, Cochain, Family, FormSpace, Representation, PROJECTION_ORDER};
use crate::mesh::PeriodicMesh;
use crate::quadrature::quadrature_rule;
use crate::scalar::{dot, Scalar};
use crate::sparse::{LinearOperator, SparseOperator};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::Arc;

fn check_chain<T: Scalar>(sp: &FormSpace<T>, sp1: &FormSpace<T>) -> Result<()> {
    if !Arc::ptr_eq(sp.mesh(), sp1.mesh()) {
        return Err(FeecError::IncompatibleSpaces("spaces live on different meshes".into()));
    }
    if sp.family() != sp1.family() {
        return Err(FeecError::IncompatibleSpaces(format!("families {} and {} do not form a complex", sp.family(), sp1.family())));
    }
    if sp1.p() != sp.p() + 1 {
        return Err(FeecError::IncompatibleSpaces(format!("degrees {} and {} are not consecutive", sp.p(), sp1.p())));
    }
    Ok(())
}

/// Matrix of `d` from p-forms to (p+1)-forms in the two bases.
///
/// For `Q1-` and `P1-` the entries follow from signed incidence (scaled by
/// face measures for face-averaged DOFs); `P2-` applies the (p+1)-DOFs to the
/// derivatives of the p-basis.
pub fn derivative_matrix<T: Scalar>(sp: &FormSpace<T>, sp1: &FormSpace<T>) -> Result<SparseOperator<T>> {
    check_chain(sp, sp1)?;
    match sp.family() {
        Family::P1Minus | Family::Q1Minus => derivative_from_incidence(sp, sp1),
        Family::P2Minus => derivative_by_quadrature(sp, sp1),
    }
}

fn face_measure<T: Scalar>(mesh: &PeriodicMesh<T>, p: usize, id: usize) -> T {
    let x = mesh.face_coords(p, id);
    let len = |a: [T; 3], b: [T; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    match p {
        0 => T::one(),
        1 => len(x[0], x[1]),
        2 => len(x[0], x[1]) * len(x[0], x[3]),
        _ => {
            let l = mesh.lattice().expect("cubical mesh");
            l.spacings[0] * l.spacings[1] * l.spacings[2]
        }
    }
}

fn derivative_from_incidence<T: Scalar>(sp: &FormSpace<T>, sp1: &FormSpace<T>) -> Result<SparseOperator<T>> {
    let mesh = sp.mesh();
    let inc = mesh.boundary_incidence(sp1.p())?;
    let averaged = sp.family() == Family::Q1Minus;
    let low: Vec<T> = if averaged { (0..mesh.num_faces(sp.p())).map(|f| face_measure(mesh, sp.p(), f)).collect() } else { Vec::new() };
    let rows = inc
        .entries
        .iter()
        .enumerate()
        .map(|(f, row)| {
            let high = if averaged { face_measure(mesh, sp1.p(), f) } else { T::one() };
            row.iter()
                .map(|&(g, s)| {
                    let v = T::lit(s as f64);
                    (g, if averaged { v * low[g] / high } else { v })
                })
                .collect()
        })
        .collect();
    Ok(SparseOperator::from_rows(sp.n_dofs(), rows))
}

/// `d` assembled by applying the (p+1)-DOF functionals to the derivatives of
/// the p-basis, cell by cell. Each row is taken from the first cell that owns
/// its DOF; conforming traces make every owner agree.
pub fn derivative_by_quadrature<T: Scalar>(sp: &FormSpace<T>, sp1: &FormSpace<T>) -> Result<SparseOperator<T>> {
    check_chain(sp, sp1)?;
    let n_loc = sp.local_dofs();
    let local: Vec<Vec<Vec<T>>> = (0..sp.num_cells())
        .into_par_iter()
        .map(|c| sp1.apply_local_dofs(c, n_loc, PROJECTION_ORDER, |r, _| sp.basis_d_unchecked(c, r)))
        .collect::<Result<_>>()?;
    let mut rows: Vec<Option<Vec<(usize, T)>>> = vec![None; sp1.n_dofs()];
    for (c, block) in local.iter().enumerate() {
        let cols = sp.cell_dofs(c);
        for (k, &r) in sp1.cell_dofs(c).iter().enumerate() {
            if rows[r].is_some() {
                continue;
            }
            let mut acc: BTreeMap<usize, T> = BTreeMap::new();
            for (j, &g) in cols.iter().enumerate() {
                *acc.entry(g).or_insert(T::zero()) += block[k][j];
            }
            let scale = acc.values().fold(T::zero(), |m, v| m.max(v.abs()));
            let cut = T::lit(64.0) * T::epsilon() * scale;
            rows[r] = Some(acc.into_iter().filter(|(_, v)| v.abs() > cut).collect());
        }
    }
    let rows = rows.into_iter().map(Option::unwrap_or_default).collect();
    Ok(SparseOperator::from_rows(sp.n_dofs(), rows))
}

/// Default mass-matrix quadrature order: exact for products of basis
/// functions.
pub fn mass_order(family: Family) -> usize {
    match family {
        Family::Q1Minus => 3,
        Family::P1Minus => 2,
        Family::P2Minus => 4,
    }
}

/// `(M_p)_{ij} = sum over cells of the integral of (basis_i, basis_j)`.
pub fn mass_matrix<T: Scalar>(space: &FormSpace<T>) -> SparseOperator<T> {
    mass_matrix_with_order(space, mass_order(space.family())).expect("default mass quadrature order is supported")
}

pub fn mass_matrix_with_order<T: Scalar>(space: &FormSpace<T>, order: usize) -> Result<SparseOperator<T>> {
    let rule = quadrature_rule::<T>(space.mesh().cell_kind(), order)?;
    let n = space.local_dofs();
    let blocks: Vec<Vec<T>> = (0..space.num_cells())
        .into_par_iter()
        .map(|c| {
            let jac = space.jacobian(c);
            let mut k = vec![T::zero(); n * n];
            for (r, &w) in rule.points.iter().zip(&rule.weights) {
                let b = space.basis_unchecked(c, *r);
                let wj = w * jac;
                for i in 0..n {
                    for j in i..n {
                        k[i * n + j] += wj * dot(&b[i], &b[j]);
                    }
                }
            }
            k
        })
        .collect();
    let mut trip = Vec::with_capacity(space.num_cells() * n * n);
    for (c, k) in blocks.iter().enumerate() {
        let g = space.cell_dofs(c);
        for i in 0..n {
            trip.push((g[i], g[i], k[i * n + i]));
            for j in (i + 1)..n {
                let v = k[i * n + j];
                trip.push((g[i], g[j], v));
                trip.push((g[j], g[i], v));
            }
        }
    }
    Ok(SparseOperator::from_triplets(space.n_dofs(), space.n_dofs(), trip))
}

/// `Q C^T M2 C a`, applied right to left.
pub fn apply_curl_of_curl<T: Scalar>(
    q: &dyn LinearOperator<T>,
    c: &SparseOperator<T>,
    m2: &SparseOperator<T>,
    a: &[T],
) -> Result<Vec<T>> {
    if c.cols() != a.len() {
        return Err(FeecError::DimensionMismatch { expected: c.cols(), found: a.len() });
    }
    if m2.rows() != c.rows() || m2.cols() != c.rows() {
        return Err(FeecError::DimensionMismatch { expected: c.rows(), found: m2.rows() });
    }
    if q.nrows() != c.cols() || q.ncols() != c.cols() {
        return Err(FeecError::DimensionMismatch { expected: c.cols(), found: q.ncols() });
    }
    let b = c.matvec(a);
    let mb = m2.matvec(&b);
    let ct = c.transpose();
    let e = ct.matvec(&mb);
    Ok(q.apply(&e))
}

/// Same as [`apply_curl_of_curl`] but on tagged cochains.
pub fn apply_curl_of_curl_cochain<T: Scalar>(
    q: &dyn LinearOperator<T>,
    c: &SparseOperator<T>,
    m2: &SparseOperator<T>,
    a: &Cochain<T>,
) -> Result<Cochain<T>> {
    let values = apply_curl_of_curl(q, c, m2, &a.values)?;
    Ok(Cochain { family: a.family, p: a.p, representation: Representation::Plain, values })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2Error<T> {
    pub absolute: T,
    pub relative: T,
}

/// Quadrature order used for L2 norms and errors.
pub const ERROR_ORDER: usize = 6;

/// Squared L2 norms of `discrete - exact` and of `exact`, accumulated by cell.
fn squared_norms<T: Scalar>(
    space: &FormSpace<T>,
    values: Option<&[T]>,
    exact: Option<&AnalyticForm<T>>,
    order: usize,
) -> Result<(T, T)> {
    let rule = quadrature_rule::<T>(space.mesh().cell_kind(), order)?;
    let per_cell: Vec<(T, T)> = (0..space.num_cells())
        .into_par_iter()
        .map(|c| {
            let jac = space.jacobian(c);
            let mut diff = T::zero();
            let mut norm = T::zero();
            for (r, &w) in rule.points.iter().zip(&rule.weights) {
                let mut v = match values {
                    Some(vals) => space.accumulate(vals, c, &space.basis_unchecked(c, *r)),
                    None => vec![T::zero(); space.components()],
                };
                if let Some(f) = exact {
                    let fx = f.eval(&space.physical_point(c, *r));
                    norm += w * jac * dot(&fx, &fx);
                    for (vi, fi) in v.iter_mut().zip(&fx) {
                        *vi -= *fi;
                    }
                }
                diff += w * jac * dot(&v, &v);
            }
            (diff, norm)
        })
        .collect();
    // sequential reduction keeps the sum independent of thread count
    Ok(per_cell.iter().fold((T::zero(), T::zero()), |(a, b), &(d, n)| (a + d, b + n)))
}

/// L2 norm of a discrete form.
pub fn l2_norm<T: Scalar>(space: &FormSpace<T>, values: &[T]) -> Result<T> {
    if values.len() != space.n_dofs() {
        return Err(FeecError::DimensionMismatch { expected: space.n_dofs(), found: values.len() });
    }
    Ok(squared_norms(space, Some(values), None, ERROR_ORDER)?.0.sqrt())
}

/// L2 norm of an analytic form over the mesh domain.
pub fn l2_norm_exact<T: Scalar>(space: &FormSpace<T>, exact: &AnalyticForm<T>) -> Result<T> {
    Ok(squared_norms(space, None, Some(exact), ERROR_ORDER)?.1.sqrt())
}

/// Absolute and relative L2 error of a plain cochain against an analytic form.
pub fn l2_error<T: Scalar>(space: &FormSpace<T>, c: &Cochain<T>, exact: &AnalyticForm<T>) -> Result<L2Error<T>> {
    l2_error_with_order(space, c, exact, ERROR_ORDER)
}

pub fn l2_error_with_order<T: Scalar>(
    space: &FormSpace<T>,
    c: &Cochain<T>,
    exact: &AnalyticForm<T>,
    order: usize,
) -> Result<L2Error<T>> {
    if c.representation != Representation::Plain {
        return Err(FeecError::InvalidParameter("L2 error needs a plain cochain".into()));
    }
    if c.values.len() != space.n_dofs() {
        return Err(FeecError::DimensionMismatch { expected: space.n_dofs(), found: c.values.len() });
    }
    if exact.p != space.p() || exact.dim != space.dimension() {
        return Err(FeecError::IncompatibleSpaces("exact form degree does not match the space".into()));
    }
    let (diff, norm) = squared_norms(space, Some(&c.values), Some(exact), order)?;
    let absolute = diff.sqrt();
    if norm == T::zero() {
        return Err(FeecError::ZeroNorm);
    }
    Ok(L2Error { absolute, relative: absolute / norm.sqrt() })
}
