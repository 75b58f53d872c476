//! Finite element p-form spaces on periodic meshes.
//!
//! * `Q1-`: generalized Whitney forms on cubes with face-averaged DOFs.
//! * `P1-`: Whitney forms on triangles with integral DOFs.
//! * `P2-`: second-order trimmed forms on triangles. The basis is obtained
//!   per cell by inverting the DOF matrix of an explicit spanning set. All
//!   DOFs are invariant under affine pullback (edge moments against the
//!   endpoint barycentrics, interior moments `w ^ dl_1`, `w ^ dl_2`), so every
//!   basis function scales the same way with the cell size.
//!
//! Form components are stored in the coordinate basis: `(dx, dy, dz)` for
//! 1-forms, `(dy^dz, dz^dx, dx^dy)` for 2-forms in 3-D, `dx^dy` for 2-forms in
//! 2-D, and a single coefficient for 0-forms and volume forms.
//!
//! Reference points are `(xi, eta, zeta)` in `[0,1]^3` for cubes and
//! `(xi, eta, 0)` in the reference triangle, with barycentrics
//! `(1 - xi - eta, xi, eta)`.

use crate::dense;
use crate::error::{FeecError, Result};
use crate::mesh::{cube_edge_vertices, cube_square_vertices, CellKind, PeriodicMesh, TRIANGLE_EDGES};
use crate::quadrature::{quadrature_rule, segment_rule, square_rule};
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Quadrature order used when applying DOF functionals to analytic forms.
pub const PROJECTION_ORDER: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Family {
    #[serde(rename = "Q1-")]
    Q1Minus,
    #[serde(rename = "P1-")]
    P1Minus,
    #[serde(rename = "P2-")]
    P2Minus,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Q1Minus => "Q1-",
            Family::P1Minus => "P1-",
            Family::P2Minus => "P2-",
        }
    }

    pub fn cell_kind(self) -> CellKind {
        match self {
            Family::Q1Minus => CellKind::Cube,
            Family::P1Minus | Family::P2Minus => CellKind::Simplex,
        }
    }

    pub fn normalization(self) -> Normalization {
        match self {
            Family::Q1Minus => Normalization::FaceAveraged,
            _ => Normalization::Integral,
        }
    }

    /// Polynomial degree of the highest-order basis component.
    pub fn degree(self) -> usize {
        match self {
            Family::Q1Minus | Family::P1Minus => 1,
            Family::P2Minus => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = FeecError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "Q1-" | "Q1" => Ok(Family::Q1Minus),
            "P1-" | "P1" => Ok(Family::P1Minus),
            "P2-" | "P2" => Ok(Family::P2Minus),
            _ => Err(FeecError::Parse(format!("unknown family `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// DOF = face integral divided by face measure.
    FaceAveraged,
    /// DOF = face integral.
    Integral,
}

/// Owning entity of a global DOF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofEntry {
    pub entity_dim: usize,
    pub entity: usize,
    pub local: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    /// Plain coefficients `a`, `b`.
    Plain,
    /// Coefficients multiplied through by a mass matrix, like `e`.
    MassWeighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cochain<T> {
    pub family: Family,
    pub p: usize,
    pub representation: Representation,
    pub values: Vec<T>,
}

impl<T: Scalar> Cochain<T> {
    pub fn plain(space: &FormSpace<T>, values: Vec<T>) -> Result<Self> {
        Self::tagged(space, values, Representation::Plain)
    }

    pub fn tagged(space: &FormSpace<T>, values: Vec<T>, representation: Representation) -> Result<Self> {
        if values.len() != space.n_dofs() {
            return Err(FeecError::DimensionMismatch { expected: space.n_dofs(), found: values.len() });
        }
        Ok(Cochain { family: space.family(), p: space.p(), representation, values })
    }

    pub fn zeros(space: &FormSpace<T>) -> Self {
        Cochain { family: space.family(), p: space.p(), representation: Representation::Plain, values: vec![T::zero(); space.n_dofs()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    /// Polynomial of the given total degree.
    Polynomial(usize),
    Smooth,
}

type FormFn<T> = dyn Fn(&[T; 3]) -> Vec<T> + Send + Sync;

/// A differential form given by its coordinate components.
#[derive(Clone)]
pub struct AnalyticForm<T> {
    pub dim: usize,
    pub p: usize,
    pub smoothness: Smoothness,
    components: Arc<FormFn<T>>,
}

impl<T> fmt::Debug for AnalyticForm<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticForm").field("dim", &self.dim).field("p", &self.p).field("smoothness", &self.smoothness).finish()
    }
}

impl<T: Scalar> AnalyticForm<T> {
    pub fn new(dim: usize, p: usize, smoothness: Smoothness, f: impl Fn(&[T; 3]) -> Vec<T> + Send + Sync + 'static) -> Self {
        AnalyticForm { dim, p, smoothness, components: Arc::new(f) }
    }

    pub fn eval(&self, x: &[T; 3]) -> Vec<T> {
        let v = (self.components)(x);
        debug_assert_eq!(v.len(), form_components(self.dim, self.p));
        v
    }

    /// `amplitude * sin(k y) dx` in `dim` dimensions.
    pub fn sine_dx(dim: usize, k: T, amplitude: T) -> Self {
        AnalyticForm::new(dim, 1, Smoothness::Smooth, move |x| {
            let mut v = vec![T::zero(); dim];
            v[0] = amplitude * (k * x[1]).sin();
            v
        })
    }

    /// Constant 1-form.
    pub fn constant(dim: usize, p: usize, coeffs: Vec<T>) -> Self {
        assert_eq!(coeffs.len(), form_components(dim, p));
        AnalyticForm::new(dim, p, Smoothness::Polynomial(0), move |_| coeffs.clone())
    }
}

/// Number of coordinate components of a p-form in `dim` dimensions.
pub fn form_components(dim: usize, p: usize) -> usize {
    match (dim, p) {
        (_, 0) => 1,
        (2, 1) => 2,
        (2, 2) => 1,
        (3, 1) | (3, 2) => 3,
        (3, 3) => 1,
        _ => 0,
    }
}

fn local_count(family: Family, p: usize) -> usize {
    match family {
        Family::Q1Minus => [8, 12, 6, 1][p],
        Family::P1Minus => [3, 3, 1][p],
        Family::P2Minus => [6, 8, 3][p],
    }
}

#[derive(Clone, Debug)]
enum Geom<T> {
    Tri { x0: [T; 3], e1: [T; 2], e2: [T; 2], det: T, grads: [[T; 2]; 3] },
    Cube { origin: [T; 3], h: [T; 3] },
}

impl<T: Scalar> Geom<T> {
    fn of(mesh: &PeriodicMesh<T>, cell: usize) -> Result<Self> {
        let x = mesh.cell_coords(cell);
        match mesh.cell_kind() {
            CellKind::Simplex => {
                let e1 = [x[1][0] - x[0][0], x[1][1] - x[0][1]];
                let e2 = [x[2][0] - x[0][0], x[2][1] - x[0][1]];
                let det = cross2(e1, e2);
                if det == T::zero() {
                    return Err(FeecError::DegenerateMesh(format!("triangle {cell} has zero area")));
                }
                let g1 = [e2[1] / det, -e2[0] / det];
                let g2 = [-e1[1] / det, e1[0] / det];
                let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
                Ok(Geom::Tri { x0: x[0], e1, e2, det, grads: [g0, g1, g2] })
            }
            CellKind::Cube => {
                let l = mesh.lattice().expect("cubical mesh carries a lattice");
                Ok(Geom::Cube { origin: x[0], h: l.spacings })
            }
        }
    }

    fn physical(&self, r: [T; 3]) -> [T; 3] {
        match self {
            Geom::Tri { x0, e1, e2, .. } => [x0[0] + r[0] * e1[0] + r[1] * e2[0], x0[1] + r[0] * e1[1] + r[1] * e2[1], T::zero()],
            Geom::Cube { origin, h } => [origin[0] + r[0] * h[0], origin[1] + r[1] * h[1], origin[2] + r[2] * h[2]],
        }
    }

    /// Physical measure of the reference cell (|det J| or the cell volume).
    fn jacobian(&self) -> T {
        match self {
            Geom::Tri { det, .. } => det.abs(),
            Geom::Cube { h, .. } => h[0] * h[1] * h[2],
        }
    }
}

#[inline]
fn cross2<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn bary<T: Scalar>(r: [T; 3]) -> [T; 3] {
    [T::one() - r[0] - r[1], r[0], r[1]]
}

#[inline]
fn hat<T: Scalar>(s: usize, t: T) -> T {
    if s == 0 {
        T::one() - t
    } else {
        t
    }
}

#[inline]
fn hat_slope<T: Scalar>(s: usize) -> T {
    if s == 0 {
        -T::one()
    } else {
        T::one()
    }
}

#[inline]
fn corner<T: Scalar>(v: usize) -> [T; 3] {
    [T::from_count(v & 1), T::from_count((v >> 1) & 1), T::from_count((v >> 2) & 1)]
}

/// Whitney edge form `l_j grad l_k - l_k grad l_j`.
#[inline]
fn whitney<T: Scalar>(lam: &[T; 3], g: &[[T; 2]; 3], j: usize, k: usize) -> [T; 2] {
    [lam[j] * g[k][0] - lam[k] * g[j][0], lam[j] * g[k][1] - lam[k] * g[j][1]]
}

/// The three (i, j, k) index triples of the P2- 1-form spanning set,
/// meaning `l_i * whitney(j, k)`.
const P2_ONE_FORMS: [[usize; 3]; 8] = [[0, 0, 1], [1, 0, 1], [0, 0, 2], [2, 0, 2], [1, 1, 2], [2, 1, 2], [0, 1, 2], [1, 0, 2]];

/// Values of the spanning set on a triangle.
fn simplex_pre<T: Scalar>(family: Family, p: usize, g: &[[T; 2]; 3], lam: [T; 3]) -> Vec<Vec<T>> {
    let two = T::lit(2.0);
    match (family, p) {
        (Family::P1Minus, 0) => lam.iter().map(|&l| vec![l]).collect(),
        (Family::P1Minus, 1) => TRIANGLE_EDGES.iter().map(|&[j, k]| whitney(&lam, g, j, k).to_vec()).collect(),
        (Family::P1Minus, _) => vec![vec![two * cross2(g[1], g[2])]],
        (Family::P2Minus, 0) => {
            let mut v: Vec<Vec<T>> = lam.iter().map(|&l| vec![l]).collect();
            for [a, b] in TRIANGLE_EDGES {
                v.push(vec![lam[a] * lam[b]]);
            }
            v
        }
        (Family::P2Minus, 1) => P2_ONE_FORMS
            .iter()
            .map(|&[i, j, k]| {
                let w = whitney(&lam, g, j, k);
                vec![lam[i] * w[0], lam[i] * w[1]]
            })
            .collect(),
        (Family::P2Minus, _) => lam.iter().map(|&l| vec![l]).collect(),
        (Family::Q1Minus, _) => unreachable!("cubical family on a triangle"),
    }
}

/// Exterior derivatives of the spanning set on a triangle.
fn simplex_pre_d<T: Scalar>(family: Family, p: usize, g: &[[T; 2]; 3], lam: [T; 3]) -> Vec<Vec<T>> {
    let two = T::lit(2.0);
    match (family, p) {
        (Family::P1Minus, 0) => g.iter().map(|gi| gi.to_vec()).collect(),
        (Family::P1Minus, 1) => TRIANGLE_EDGES.iter().map(|&[j, k]| vec![two * cross2(g[j], g[k])]).collect(),
        (Family::P2Minus, 0) => {
            let mut v: Vec<Vec<T>> = g.iter().map(|gi| gi.to_vec()).collect();
            for [a, b] in TRIANGLE_EDGES {
                v.push(vec![lam[a] * g[b][0] + lam[b] * g[a][0], lam[a] * g[b][1] + lam[b] * g[a][1]]);
            }
            v
        }
        (Family::P2Minus, 1) => P2_ONE_FORMS
            .iter()
            .map(|&[i, j, k]| {
                // d(l_i w_jk) = l_j dl_i^dl_k - l_k dl_i^dl_j + 2 l_i dl_j^dl_k
                vec![lam[j] * cross2(g[i], g[k]) - lam[k] * cross2(g[i], g[j]) + two * lam[i] * cross2(g[j], g[k])]
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Q1- basis values on a cube.
fn cube_basis<T: Scalar>(p: usize, r: [T; 3]) -> Vec<Vec<T>> {
    match p {
        0 => (0..8)
            .map(|v| vec![hat(v & 1, r[0]) * hat((v >> 1) & 1, r[1]) * hat((v >> 2) & 1, r[2])])
            .collect(),
        1 => (0..12)
            .map(|le| {
                let axis = le / 4;
                let (s, t) = (le % 2, (le / 2) % 2);
                let (b, c) = other_axes(axis);
                let mut v = vec![T::zero(); 3];
                v[axis] = hat(s, r[b]) * hat(t, r[c]);
                v
            })
            .collect(),
        2 => (0..6)
            .map(|ls| {
                let normal = ls / 2;
                let mut v = vec![T::zero(); 3];
                v[normal] = hat(ls % 2, r[normal]);
                v
            })
            .collect(),
        _ => vec![vec![T::one()]],
    }
}

/// Exterior derivatives of the Q1- basis in physical coordinates.
fn cube_basis_d<T: Scalar>(p: usize, h: [T; 3], r: [T; 3]) -> Vec<Vec<T>> {
    match p {
        0 => (0..8)
            .map(|v| {
                let bits = [v & 1, (v >> 1) & 1, (v >> 2) & 1];
                (0..3)
                    .map(|d| {
                        let mut prod = hat_slope::<T>(bits[d]) / h[d];
                        for e in 0..3 {
                            if e != d {
                                prod *= hat(bits[e], r[e]);
                            }
                        }
                        prod
                    })
                    .collect()
            })
            .collect(),
        1 => (0..12)
            .map(|le| {
                let axis = le / 4;
                let bits = [le % 2, (le / 2) % 2];
                let (b, c) = other_axes(axis);
                // gradient of the scalar coefficient u(x_b, x_c)
                let mut grad = [T::zero(); 3];
                grad[b] = hat_slope::<T>(bits[0]) / h[b] * hat(bits[1], r[c]);
                grad[c] = hat(bits[0], r[b]) * hat_slope::<T>(bits[1]) / h[c];
                let mut u = [T::zero(); 3];
                u[axis] = T::one();
                // curl of (u_axis * e_axis) with the scalar gradient: grad x e_axis
                vec![
                    grad[1] * u[2] - grad[2] * u[1],
                    grad[2] * u[0] - grad[0] * u[2],
                    grad[0] * u[1] - grad[1] * u[0],
                ]
            })
            .collect(),
        2 => (0..6).map(|ls| vec![hat_slope::<T>(ls % 2) / h[ls / 2]]).collect(),
        _ => Vec::new(),
    }
}

/// The two remaining axes in increasing order.
#[inline]
pub(crate) fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// A finite element space of p-forms on a periodic mesh.
#[derive(Clone, Debug)]
pub struct FormSpace<T> {
    mesh: Arc<PeriodicMesh<T>>,
    family: Family,
    p: usize,
    dof_table: Vec<DofEntry>,
    cell_dofs: Vec<Vec<usize>>,
    geom: Vec<Geom<T>>,
    /// Per-cell coefficients expressing basis functions in the spanning set
    /// (row-major, column i = basis function i). Empty when the spanning set
    /// is already the dual basis.
    coeffs: Vec<Vec<T>>,
}

pub fn build_space<T: Scalar>(mesh: &Arc<PeriodicMesh<T>>, family: Family, p: usize) -> Result<FormSpace<T>> {
    FormSpace::new(mesh.clone(), family, p)
}

impl<T: Scalar> FormSpace<T> {
    pub fn new(mesh: Arc<PeriodicMesh<T>>, family: Family, p: usize) -> Result<Self> {
        if family.cell_kind() != mesh.cell_kind() {
            return Err(FeecError::FamilyMismatch { family: family.name().into(), cell: mesh.cell_kind().name().into() });
        }
        let dim = mesh.dimension();
        if p > dim {
            return Err(FeecError::FaceDimension { p, dim });
        }
        let geom = (0..mesh.num_cells()).map(|c| Geom::of(&mesh, c)).collect::<Result<Vec<_>>>()?;
        let (dof_table, cell_dofs) = number_dofs(&mesh, family, p);
        let mut space = FormSpace { mesh, family, p, dof_table, cell_dofs, geom, coeffs: Vec::new() };
        if family == Family::P2Minus {
            space.coeffs = (0..space.mesh.num_cells())
                .into_par_iter()
                .map(|c| space.dual_coefficients(c))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(space)
    }

    fn dual_coefficients(&self, cell: usize) -> Result<Vec<T>> {
        let n = local_count(self.family, self.p);
        let Geom::Tri { grads, .. } = &self.geom[cell] else { unreachable!() };
        let dofs = self.apply_local_dofs(cell, n, PROJECTION_ORDER, |r, _| simplex_pre(self.family, self.p, grads, bary(r)))?;
        let mut mat = vec![T::zero(); n * n];
        for k in 0..n {
            for j in 0..n {
                mat[k * n + j] = dofs[k][j];
            }
        }
        dense::invert(&mat, n).ok_or_else(|| FeecError::DegenerateMesh(format!("DOF matrix of cell {cell} is singular")))
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh<T>> {
        &self.mesh
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn dimension(&self) -> usize {
        self.mesh.dimension()
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_table.len()
    }

    pub fn normalization(&self) -> Normalization {
        self.family.normalization()
    }

    pub fn dof_table(&self) -> &[DofEntry] {
        &self.dof_table
    }

    pub fn components(&self) -> usize {
        form_components(self.dimension(), self.p)
    }

    pub fn local_dofs(&self) -> usize {
        local_count(self.family, self.p)
    }

    /// Global DOFs of a cell, indexed by local basis function.
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        &self.cell_dofs[cell]
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.num_cells()
    }

    /// Physical measure of a cell.
    pub fn cell_measure(&self, cell: usize) -> T {
        match &self.geom[cell] {
            Geom::Tri { det, .. } => det.abs() / T::lit(2.0),
            Geom::Cube { h, .. } => h[0] * h[1] * h[2],
        }
    }

    pub(crate) fn jacobian(&self, cell: usize) -> T {
        self.geom[cell].jacobian()
    }

    pub fn physical_point(&self, cell: usize, r: [T; 3]) -> [T; 3] {
        self.geom[cell].physical(r)
    }

    fn check_cell(&self, cell: usize) -> Result<()> {
        if cell >= self.num_cells() {
            return Err(FeecError::CellOutOfRange { id: cell, count: self.num_cells() });
        }
        Ok(())
    }

    fn check_ref_point(&self, r: [T; 3]) -> Result<()> {
        let tol = T::lit(1e-12);
        let inside = match self.mesh.cell_kind() {
            CellKind::Simplex => r[0] >= -tol && r[1] >= -tol && r[0] + r[1] <= T::one() + tol,
            CellKind::Cube => r.iter().all(|&c| c >= -tol && c <= T::one() + tol),
        };
        if !inside {
            return Err(FeecError::InvalidParameter(format!("reference point {r:?} lies outside the reference cell")));
        }
        Ok(())
    }

    fn combine(&self, cell: usize, pre: Vec<Vec<T>>) -> Vec<Vec<T>> {
        if self.coeffs.is_empty() || pre.is_empty() {
            return pre;
        }
        let n = pre.len();
        let m = pre[0].len();
        let b = &self.coeffs[cell];
        (0..n)
            .map(|i| {
                let mut v = vec![T::zero(); m];
                for (j, pj) in pre.iter().enumerate() {
                    let c = b[j * n + i];
                    if c != T::zero() {
                        for (vk, &pk) in v.iter_mut().zip(pj) {
                            *vk += c * pk;
                        }
                    }
                }
                v
            })
            .collect()
    }

    pub(crate) fn basis_unchecked(&self, cell: usize, r: [T; 3]) -> Vec<Vec<T>> {
        match &self.geom[cell] {
            Geom::Tri { grads, .. } => self.combine(cell, simplex_pre(self.family, self.p, grads, bary(r))),
            Geom::Cube { .. } => cube_basis(self.p, r),
        }
    }

    pub(crate) fn basis_d_unchecked(&self, cell: usize, r: [T; 3]) -> Vec<Vec<T>> {
        match &self.geom[cell] {
            Geom::Tri { grads, .. } => self.combine(cell, simplex_pre_d(self.family, self.p, grads, bary(r))),
            Geom::Cube { h, .. } => cube_basis_d(self.p, *h, r),
        }
    }

    /// Local basis values at a reference point: `result[local][component]`.
    pub fn evaluate_basis(&self, cell: usize, r: [T; 3]) -> Result<Vec<Vec<T>>> {
        self.check_cell(cell)?;
        self.check_ref_point(r)?;
        Ok(self.basis_unchecked(cell, r))
    }

    /// Exterior derivatives of the local basis, as (p+1)-form components.
    pub fn evaluate_basis_derivative(&self, cell: usize, r: [T; 3]) -> Result<Vec<Vec<T>>> {
        self.check_cell(cell)?;
        self.check_ref_point(r)?;
        if self.p == self.dimension() {
            return Err(FeecError::FaceDimension { p: self.p + 1, dim: self.dimension() });
        }
        Ok(self.basis_d_unchecked(cell, r))
    }

    /// Value of the discrete form with coefficients `values` at a reference point.
    pub fn evaluate(&self, values: &[T], cell: usize, r: [T; 3]) -> Result<Vec<T>> {
        if values.len() != self.n_dofs() {
            return Err(FeecError::DimensionMismatch { expected: self.n_dofs(), found: values.len() });
        }
        let b = self.evaluate_basis(cell, r)?;
        Ok(self.accumulate(values, cell, &b))
    }

    pub(crate) fn accumulate(&self, values: &[T], cell: usize, basis: &[Vec<T>]) -> Vec<T> {
        let mut out = vec![T::zero(); self.components()];
        for (&g, bi) in self.cell_dofs[cell].iter().zip(basis) {
            let c = values[g];
            for (o, &b) in out.iter_mut().zip(bi) {
                *o += c * b;
            }
        }
        out
    }

    /// Applies the local DOF functionals of `cell` to `m` forms evaluated by
    /// `f(reference point, physical point) -> [form][component]`.
    /// Returns `[local dof][form]`.
    pub fn apply_local_dofs<F>(&self, cell: usize, m: usize, order: usize, f: F) -> Result<Vec<Vec<T>>>
    where
        F: Fn([T; 3], [T; 3]) -> Vec<Vec<T>>,
    {
        let geom = &self.geom[cell];
        let n = local_count(self.family, self.p);
        let mut out = vec![vec![T::zero(); m]; n];
        let eval = |r: [T; 3]| f(r, geom.physical(r));
        match geom {
            Geom::Cube { .. } => self.cube_dofs(&mut out, order, eval)?,
            Geom::Tri { e1, e2, det, grads, .. } => self.simplex_dofs(&mut out, order, *e1, *e2, *det, grads, eval)?,
        }
        Ok(out)
    }

    fn cube_dofs(&self, out: &mut [Vec<T>], order: usize, eval: impl Fn([T; 3]) -> Vec<Vec<T>>) -> Result<()> {
        match self.p {
            0 => {
                for (v, row) in out.iter_mut().enumerate() {
                    for (o, val) in row.iter_mut().zip(eval(corner(v))) {
                        *o = val[0];
                    }
                }
            }
            1 => {
                let (g, w) = segment_rule::<T>(order)?;
                for (le, row) in out.iter_mut().enumerate() {
                    let axis = le / 4;
                    let start = corner::<T>(cube_edge_vertices(le)[0]);
                    for (&t, &wt) in g.iter().zip(&w) {
                        let mut r = start;
                        r[axis] = t;
                        for (o, val) in row.iter_mut().zip(eval(r)) {
                            *o += wt * val[axis];
                        }
                    }
                }
            }
            2 => {
                let (pts, w) = square_rule::<T>(order)?;
                for (ls, row) in out.iter_mut().enumerate() {
                    let normal = ls / 2;
                    let (b, c) = other_axes(normal);
                    let base = corner::<T>(cube_square_vertices(ls)[0]);
                    for (q, &wt) in pts.iter().zip(&w) {
                        let mut r = base;
                        r[b] = q[0];
                        r[c] = q[1];
                        for (o, val) in row.iter_mut().zip(eval(r)) {
                            *o += wt * val[normal];
                        }
                    }
                }
            }
            _ => {
                let rule = quadrature_rule::<T>(CellKind::Cube, order)?;
                for (r, &wt) in rule.points.iter().zip(&rule.weights) {
                    for (o, val) in out[0].iter_mut().zip(eval(*r)) {
                        *o += wt * val[0];
                    }
                }
            }
        }
        Ok(())
    }

    fn simplex_dofs(
        &self,
        out: &mut [Vec<T>],
        order: usize,
        e1: [T; 2],
        e2: [T; 2],
        det: T,
        grads: &[[T; 2]; 3],
        eval: impl Fn([T; 3]) -> Vec<Vec<T>>,
    ) -> Result<()> {
        let z = T::zero();
        let verts = [[z, z, z], [T::one(), z, z], [z, T::one(), z]];
        let p2 = self.family == Family::P2Minus;
        let (g, w) = segment_rule::<T>(order)?;
        let edge_point = |a: usize, b: usize, t: T| -> [T; 3] {
            let mut r = [z; 3];
            for d in 0..2 {
                r[d] = verts[a][d] * (T::one() - t) + verts[b][d] * t;
            }
            r
        };
        let tri = quadrature_rule::<T>(CellKind::Simplex, order.clamp(1, 6))?;
        let jac = det.abs();
        let orient = det.signum();
        match self.p {
            0 => {
                for v in 0..3 {
                    for (o, val) in out[v].iter_mut().zip(eval(verts[v])) {
                        *o = val[0];
                    }
                }
                if p2 {
                    for (le, [a, b]) in TRIANGLE_EDGES.iter().enumerate() {
                        for (&t, &wt) in g.iter().zip(&w) {
                            for (o, val) in out[3 + le].iter_mut().zip(eval(edge_point(*a, *b, t))) {
                                *o += wt * val[0];
                            }
                        }
                    }
                }
            }
            1 => {
                let xs = [[z, z], e1, e2];
                for (le, &[a, b]) in TRIANGLE_EDGES.iter().enumerate() {
                    let tau = [xs[b][0] - xs[a][0], xs[b][1] - xs[a][1]];
                    for (&t, &wt) in g.iter().zip(&w) {
                        let vals = eval(edge_point(a, b, t));
                        for (k, val) in vals.iter().enumerate() {
                            let tangential = val[0] * tau[0] + val[1] * tau[1];
                            if p2 {
                                out[2 * le][k] += wt * tangential * (T::one() - t);
                                out[2 * le + 1][k] += wt * tangential * t;
                            } else {
                                out[le][k] += wt * tangential;
                            }
                        }
                    }
                }
                if p2 {
                    // interior moments: oriented integral of w ^ dl_1 and w ^ dl_2
                    for (r, &wt) in tri.points.iter().zip(&tri.weights) {
                        for (k, val) in eval(*r).iter().enumerate() {
                            for (slot, gi) in [(6, grads[1]), (7, grads[2])] {
                                out[slot][k] += orient * wt * jac * (val[0] * gi[1] - val[1] * gi[0]);
                            }
                        }
                    }
                }
            }
            _ => {
                for (r, &wt) in tri.points.iter().zip(&tri.weights) {
                    let lam = bary(*r);
                    for (k, val) in eval(*r).iter().enumerate() {
                        let base = orient * wt * jac * val[0];
                        if p2 {
                            for i in 0..3 {
                                out[i][k] += base * lam[i];
                            }
                        } else {
                            out[0][k] += base;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical projection with the default quadrature order.
    pub fn canonical_projection(&self, form: &AnalyticForm<T>) -> Result<Cochain<T>> {
        self.canonical_projection_with_order(form, PROJECTION_ORDER)
    }

    /// Applies every global DOF functional to `form`.
    pub fn canonical_projection_with_order(&self, form: &AnalyticForm<T>, order: usize) -> Result<Cochain<T>> {
        if form.p != self.p || form.dim != self.dimension() {
            return Err(FeecError::IncompatibleSpaces(format!(
                "cannot project a {}-form in {}-D onto a {}-form space in {}-D",
                form.p,
                form.dim,
                self.p,
                self.dimension()
            )));
        }
        let local: Vec<Vec<Vec<T>>> = (0..self.num_cells())
            .into_par_iter()
            .map(|c| self.apply_local_dofs(c, 1, order, |_, x| vec![form.eval(&x)]))
            .collect::<Result<_>>()?;
        let mut values = vec![T::zero(); self.n_dofs()];
        let mut seen = vec![false; self.n_dofs()];
        for (c, dofs) in local.iter().enumerate() {
            for (l, &g) in self.cell_dofs[c].iter().enumerate() {
                if !seen[g] {
                    seen[g] = true;
                    values[g] = dofs[l][0];
                }
            }
        }
        Cochain::plain(self, values)
    }
}

fn number_dofs<T: Scalar>(mesh: &PeriodicMesh<T>, family: Family, p: usize) -> (Vec<DofEntry>, Vec<Vec<usize>>) {
    let cells = mesh.num_cells();
    let dim = mesh.dimension();
    match (family, p) {
        (Family::P2Minus, 0) => {
            let nv = mesh.num_faces(0);
            let mut table: Vec<DofEntry> = (0..nv).map(|v| DofEntry { entity_dim: 0, entity: v, local: 0 }).collect();
            table.extend((0..mesh.num_faces(1)).map(|e| DofEntry { entity_dim: 1, entity: e, local: 0 }));
            let cell_dofs = (0..cells)
                .map(|c| {
                    let mut d = mesh.cell_faces(0, c).to_vec();
                    d.extend(mesh.cell_faces(1, c).iter().map(|&e| nv + e));
                    d
                })
                .collect();
            (table, cell_dofs)
        }
        (Family::P2Minus, 1) => {
            let ne = mesh.num_faces(1);
            let mut table = Vec::with_capacity(2 * ne + 2 * cells);
            for e in 0..ne {
                for local in 0..2 {
                    table.push(DofEntry { entity_dim: 1, entity: e, local });
                }
            }
            for t in 0..cells {
                for local in 0..2 {
                    table.push(DofEntry { entity_dim: 2, entity: t, local });
                }
            }
            let cell_dofs = (0..cells)
                .map(|c| {
                    let mut d: Vec<usize> = mesh.cell_faces(1, c).iter().flat_map(|&e| [2 * e, 2 * e + 1]).collect();
                    d.extend([2 * ne + 2 * c, 2 * ne + 2 * c + 1]);
                    d
                })
                .collect();
            (table, cell_dofs)
        }
        (Family::P2Minus, _) => {
            let table = (0..cells).flat_map(|t| (0..3).map(move |local| DofEntry { entity_dim: dim, entity: t, local })).collect();
            let cell_dofs = (0..cells).map(|c| vec![3 * c, 3 * c + 1, 3 * c + 2]).collect();
            (table, cell_dofs)
        }
        _ => {
            let table = (0..mesh.num_faces(p)).map(|f| DofEntry { entity_dim: p, entity: f, local: 0 }).collect();
            let cell_dofs = (0..cells).map(|c| mesh.cell_faces(p, c).to_vec()).collect();
            (table, cell_dofs)
        }
    }
}
