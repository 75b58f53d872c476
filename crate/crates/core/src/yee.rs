//! Lumped cubical SFEEC versus a hand-written staggered-grid FDTD solver.
//!
//! [`YeeGrid`] and [`yee_fdtd_step`] are written from the index formulas
//! only and do not touch any FEEC code. [`equivalence_check`] runs both and
//! compares them.

use crate::dynamics::{evolve, FieldState, Formulation, InverseMass, SplitKind, SplitScheme, UnitSystem};
use crate::error::{FeecError, Result};
use crate::feec::{build_space, Cochain, Family, FormSpace};
use crate::mesh::{generate_cubical_lattice, CellKind, PeriodicMesh};
use crate::operators::derivative_matrix;
use crate::scalar::Scalar;
use crate::sparse::SparseOperator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// `Delta_V * I` for a Q1- space on a uniform cubical lattice.
pub fn lumped_mass<T: Scalar>(space: &FormSpace<T>) -> Result<SparseOperator<T>> {
    if space.family() != Family::Q1Minus {
        return Err(FeecError::FamilyMismatch { family: space.family().name().into(), cell: "lumped (cubical only)".into() });
    }
    let lattice = space
        .mesh()
        .lattice()
        .ok_or_else(|| FeecError::InvalidParameter("lumped mass needs a uniform cubical lattice".into()))?;
    let dv = lattice.spacings.iter().fold(T::one(), |acc, &h| acc * h);
    Ok(SparseOperator::scaled_identity(space.n_dofs(), dv))
}

/// Periodic staggered grid.
///
/// `ex[i,j,k]` lives at `(i+1/2, j, k)`, `bx[i,j,k]` at `(i, j+1/2, k+1/2)`,
/// and cyclically for the other components.
#[derive(Clone, Debug, PartialEq)]
pub struct YeeGrid<T> {
    pub n: [usize; 3],
    pub spacing: [T; 3],
    pub e: [Vec<T>; 3],
    pub b: [Vec<T>; 3],
    /// Time of `e`; `b` is half a step ahead once [`yee_initialize`] has run.
    pub time: T,
}

impl<T: Scalar> YeeGrid<T> {
    pub fn zeros(n: [usize; 3], spacing: [T; 3]) -> Self {
        let len = n[0] * n[1] * n[2];
        let z = || vec![T::zero(); len];
        YeeGrid { n, spacing, e: [z(), z(), z()], b: [z(), z(), z()], time: T::zero() }
    }

    #[inline]
    pub fn idx(&self, i: isize, j: isize, k: isize) -> usize {
        let [nx, ny, nz] = self.n.map(|v| v as isize);
        (i.rem_euclid(nx) + nx * (j.rem_euclid(ny) + ny * k.rem_euclid(nz))) as usize
    }
}

/// `b -= dt curl e`.
fn advance_b<T: Scalar>(g: &mut YeeGrid<T>, dt: T) {
    let [nx, ny, nz] = g.n.map(|v| v as isize);
    let [dx, dy, dz] = g.spacing;
    let mut nb = g.b.clone();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = g.idx(i, j, k);
                let (ex, ey, ez) = (&g.e[0], &g.e[1], &g.e[2]);
                let cx = (ez[g.idx(i, j + 1, k)] - ez[c]) / dy - (ey[g.idx(i, j, k + 1)] - ey[c]) / dz;
                let cy = (ex[g.idx(i, j, k + 1)] - ex[c]) / dz - (ez[g.idx(i + 1, j, k)] - ez[c]) / dx;
                let cz = (ey[g.idx(i + 1, j, k)] - ey[c]) / dx - (ex[g.idx(i, j + 1, k)] - ex[c]) / dy;
                nb[0][c] -= dt * cx;
                nb[1][c] -= dt * cy;
                nb[2][c] -= dt * cz;
            }
        }
    }
    g.b = nb;
}

/// `e += c^2 dt curl b`.
fn advance_e<T: Scalar>(g: &mut YeeGrid<T>, dt: T, units: &UnitSystem<T>) {
    let [nx, ny, nz] = g.n.map(|v| v as isize);
    let [dx, dy, dz] = g.spacing;
    let s = units.c2() * dt;
    let mut ne = g.e.clone();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = g.idx(i, j, k);
                let (bx, by, bz) = (&g.b[0], &g.b[1], &g.b[2]);
                let cx = (bz[c] - bz[g.idx(i, j - 1, k)]) / dy - (by[c] - by[g.idx(i, j, k - 1)]) / dz;
                let cy = (bx[c] - bx[g.idx(i, j, k - 1)]) / dz - (bz[c] - bz[g.idx(i - 1, j, k)]) / dx;
                let cz = (by[c] - by[g.idx(i - 1, j, k)]) / dx - (bx[c] - bx[g.idx(i, j - 1, k)]) / dy;
                ne[0][c] += s * cx;
                ne[1][c] += s * cy;
                ne[2][c] += s * cz;
            }
        }
    }
    g.e = ne;
}

/// Moves `b` from time `t` to `t + dt/2`.
pub fn yee_initialize<T: Scalar>(grid: &YeeGrid<T>, dt: T) -> YeeGrid<T> {
    let mut g = grid.clone();
    advance_b(&mut g, dt * T::lit(0.5));
    g
}

/// One leapfrog step on staggered data: `e^{n+1}` from `b^{n+1/2}`, then
/// `b^{n+3/2}` from `e^{n+1}`.
pub fn yee_fdtd_step<T: Scalar>(grid: &YeeGrid<T>, dt: T, units: &UnitSystem<T>) -> YeeGrid<T> {
    let mut g = grid.clone();
    advance_e(&mut g, dt, units);
    advance_b(&mut g, dt);
    g.time = grid.time + dt;
    g
}

/// Brings `b` from `t + dt/2` back to the time of `e`.
pub fn yee_synchronize<T: Scalar>(grid: &YeeGrid<T>, dt: T) -> YeeGrid<T> {
    let mut g = grid.clone();
    advance_b(&mut g, -dt * T::lit(0.5));
    g
}

/// Lumped Q1- spaces and operators on a periodic lattice.
pub struct LumpedCubical<T: Scalar> {
    pub mesh: Arc<PeriodicMesh<T>>,
    pub edges: FormSpace<T>,
    pub squares: FormSpace<T>,
    pub curl: SparseOperator<T>,
    pub div: SparseOperator<T>,
    pub m1: SparseOperator<T>,
    pub m2: SparseOperator<T>,
    /// `+1/-1`: orientation of each edge relative to its lattice axis.
    pub edge_sign: Vec<T>,
    /// `+1/-1`: orientation of each square relative to its normal axis.
    pub square_sign: Vec<T>,
}

impl<T: Scalar> LumpedCubical<T> {
    pub fn new(counts: [usize; 3], spacings: [T; 3]) -> Result<Self> {
        let mesh = Arc::new(generate_cubical_lattice(counts, spacings)?);
        let edges = build_space(&mesh, Family::Q1Minus, 1)?;
        let squares = build_space(&mesh, Family::Q1Minus, 2)?;
        let cubes = build_space(&mesh, Family::Q1Minus, 3)?;
        let curl = derivative_matrix(&edges, &squares)?;
        let div = derivative_matrix(&squares, &cubes)?;
        let m1 = lumped_mass(&edges)?;
        let m2 = lumped_mass(&squares)?;
        let edge_sign = (0..mesh.num_faces(1))
            .map(|id| {
                let x = mesh.face_coords(1, id);
                let d: T = (0..3).map(|a| x[1][a] - x[0][a]).sum();
                d.signum()
            })
            .collect();
        let square_sign = (0..mesh.num_faces(2))
            .map(|id| {
                let x = mesh.face_coords(2, id);
                let u = sub(x[1], x[0]);
                let v = sub(x[2], x[1]);
                let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                n.iter().copied().sum::<T>().signum()
            })
            .collect();
        debug_assert_eq!(mesh.cell_kind(), CellKind::Cube);
        Ok(LumpedCubical { mesh, edges, squares, curl, div, m1, m2, edge_sign, square_sign })
    }

    pub fn cell_volume(&self) -> T {
        self.m1.get(0, 0)
    }

    /// Maps grid fields to `(b, e)` cochains: `e = Delta_V E`, `b = B`.
    pub fn to_cochains(&self, g: &YeeGrid<T>) -> Result<(Cochain<T>, Cochain<T>)> {
        let mut e = vec![T::zero(); self.edges.n_dofs()];
        let mut b = vec![T::zero(); self.squares.n_dofs()];
        let dv = self.cell_volume();
        let [nx, ny, nz] = g.n.map(|v| v as isize);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = g.idx(i, j, k);
                    for axis in 0..3 {
                        let ed = self.mesh.lattice_edge(axis, i, j, k);
                        e[ed] = self.edge_sign[ed] * dv * g.e[axis][c];
                        let sq = self.mesh.lattice_square(axis, i, j, k);
                        b[sq] = self.square_sign[sq] * g.b[axis][c];
                    }
                }
            }
        }
        Ok((Cochain::plain(&self.squares, b)?, Cochain::plain(&self.edges, e)?))
    }

    /// Inverse of [`LumpedCubical::to_cochains`].
    pub fn to_grid(&self, b: &[T], e: &[T], spacing: [T; 3], counts: [usize; 3]) -> YeeGrid<T> {
        let mut g = YeeGrid::zeros(counts, spacing);
        let dv = self.cell_volume();
        let [nx, ny, nz] = counts.map(|v| v as isize);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = g.idx(i, j, k);
                    for axis in 0..3 {
                        let ed = self.mesh.lattice_edge(axis, i, j, k);
                        g.e[axis][c] = self.edge_sign[ed] * e[ed] / dv;
                        let sq = self.mesh.lattice_square(axis, i, j, k);
                        g.b[axis][c] = self.square_sign[sq] * b[sq];
                    }
                }
            }
        }
        g
    }

    /// Strang scheme in `(b, e)` form with both masses lumped.
    pub fn scheme(&self, dt: T, units: UnitSystem<T>) -> Result<SplitScheme<T>> {
        let q = InverseMass::Sparse(SparseOperator::scaled_identity(self.edges.n_dofs(), T::one() / self.cell_volume()));
        SplitScheme::new(SplitKind::Strang, dt, q, self.curl.clone(), self.m2.clone(), units)
    }
}

fn sub<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Grid with uniform random fields in `[-1, 1]`.
pub fn random_grid<T: Scalar>(counts: [usize; 3], spacing: [T; 3], seed: u64) -> YeeGrid<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = YeeGrid::zeros(counts, spacing);
    for f in g.e.iter_mut().chain(g.b.iter_mut()) {
        for v in f.iter_mut() {
            *v = T::lit(rng.gen_range(-1.0..1.0));
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct EquivalenceReport<T> {
    pub max_deviation: T,
    pub max_e_deviation: T,
    pub max_b_deviation: T,
    /// Largest field magnitude at the end, for scale.
    pub max_field: T,
}

/// Runs `steps` lumped Strang steps and the staggered FDTD solver from the
/// same random data and compares the synchronized fields.
pub fn equivalence_check<T: Scalar>(
    counts: [usize; 3],
    spacings: [T; 3],
    dt: T,
    steps: usize,
    seed: u64,
    units: UnitSystem<T>,
) -> Result<EquivalenceReport<T>> {
    let sys = LumpedCubical::new(counts, spacings)?;
    let grid0 = random_grid(counts, spacings, seed);

    let (b0, e0) = sys.to_cochains(&grid0)?;
    let scheme = sys.scheme(dt, units)?;
    let end = evolve(&FieldState::new(Formulation::BE, b0, e0), &scheme, steps);
    let feec = sys.to_grid(&end.first.values, &end.e.values, spacings, counts);

    let mut g = yee_initialize(&grid0, dt);
    for _ in 0..steps {
        g = yee_fdtd_step(&g, dt, &units);
    }
    let yee = yee_synchronize(&g, dt);

    let diff = |a: &[Vec<T>; 3], b: &[Vec<T>; 3]| {
        a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (*p - *q).abs())).fold(T::zero(), T::max)
    };
    let max_e = diff(&feec.e, &yee.e);
    let max_b = diff(&feec.b, &yee.b);
    let max_field = yee.e.iter().chain(yee.b.iter()).flat_map(|f| f.iter()).fold(T::zero(), |m, v| m.max(v.abs()));
    Ok(EquivalenceReport { max_deviation: max_e.max(max_b), max_e_deviation: max_e, max_b_deviation: max_b, max_field })
}
