//! Discrete Maxwell dynamics: exact sub-Hamiltonian flows and their splittings.
//!
//! With `K = C^T M2 C` the Hamiltonian is
//! `H = 1/2 (eps0 e^T Q e + (1/mu0) a^T K a)` and the Poisson matrix is
//! `J = (1/eps0) [[0, -I], [I, 0]]` on `(a, e)`. Each half of `H` generates a
//! shear, so each sub-flow is an exact affine map.

use crate::error::{FeecError, Result};
use crate::feec::{Cochain, Representation};
use crate::scalar::{max_abs, norm2, Scalar};
use crate::solve::EnvelopeCholesky;
use crate::sparse::{LinearOperator, SparseOperator};
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Default cap on `N1` for the dense symplectic check.
pub const SYMPLECTIC_CAP: usize = 512;

/// Threshold on `dt * c * sqrt(rho(Q K))` above which a warning is logged.
pub const CFL_LIMIT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSystem<T> {
    pub epsilon0: T,
    pub mu0: T,
}

impl<T: Scalar> UnitSystem<T> {
    pub fn new(epsilon0: T, mu0: T) -> Result<Self> {
        if !(epsilon0 > T::zero() && mu0 > T::zero()) || !epsilon0.is_finite() || !mu0.is_finite() {
            return Err(FeecError::InvalidParameter("eps0 and mu0 must be positive and finite".into()));
        }
        Ok(UnitSystem { epsilon0, mu0 })
    }

    /// Natural units, `eps0 = mu0 = c = 1`.
    pub fn natural() -> Self {
        UnitSystem { epsilon0: T::one(), mu0: T::one() }
    }

    pub fn c2(&self) -> T {
        T::one() / (self.epsilon0 * self.mu0)
    }
}

impl<T: Scalar> Default for UnitSystem<T> {
    fn default() -> Self {
        Self::natural()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Vector potential `a` and mass-weighted `e`.
    AE,
    /// Flux `b = C a` and mass-weighted `e`.
    BE,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::AE => "ae",
            Formulation::BE => "be",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = FeecError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ae" => Ok(Formulation::AE),
            "be" => Ok(Formulation::BE),
            other => Err(FeecError::Parse(format!("unknown formulation '{other}' (expected ae or be)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldState<T> {
    pub formulation: Formulation,
    /// `a` or `b`, depending on the formulation.
    pub first: Cochain<T>,
    /// Mass-weighted electric field.
    pub e: Cochain<T>,
    pub time: T,
    /// Rounding lost when adding `H_e` increments to `first`, fed back into
    /// the next increment (Kahan summation). Keeps `D b` at rounding level
    /// over long runs.
    carry: Vec<T>,
}

impl<T: Scalar> FieldState<T> {
    pub fn new(formulation: Formulation, first: Cochain<T>, mut e: Cochain<T>) -> Self {
        e.representation = Representation::MassWeighted;
        let carry = vec![T::zero(); first.len()];
        FieldState { formulation, first, e, time: T::zero(), carry }
    }

    /// Converts an `(a, e)` state to `(b, e)` with `b = C a`.
    pub fn to_be(&self, curl: &SparseOperator<T>) -> Result<Self> {
        if self.formulation != Formulation::AE {
            return Err(FeecError::WrongFormulation("to_be expects an (a, e) state".into()));
        }
        if curl.cols() != self.first.len() {
            return Err(FeecError::DimensionMismatch { expected: curl.cols(), found: self.first.len() });
        }
        let b = Cochain {
            family: self.first.family,
            p: self.first.p + 1,
            representation: Representation::Plain,
            values: curl.matvec(&self.first.values),
        };
        let carry = vec![T::zero(); b.len()];
        Ok(FieldState { formulation: Formulation::BE, first: b, e: self.e.clone(), time: self.time, carry })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    LieTrotter,
    Strang,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::LieTrotter => "lie-trotter",
            SplitKind::Strang => "strang",
        }
    }
}

impl FromStr for SplitKind {
    type Err = FeecError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strang" => Ok(SplitKind::Strang),
            "lie-trotter" | "lie" | "lietrotter" => Ok(SplitKind::LieTrotter),
            other => Err(FeecError::Parse(format!("unknown scheme '{other}' (expected strang or lie-trotter)"))),
        }
    }
}

/// Approximation of `M1^{-1}` used by the `H_e` flow.
#[derive(Clone, Debug)]
pub enum InverseMass<T> {
    Sparse(SparseOperator<T>),
    Exact(Arc<EnvelopeCholesky<T>>),
}

impl<T: Scalar> InverseMass<T> {
    pub fn exact(m1: &SparseOperator<T>) -> Result<Self> {
        Ok(InverseMass::Exact(Arc::new(EnvelopeCholesky::factor(m1)?)))
    }

    /// `(Q + Q^T) / 2`; the exact inverse is already symmetric.
    pub fn symmetric_part(&self) -> Self {
        match self {
            InverseMass::Sparse(q) => {
                let half = T::lit(0.5);
                let mut trip: Vec<(usize, usize, T)> = q.triplets().map(|(i, j, v)| (i, j, v * half)).collect();
                trip.extend(q.triplets().map(|(i, j, v)| (j, i, v * half)));
                InverseMass::Sparse(SparseOperator::from_triplets(q.rows(), q.cols(), trip))
            }
            InverseMass::Exact(f) => InverseMass::Exact(Arc::clone(f)),
        }
    }

    /// Largest `|Q_ij - Q_ji|`; zero for the exact inverse.
    pub fn asymmetry(&self) -> T {
        match self {
            InverseMass::Sparse(q) => q.asymmetry(),
            InverseMass::Exact(_) => T::zero(),
        }
    }
}

impl<T: Scalar> LinearOperator<T> for InverseMass<T> {
    fn nrows(&self) -> usize {
        match self {
            InverseMass::Sparse(q) => q.rows(),
            InverseMass::Exact(f) => f.dim(),
        }
    }

    fn ncols(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[T], y: &mut [T]) {
        match self {
            InverseMass::Sparse(q) => q.apply_into(x, y),
            InverseMass::Exact(f) => f.apply_into(x, y),
        }
    }
}

/// Which version of `Q` drives the `H_e` flow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QUsage {
    /// `(Q + Q^T) / 2`. The flow is then exactly Hamiltonian for any pattern.
    #[default]
    Symmetrized,
    /// `Q` as returned by the approximate inverse.
    AsProduced,
}

/// Time step, operators and units of a splitting integrator.
#[derive(Clone, Debug)]
pub struct SplitScheme<T: Scalar> {
    pub kind: SplitKind,
    pub dt: T,
    pub units: UnitSystem<T>,
    q_usage: QUsage,
    q_flow: InverseMass<T>,
    q_sym: InverseMass<T>,
    q_asymmetry: T,
    curl: SparseOperator<T>,
    curl_t: SparseOperator<T>,
    m2: SparseOperator<T>,
}

impl<T: Scalar> SplitScheme<T> {
    pub fn new(
        kind: SplitKind,
        dt: T,
        q: InverseMass<T>,
        curl: SparseOperator<T>,
        m2: SparseOperator<T>,
        units: UnitSystem<T>,
    ) -> Result<Self> {
        Self::with_q_usage(kind, dt, q, curl, m2, units, QUsage::default())
    }

    pub fn with_q_usage(
        kind: SplitKind,
        dt: T,
        q: InverseMass<T>,
        curl: SparseOperator<T>,
        m2: SparseOperator<T>,
        units: UnitSystem<T>,
        q_usage: QUsage,
    ) -> Result<Self> {
        if !(dt >= T::zero()) || !dt.is_finite() {
            return Err(FeecError::InvalidParameter(format!("time step must be finite and non-negative, got {dt}")));
        }
        let n1 = curl.cols();
        if q.nrows() != n1 {
            return Err(FeecError::DimensionMismatch { expected: n1, found: q.nrows() });
        }
        if m2.rows() != curl.rows() || m2.cols() != curl.rows() {
            return Err(FeecError::DimensionMismatch { expected: curl.rows(), found: m2.rows() });
        }
        let q_sym = q.symmetric_part();
        let q_asymmetry = q.asymmetry();
        let q_flow = match q_usage {
            QUsage::Symmetrized => q_sym.clone(),
            QUsage::AsProduced => q,
        };
        let curl_t = curl.transpose();
        let scheme = SplitScheme { kind, dt, units, q_usage, q_flow, q_sym, q_asymmetry, curl, curl_t, m2 };
        let cfl = scheme.cfl_number();
        if cfl > T::lit(CFL_LIMIT) {
            log::warn!(
                "time step {} exceeds the stability estimate: dt*c*sqrt(rho) = {:.3} > {}",
                dt,
                cfl.as_f64(),
                CFL_LIMIT
            );
        }
        Ok(scheme)
    }

    pub fn q_usage(&self) -> QUsage {
        self.q_usage
    }

    /// Largest `|Q_ij - Q_ji|` of the operator passed in.
    pub fn q_asymmetry(&self) -> T {
        self.q_asymmetry
    }

    pub fn curl(&self) -> &SparseOperator<T> {
        &self.curl
    }

    pub fn m2(&self) -> &SparseOperator<T> {
        &self.m2
    }

    pub fn n1(&self) -> usize {
        self.curl.cols()
    }

    /// Same operators, different step.
    pub fn with_dt(&self, dt: T) -> Result<Self> {
        if !(dt >= T::zero()) || !dt.is_finite() {
            return Err(FeecError::InvalidParameter(format!("time step must be finite and non-negative, got {dt}")));
        }
        Ok(SplitScheme { dt, ..self.clone() })
    }

    /// `K x = C^T M2 C x`.
    pub fn stiffness_apply(&self, x: &[T]) -> Vec<T> {
        self.curl_t.matvec(&self.m2.matvec(&self.curl.matvec(x)))
    }

    /// `dt * c * sqrt(rho(Q K))` with the spectral radius from power iteration.
    pub fn cfl_number(&self) -> T {
        let n = self.n1();
        if n == 0 || self.dt == T::zero() {
            return T::zero();
        }
        // deterministic, non-special start vector
        let mut x: Vec<T> = (0..n).map(|i| T::one() + T::lit(0.37) * T::from_count(i % 7)).collect();
        let mut rho = T::zero();
        for _ in 0..60 {
            let nx = norm2(&x);
            if nx == T::zero() {
                return T::zero();
            }
            x.iter_mut().for_each(|v| *v /= nx);
            let y = self.q_sym.apply(&self.stiffness_apply(&x));
            rho = norm2(&y);
            x = y;
        }
        self.dt * (self.units.c2() * rho).sqrt()
    }
}

fn check_state<T: Scalar>(state: &FieldState<T>, scheme: &SplitScheme<T>) {
    let n1 = scheme.n1();
    let first = match state.formulation {
        Formulation::AE => n1,
        Formulation::BE => scheme.curl.rows(),
    };
    assert_eq!(state.e.len(), n1, "e has wrong length for this scheme");
    assert_eq!(state.first.len(), first, "first field has wrong length for this scheme");
}

/// Exact flow of `H_e` for time `dt`: `a -= dt Q e` (or `b -= dt C Q e`).
/// The clock is not advanced.
pub fn flow_he<T: Scalar>(state: &FieldState<T>, dt: T, scheme: &SplitScheme<T>) -> FieldState<T> {
    check_state(state, scheme);
    let mut out = state.clone();
    if dt == T::zero() {
        return out;
    }
    let qe = scheme.q_flow.apply(&state.e.values);
    let delta = match state.formulation {
        Formulation::AE => qe,
        Formulation::BE => scheme.curl.matvec(&qe),
    };
    if out.carry.len() != out.first.len() {
        out.carry = vec![T::zero(); out.first.len()];
    }
    for ((x, c), d) in out.first.values.iter_mut().zip(out.carry.iter_mut()).zip(delta) {
        let y = -(dt * d) - *c;
        let t = *x + y;
        *c = (t - *x) - y;
        *x = t;
    }
    out
}

/// Exact flow of `H_a` for time `dt`: `e += dt c^2 C^T M2 C a` (or `C^T M2 b`).
/// The clock is not advanced.
pub fn flow_ha<T: Scalar>(state: &FieldState<T>, dt: T, scheme: &SplitScheme<T>) -> FieldState<T> {
    check_state(state, scheme);
    let mut out = state.clone();
    if dt == T::zero() {
        return out;
    }
    let b = match state.formulation {
        Formulation::AE => scheme.curl.matvec(&state.first.values),
        Formulation::BE => state.first.values.clone(),
    };
    let force = scheme.curl_t.matvec(&scheme.m2.matvec(&b));
    let s = dt * scheme.units.c2();
    for (x, f) in out.e.values.iter_mut().zip(force) {
        *x += s * f;
    }
    out
}

/// One step of the scheme; the only operation that advances `time`.
pub fn step<T: Scalar>(state: &FieldState<T>, scheme: &SplitScheme<T>) -> FieldState<T> {
    let dt = scheme.dt;
    let mut out = match scheme.kind {
        SplitKind::Strang => {
            let half = dt * T::lit(0.5);
            let s = flow_he(state, half, scheme);
            let s = flow_ha(&s, dt, scheme);
            flow_he(&s, half, scheme)
        }
        SplitKind::LieTrotter => {
            let s = flow_he(state, dt, scheme);
            flow_ha(&s, dt, scheme)
        }
    };
    out.time = state.time + dt;
    out
}

/// Runs `steps` steps.
pub fn evolve<T: Scalar>(state: &FieldState<T>, scheme: &SplitScheme<T>, steps: usize) -> FieldState<T> {
    let mut s = state.clone();
    for _ in 0..steps {
        s = step(&s, scheme);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct EnergyBreakdown<T> {
    /// `eps0/2 e^T ((Q + Q^T)/2) e`.
    pub electric: T,
    /// `eps0/2 e^T Q e` with `Q` as passed to the scheme.
    pub electric_raw: T,
    pub magnetic: T,
    pub total: T,
}

pub fn energy_breakdown<T: Scalar>(state: &FieldState<T>, scheme: &SplitScheme<T>) -> EnergyBreakdown<T> {
    check_state(state, scheme);
    let half = T::lit(0.5);
    let e = &state.e.values;
    let electric = half * scheme.units.epsilon0 * crate::scalar::dot(e, &scheme.q_sym.apply(e));
    let q_raw = match scheme.q_usage {
        QUsage::AsProduced => &scheme.q_flow,
        QUsage::Symmetrized => &scheme.q_sym,
    };
    let electric_raw = half * scheme.units.epsilon0 * crate::scalar::dot(e, &q_raw.apply(e));
    let b = match state.formulation {
        Formulation::AE => scheme.curl.matvec(&state.first.values),
        Formulation::BE => state.first.values.clone(),
    };
    let magnetic = half / scheme.units.mu0 * crate::scalar::dot(&b, &scheme.m2.matvec(&b));
    EnergyBreakdown { electric, electric_raw, magnetic, total: electric + magnetic }
}

/// Discrete Hamiltonian with `Q` symmetrized for evaluation.
pub fn energy<T: Scalar>(state: &FieldState<T>, scheme: &SplitScheme<T>) -> T {
    energy_breakdown(state, scheme).total
}

/// `||D b||_inf` for a `(b, e)` state.
pub fn gauss_residual<T: Scalar>(state: &FieldState<T>, div: &SparseOperator<T>) -> Result<T> {
    if state.formulation != Formulation::BE {
        return Err(FeecError::WrongFormulation("Gauss residual needs a (b, e) state".into()));
    }
    if div.cols() != state.first.len() {
        return Err(FeecError::DimensionMismatch { expected: div.cols(), found: state.first.len() });
    }
    Ok(max_abs(&div.matvec(&state.first.values)))
}

/// Dense matrix of one step on `(a, e)`, stored by columns.
pub fn step_matrix<T: Scalar>(scheme: &SplitScheme<T>, cap: usize) -> Result<Vec<Vec<T>>> {
    let n = scheme.n1();
    if n > cap {
        return Err(FeecError::TooLarge { size: n, cap });
    }
    let family = crate::feec::Family::P1Minus;
    let zero = |len: usize, p: usize| Cochain { family, p, representation: Representation::Plain, values: vec![T::zero(); len] };
    let cols = (0..2 * n)
        .into_par_iter()
        .map(|j| {
            let mut a = zero(n, 1);
            let mut e = zero(n, 1);
            if j < n {
                a.values[j] = T::one();
            } else {
                e.values[j - n] = T::one();
            }
            let s = step(&FieldState::new(Formulation::AE, a, e), scheme);
            let mut col = s.first.values;
            col.extend(s.e.values);
            col
        })
        .collect();
    Ok(cols)
}

/// `max |Phi^T J Phi - J|` for the one-step map `Phi` on `(a, e)`.
pub fn symplectic_check<T: Scalar>(scheme: &SplitScheme<T>) -> Result<T> {
    symplectic_check_with_cap(scheme, SYMPLECTIC_CAP)
}

pub fn symplectic_check_with_cap<T: Scalar>(scheme: &SplitScheme<T>, cap: usize) -> Result<T> {
    let n = scheme.n1();
    let phi = step_matrix(scheme, cap)?;
    let s = T::one() / scheme.units.epsilon0;
    let dev = (0..2 * n)
        .into_par_iter()
        .map(|i| {
            let (ti, bi) = phi[i].split_at(n);
            let mut worst = T::zero();
            for (j, pj) in phi.iter().enumerate() {
                let (tj, bj) = pj.split_at(n);
                let v = s * (crate::scalar::dot(bi, tj) - crate::scalar::dot(ti, bj));
                let target = if i < n && j == i + n {
                    -s
                } else if i >= n && j + n == i {
                    s
                } else {
                    T::zero()
                };
                worst = worst.max((v - target).abs());
            }
            worst
        })
        .reduce(T::zero, |a, b| a.max(b));
    Ok(dev)
}
