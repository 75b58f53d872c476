//! Discrete exterior calculus on periodic meshes for Maxwell's equations.

pub mod bench;
pub mod dense;
pub mod dynamics;
pub mod error;
pub mod feec;
pub mod mesh;
pub mod operators;
pub mod quadrature;
pub mod scalar;
pub mod solve;
pub mod sparse;
pub mod spai;
pub mod yee;

pub use error::{FeecError, Result};
pub use mesh::{generate_cubical_lattice, generate_periodic_triangulation, CellKind, MeshMethod, PeriodicMesh};
pub use scalar::Scalar;
pub use sparse::{LinearOperator, SparseOperator};

/// Double-precision mesh.
pub type Mesh = PeriodicMesh<f64>;
/// Double-precision sparse matrix.
pub type Sparse = SparseOperator<f64>;
