//! Polytopes in halfspace form and the control-invariance machinery built
//! on them: variable elimination, one-step backward reachability, and the
//! fixed-point iteration for the maximal control-invariant set.

mod invariant;
mod polytope;
mod sampling;

pub use invariant::{invariant_set, pre_set, InvariantSetReport};
pub use polytope::{box_polytope, enumerate_vertices, extended_constraints, GeomError, Polytope};
pub use sampling::{boundary_points, exterior_points, interior_points};

/// Default tolerance for redundancy certification.
pub const REDUNDANCY_TOL: f64 = 1e-9;

/// Default tolerance for subset tests and fixed-point convergence.
pub const SUBSET_TOL: f64 = 1e-7;
