//! Kernel-energy minimization over probability measures under moment
//! constraints.
//!
//! The library solves discrete versions of continuous quadratic programs
//! over measures: minimize the kernel energy of a probability measure on a
//! grid subject to moment equality or inequality constraints. Around that
//! core sit the pieces that make the infinite problem tractable:
//!
//! - [`kernel`]: kernel functions, energy matrices, admissibility for the
//!   Frostman maximum principle;
//! - [`measure`]: discrete measures, potentials, mutual energies, moments;
//! - [`family`]: constraint function families (Chebyshev systems) and
//!   moment-feasibility tests;
//! - [`polytope`]: the feasible weight polytope, dense-simplex LP and vertex
//!   enumeration (the extreme points of the constrained measure set);
//! - [`energy_qp`]: Frank-Wolfe energy minimization, the reduction of
//!   general linear-plus-quadratic objectives, and the mass sweep;
//! - [`saddle`]: the dual functional q, support-restricted Chebyshev
//!   constants and their limit estimate;
//! - [`cutting_plane`]: constraint generation over the z-space for equality
//!   and inequality problems;
//! - [`verify`]: numerical verification reports (maximum principle, equality
//!   chain, two-set swap).

pub mod cutting_plane;
pub mod energy_qp;
pub mod error;
pub mod family;
pub mod io;
pub mod kernel;
pub mod measure;
pub mod polytope;
pub mod problem;
pub mod saddle;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::{
    assemble_energy_matrix, carleson_admissible, default_epsilon, grid_1d, tensor_grid,
    DiagonalPolicy, EnergyMatrix, Kernel, KernelKind, Point,
};
pub use measure::{moment, mutual_energy, potential, psi, DiscreteMeasure};
pub use polytope::{Direction, FeasiblePolytope, RowSense, Vertex};
