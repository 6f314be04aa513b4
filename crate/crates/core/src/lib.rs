//! Optimal rank-3 laminate energy bounds for multi-load plane elasticity and
//! their realization as single-scale periodic microstructures.
//!
//! The pipeline is
//!
//! 1. [`moments::optimize_moments`]: minimize the complementary energy over
//!    the feasible set of trigonometric moments (a 4-variable convex problem),
//! 2. [`recon::reconstruct`]: turn the optimal moments into an explicit rank-3
//!    laminate,
//! 3. [`unitcell`]: lay the three layer families out on a periodic
//!    parallelogram cell and rasterize it,
//! 4. [`topopt::optimize`]: refine the rasterized cell by inverse
//!    homogenization ([`homogenize`]) with a density filter, Heaviside
//!    projection and MMA.
//!
//! [`experiment`] strings these together into parameter sweeps.

pub mod error;
pub mod experiment;
pub mod homogenize;
pub mod io;
pub mod laminate;
pub mod moments;
pub mod recon;
pub mod topopt;
pub mod unitcell;

pub use error::{Error, Result};
pub use laminate::{
    complementary_energy, effective_compliance, isotropic_compliance, moment_feasibility,
    moment_matrix, to_xi_coords, ComplianceMatrix, LoadSet, MaterialPair, MomentVector,
    StressCase, XiVector,
};
pub use moments::{grid_search_oracle, optimize_moments, MomentSolution, SolverOptions};
pub use recon::{reconstruct, Rank3Laminate};
