//! Simulation and verification laboratory for age-and-trait structured
//! population dynamics.
//!
//! The crate computes effective-fitness eigenelements, evolves both the
//! scaled nonlocal Hamilton-Jacobi equation and its limit, solves the
//! original renewal PDE as ground truth, checks the corrector bounds, and
//! integrates the canonical equation for the dominant trait, with a scenario
//! harness that cross-validates all routes.

pub mod coefficients;
pub mod corrector;
pub mod direct;
pub mod dynamics;
pub mod eigen;
pub mod grid;
pub mod harness;
pub mod hj;
pub mod kernel;
pub mod quad;
pub mod scenario;
pub mod validate;

pub use coefficients::{AssumptionBounds, CoefficientModel, CoefficientSet, InitialCondition};
pub use eigen::{EigenBundle, EigenEngine};
pub use grid::{AgeGrid, TraitGrid, TraitPoint};
pub use kernel::{KernelKind, KernelQuad, MutationKernel};

