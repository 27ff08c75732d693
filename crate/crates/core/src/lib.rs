//! Finite element solver for the incompressible Navier-Stokes equations with
//! impermeability imposed weakly by Nitsche's method and general (implicit,
//! nonmonotone or dynamic) slip laws on part of the boundary.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: structured triangulations with tagged boundary facets,
//! * [`fespace`]: Taylor-Hood P2/P1 space, evaluation, interpolation, norms,
//! * [`sliplaw`]: regularised slip laws with Jacobians and certificates,
//! * [`forms`]: residual and Jacobian of the Nitsche scheme,
//! * [`solver`]: Newton with line search, continuation, time marching,
//! * [`stability`]: discrete trace, Korn and inf-sup constants,
//! * [`verify`]: manufactured solutions and convergence studies,
//! * [`experiments`]: configuration-driven experiment runner.

pub mod error;
pub mod experiments;
pub mod fespace;
pub mod forms;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod sliplaw;
pub mod solver;
pub mod stability;
pub mod svg;
pub mod verify;

pub use error::{Error, Result};
pub use fespace::{SystemState, TaylorHoodSpace};
pub use forms::{MeanPressureMode, NitscheConfig, Penalty, Problem, TimeMode, Variant};
pub use mesh::{Diagonal, FacetTag, Mesh};
pub use sliplaw::SlipLaw;
pub use solver::{NewtonConfig, Trajectory};
