//! Finite-volume simulator for chemotaxis with density-suppressed motility,
//!
//! ```text
//! u_t = Δ(γ(v)u) + μu(1 − u),   −Δv + v = u,
//! ```
//!
//! on an interval or a disk (radial symmetry) with no-flux boundaries.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod initdata;
pub mod motility;
pub mod par;
pub mod steady;
pub mod tridiag;

pub use dynamics::{FluxForm, Observer, SchemeConfig, SimState, Simulator, Status, Stepper};
pub use elliptic::HelmholtzOperator;
pub use error::{exit, Error, Result};
pub use grid::{Field, Geometry, RadialGrid};
pub use motility::{Motility, K0};
pub use par::Execution;
