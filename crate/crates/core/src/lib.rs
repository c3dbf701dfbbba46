//! Analysis and simulation of Lotka-Volterra systems with infinite
//! (distributed) delays and feedback controls.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: system parameters, kernels, histories and configuration files.
//! - [`matrices`]: community matrices and their P-/M-matrix classification.
//! - [`equilibria`]: Cramer determinants, equilibrium enumeration, saturation.
//! - [`attractivity`]: sufficient conditions for global attractivity and
//!   partial extinction, each returning a re-checkable certificate.
//! - [`simulator`]: fixed-step integration of the delay system plus the
//!   Lyapunov functionals and trajectory checks.

pub mod attractivity;
pub mod equilibria;
pub mod lp;
pub mod matrices;
pub mod model;
pub mod simulator;

pub use model::{load_spec, History, HistorySpec, Kernel, SpecBuilder, SpecError, SystemSpec, TableKernel};
