//! Entropy-stable finite-volume solver for nonisothermal Maxwell–Stefan gas mixtures in
//! one space dimension.
//!
//! The pieces, bottom-up:
//!
//! * [`constitutive`]: ideal-gas closures and the state / entropy-variable bijection.
//! * [`msalgebra`]: the Maxwell–Stefan friction matrix, its Bott–Duffin inverse and the
//!   Onsager matrix relating gradients of entropy variables to fluxes.
//! * [`grid`], [`banded`], [`flux`]: finite-volume geometry, the banded linear solver and
//!   face fluxes.
//! * [`stepper`]: implicit Euler in entropy variables with a damped Newton solver.
//! * [`diagnostics`]: entropy, energy and dissipation functionals and refinement
//!   experiments.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod flux;
pub mod grid;
pub mod msalgebra;
pub mod stepper;

pub use constitutive::{LocalEntropyVars, LocalState, MixtureParams};
pub use diagnostics::DiagnosticsRecord;
pub use error::{Error, Result};
pub use grid::{FaceAverage, Grid};
pub use msalgebra::MsLocal;
pub use stepper::{Scheme, StepConfig, StepOutcome, TrajectoryState};
