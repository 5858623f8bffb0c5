//! Conditioning of ODE solutions and empirical global-error bounds for
//! fixed-step one-step integrators.
//!
//! For `x' = f(t, x)` the conditioning function
//! `E(t) = ∫_{t0}^{t} ‖Φ(t, s)‖₂ ds` is built from the state-transition
//! matrix `Φ` of the variational equation along the solution. For an
//! order-`r` method with step `h` the global error is expected to satisfy
//! `‖x̃(t;h) − x(t)‖ ≤ K (E(t) + ε) h^r`. This crate computes `E`, classifies
//! its long-time growth (constant, linear, exponential), and checks the bound
//! numerically by estimating `K` across step halvings.
//!
//! ```no_run
//! use gecond::{regime_experiment, systems, Method};
//!
//! let vdp = systems::van_der_pol();
//! let (curve, report) = regime_experiment(&vdp, 200.0, 1e-3, &Method::rk4()).unwrap();
//! println!("E(200) = {} -> {}", curve.last_value(), report.class);
//! ```

pub mod cli;
pub mod conditioning;
pub mod error;
pub mod integrators;
pub mod io;
pub mod linalg;
pub mod reference;
pub mod studies;
pub mod systems;
pub mod variational;

pub use conditioning::{
    classify_growth, conditioning_curve, ConditioningCurve, GrowthClass, GrowthParams, GrowthReport,
};
pub use error::{Error, Result};
pub use integrators::{integrate, step, Method, Trajectory};
pub use linalg::{Matrix, NormKind, ScaledMatrix};
pub use reference::{global_error, reference_trajectory, ErrorCurve, ReferenceSolution};
pub use studies::{bound_check, convergence_study, regime_experiment, BoundReport, ConvergenceStudy};
pub use systems::{builtin_suite, StateVector, System};
pub use variational::{norm2, transition_sequence, TransitionSequence};
