//! Constant-momentum proximal schemes for composite convex problems with
//! quadratic growth.
//!
//! * [`problems`] composite objectives `F = f + h` with known geometry
//! * [`schemes`] Forward-Backward, FISTA variants, V-FISTA, periodic restart
//! * [`tuning`] momentum parameters and certified contraction rates
//! * [`certify`] discrete Lyapunov energies and bound checks on actual runs
//! * [`ode`] Heavy Ball with friction integrator and continuous-time checks

pub mod certify;
pub mod ode;
pub mod problems;
pub mod schemes;
pub mod tuning;

pub use problems::{CompositeProblem, Matrix, Vector};
pub use schemes::{run, SchemeConfig, SchemeKind};
pub use tuning::RateCertificate;
