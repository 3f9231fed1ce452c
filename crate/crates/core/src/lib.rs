//! Strong approximation of the one-dimensional squared Bessel process
//!
//! ```text
//! dX_t = (1 - b X_t) dt + 2 √X_t dW_t,   X_0 = x0 ≥ 0,
//! ```
//!
//! on `[0, 1]`: the explicit pathwise solution, equidistant schemes, the
//! adaptive bisection algorithm for the infimum of `W`, and Monte Carlo
//! drivers that measure `L_p` errors without reference-grid bias.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod brownian;
pub mod error;
pub mod exact;
pub mod experiments;
mod quadrature;
pub mod rng;
pub mod schemes;

pub use adaptive::{adaptive_error_sample, run_adaptive, threshold, AdaptiveState};
pub use brownian::{BridgeSegment, IncrementCovariance, Partition, SampledPath};
pub use error::{Error, Result};
pub use exact::{
    conditional_inf_cdf, optimal_l2_estimator, solution_b0, solution_general_b, ExactCoupling,
    ModelParams, QuadratureSpec,
};
pub use experiments::{ErrorEstimate, Method, RateFit, StudyConfig, StudyReport};
pub use rng::StreamRng;
pub use schemes::{run_scheme, SchemeKind, SchemeOutput};
