//! Estimation of Markov-switching linear autoregressive models by EM, with an
//! E-step made of forward-only recursive filters under a reference measure.
//!
//! The crate is organized as:
//!
//! * [`model`]: parameters, conditional means and regime likelihood ratios.
//! * [`filter`]: the forward-only statistic filters.
//! * [`em`]: the EM loop and the closed-form M-step.
//! * [`oracle`]: path enumeration and scaled forward-backward, used to check
//!   the filters.
//! * [`simulate`]: seeded synthetic data.
//! * [`io`]: CSV and JSON file formats.
//! * [`bench`]: operation counts and timings for both E-steps.

// Index loops mirror the matrix algebra; `!(x > 0.0)` deliberately catches NaN;
// the AS241 constants are kept exactly as published.
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::excessive_precision,
    clippy::result_large_err
)]

pub mod bench;
pub mod em;
pub mod error;
pub mod filter;
pub mod io;
pub mod model;
pub mod oracle;
pub mod simulate;
pub mod stats;

pub use em::{fit, Algorithm, FitConfig, FitFailure, FitReport};
pub use error::{Error, Result};
pub use filter::{run_filter, FilterState};
pub use model::{LagWindow, ObservationSeries, RegimeParams, SwitchingModel, TransitionMatrix};
pub use stats::SufficientStats;
