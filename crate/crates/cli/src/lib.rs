//! Batch command-line front end for the `conq` library.
//!
//! Three commands share one binary:
//!
//! * `analyze` reads an event file and writes per-group QTE tables
//!   (and optional SVG figures),
//! * `aa-validate` runs the simulated A/A false-discovery study,
//! * `compare` runs two methods on identical simulated experiments.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod args;
pub mod format;
pub mod plots;
pub mod studies;

pub use analyze::{cmd_analyze, RunConfig};
pub use args::{run, Cli};
pub use plots::emit_plots;
pub use studies::{cmd_aa_validate, cmd_compare};
