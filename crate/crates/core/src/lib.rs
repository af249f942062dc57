//! Continuous quantile treatment effects for user-clustered A/B metrics.
//!
//! Metric values are log-scaled and rounded, users are split into buckets,
//! and a balanced bag-of-little-bootstraps over the buckets estimates the
//! variance of the empirical CDF at every observed value. Woodruff-style
//! inversion turns that into quantile standard errors without any density
//! estimate, which gives percentage-change effects, p-values and confidence
//! intervals on an arbitrary percentile grid.
//!
//! ```
//! use conq::eval::{simulate_experiment, SimConfig};
//! use conq::pipeline::{analyze_arms, ConqParams, Method, PreparedArm};
//!
//! let sim = simulate_experiment(&SimConfig { n_users: 400, effect: 1.1, ..Default::default() }).unwrap();
//! let params = ConqParams { buckets: 20, bootstraps: 50, ..Default::default() };
//! let control = PreparedArm::from_users(&sim.control, &params, 1).unwrap();
//! let treatment = PreparedArm::from_users(&sim.treatment, &params, 2).unwrap();
//! let analysis = analyze_arms(&control, &treatment, Method::Conq, &params.grid, params.alpha).unwrap();
//! assert_eq!(analysis.rows.len(), 80);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod blb;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod pipeline;
pub mod qte;
pub mod sketch;
pub mod woodruff;

pub use error::{Error, Result};
