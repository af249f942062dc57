//! End-to-end analysis of one control/treatment pair.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::baseline::{delta_grid_analysis, Bandwidth, DeltaArm};
use crate::blb::{blb_variance, CdfVariance};
use crate::error::{Error, Result};
use crate::qte::{qte_grid, QteRow};
use crate::sketch::{build_sketch, Ecdf, EventRecord, Sketch, MAX_DIGITS};
use crate::woodruff::{interpolate_to_grid, woodruff_se, Grid, GridAnalysis};

/// Derives an independent seed from a master seed and a path of labels.
///
/// The derivation is a hash, so it is stable across platforms and does not
/// depend on the order in which jobs are scheduled.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Tuning parameters shared by every analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConqParams {
    /// Decimal digits kept after log-scaling.
    pub digits: u32,
    /// User buckets per arm.
    pub buckets: usize,
    /// Balanced bootstrap replicates.
    pub bootstraps: usize,
    pub alpha: f64,
    pub grid: Grid,
}

impl Default for ConqParams {
    fn default() -> Self {
        ConqParams {
            digits: 2,
            buckets: 100,
            bootstraps: 200,
            alpha: 0.05,
            grid: Grid::default(),
        }
    }
}

impl ConqParams {
    pub fn validate(&self) -> Result<()> {
        if self.buckets < 2 {
            return Err(Error::Config(format!(
                "bucket count must be >= 2, got {}",
                self.buckets
            )));
        }
        if self.bootstraps < 2 {
            return Err(Error::Config(format!(
                "bootstrap count must be >= 2, got {}",
                self.bootstraps
            )));
        }
        if self.digits > MAX_DIGITS {
            return Err(Error::Config(format!(
                "digits must be <= {MAX_DIGITS}, got {}",
                self.digits
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Method {
    #[default]
    Conq,
    Delta(Bandwidth),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Conq => "conq",
            Method::Delta(_) => "delta",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sketch, empirical CDF and bootstrap CDF variance of one arm.
#[derive(Debug, Clone)]
pub struct PreparedArm {
    pub sketch: Sketch,
    pub ecdf: Ecdf,
    pub variance: CdfVariance,
}

impl PreparedArm {
    pub fn from_sketch(sketch: Sketch, bootstraps: usize, seed: u64) -> Result<Self> {
        let variance = blb_variance(&sketch, bootstraps, derive_seed(seed, &["bootstrap"]))?;
        Ok(PreparedArm {
            ecdf: sketch.ecdf(),
            sketch,
            variance,
        })
    }

    /// Builds the arm from events grouped by user.
    pub fn from_users<U: AsRef<[f64]>>(
        users: &[U],
        params: &ConqParams,
        seed: u64,
    ) -> Result<Self> {
        let sketch = Sketch::from_users(
            users,
            params.digits,
            params.buckets,
            derive_seed(seed, &["buckets"]),
        )?;
        Self::from_sketch(sketch, params.bootstraps, seed)
    }

    pub fn from_events(events: &[EventRecord], params: &ConqParams, seed: u64) -> Result<Self> {
        let sketch = build_sketch(
            events,
            params.digits,
            params.buckets,
            derive_seed(seed, &["buckets"]),
        )?;
        Self::from_sketch(sketch, params.bootstraps, seed)
    }

    /// Woodruff SEs interpolated onto `grid`.
    pub fn conq_grid(&self, grid: &Grid) -> Result<GridAnalysis> {
        let knots = woodruff_se(&self.ecdf, &self.variance)?;
        interpolate_to_grid(&self.ecdf, &knots, grid)
    }

    pub fn delta_arm(&self) -> DeltaArm<'_> {
        DeltaArm {
            sketch: &self.sketch,
            variance: &self.variance,
        }
    }

    pub fn grid_analysis(&self, method: Method, grid: &Grid) -> Result<GridAnalysis> {
        match method {
            Method::Conq => self.conq_grid(grid),
            Method::Delta(bw) => delta_grid_analysis(self.delta_arm(), grid, bw),
        }
    }
}

/// QTE rows plus the per-arm curves they were computed from.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub control: GridAnalysis,
    pub treatment: GridAnalysis,
    pub rows: Vec<QteRow>,
}

pub fn analyze_arms(
    control: &PreparedArm,
    treatment: &PreparedArm,
    method: Method,
    grid: &Grid,
    alpha: f64,
) -> Result<Analysis> {
    let control = control.grid_analysis(method, grid)?;
    let treatment = treatment.grid_analysis(method, grid)?;
    let rows = qte_grid(&control, &treatment, alpha)?;
    Ok(Analysis {
        control,
        treatment,
        rows,
    })
}

/// Full CONQ (or DELTA) run on raw events of both arms.
pub fn analyze_events(
    control: &[EventRecord],
    treatment: &[EventRecord],
    params: &ConqParams,
    method: Method,
    seed: u64,
) -> Result<Analysis> {
    params.validate()?;
    let c = PreparedArm::from_events(control, params, derive_seed(seed, &["C"]))?;
    let t = PreparedArm::from_events(treatment, params, derive_seed(seed, &["T"]))?;
    analyze_arms(&c, &t, method, &params.grid, params.alpha)
}
