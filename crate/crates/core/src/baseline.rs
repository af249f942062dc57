//! Density-based comparison method ("DELTA").
//!
//! The quantile SE is the bootstrap SD of the CDF at the sample quantile
//! divided by a Gaussian kernel density estimate there. Everything runs on the
//! log-scaled sketch, so the bandwidth is in log units.

use std::fmt;
use std::str::FromStr;

use crate::blb::CdfVariance;
use crate::error::{Error, Result};
use crate::qte::{qte_grid, QteRow};
use crate::sketch::{Ecdf, Sketch};
use crate::woodruff::{Grid, GridAnalysis};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Bandwidth choice for the kernel density estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    NormalReference,
}

impl Bandwidth {
    pub fn fixed(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Config(format!("bandwidth {h} must be positive")));
        }
        Ok(Bandwidth::Fixed(h))
    }

    /// Resolves the bandwidth for one arm.
    pub fn resolve(self, sketch: &Sketch, ecdf: &Ecdf) -> Result<f64> {
        match self {
            Bandwidth::Fixed(h) => Ok(h),
            Bandwidth::NormalReference => {
                let iqr = ecdf.quantile(0.75)? - ecdf.quantile(0.25)?;
                bandwidth_normal_reference(sketch.log_std_dev(), iqr, sketch.n_events())
            }
        }
    }
}

/// Accepts `nrr` / `normal-reference` or a positive number.
impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "nrr" | "normal-reference" => Ok(Bandwidth::NormalReference),
            other => other
                .parse::<f64>()
                .map_err(|_| {
                    Error::Config(format!("bandwidth {other:?} is neither a number nor 'nrr'"))
                })
                .and_then(Bandwidth::fixed),
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Fixed(h) => write!(f, "{h}"),
            Bandwidth::NormalReference => f.write_str("nrr"),
        }
    }
}

/// `1.06 * min(sd, iqr / 1.34) * n^(-1/5)`.
///
/// When exactly one of the spread measures is zero the other one is used.
pub fn bandwidth_normal_reference(sd: f64, iqr: f64, n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Config(format!(
            "normal reference rule needs n >= 2, got {n}"
        )));
    }
    if !(sd >= 0.0 && iqr >= 0.0) {
        return Err(Error::Config(format!(
            "negative spread: sd={sd}, iqr={iqr}"
        )));
    }
    let robust = iqr / 1.34;
    let spread = match (sd > 0.0, robust > 0.0) {
        (true, true) => sd.min(robust),
        (true, false) => sd,
        (false, true) => robust,
        (false, false) => return Err(Error::DegenerateBandwidth),
    };
    Ok(1.06 * spread / (n as f64).powf(0.2))
}

/// Gaussian KDE over the grouped sketch values.
pub fn kde_density(sketch: &Sketch, x: f64, h: f64) -> f64 {
    let weighted: f64 = sketch
        .values()
        .iter()
        .zip(sketch.total_counts())
        .map(|(&xj, &c)| {
            let u = (x - xj) / h;
            c as f64 * (-0.5 * u * u).exp()
        })
        .sum();
    FRAC_1_SQRT_2PI * weighted / (sketch.n_events() as f64 * h)
}

/// One arm of a DELTA comparison.
#[derive(Debug, Clone, Copy)]
pub struct DeltaArm<'a> {
    pub sketch: &'a Sketch,
    pub variance: &'a CdfVariance,
}

struct ResolvedArm<'a> {
    arm: DeltaArm<'a>,
    ecdf: Ecdf,
    h: f64,
}

impl<'a> ResolvedArm<'a> {
    fn new(arm: DeltaArm<'a>, bandwidth: Bandwidth) -> Result<Self> {
        if arm.sketch.values() != arm.variance.values() {
            return Err(Error::Config(
                "sketch and bootstrap variance refer to different values".into(),
            ));
        }
        let ecdf = arm.sketch.ecdf();
        let h = bandwidth.resolve(arm.sketch, &ecdf)?;
        Ok(ResolvedArm { arm, ecdf, h })
    }

    /// Log quantile and its SE at `p`.
    fn quantile_with_se(&self, p: f64) -> Result<(f64, f64)> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Probability(p));
        }
        let j = self.ecdf.index_at_least(p);
        let x = self.ecdf.values()[j];
        let sd = self.arm.variance.variances()[j].max(0.0).sqrt();
        if sd == 0.0 {
            return Ok((x, 0.0));
        }
        let density = kde_density(self.arm.sketch, x, self.h);
        if !(density > f64::MIN_POSITIVE) {
            return Err(Error::ZeroDensity {
                x,
                bandwidth: self.h,
            });
        }
        Ok((x, sd / density))
    }
}

/// Per-arm log quantiles and density-based SEs on a grid. Grid points must
/// lie strictly inside (0, 1).
pub fn delta_grid_analysis(
    arm: DeltaArm<'_>,
    grid: &Grid,
    bandwidth: Bandwidth,
) -> Result<GridAnalysis> {
    let resolved = ResolvedArm::new(arm, bandwidth)?;
    let (q_log, se_log) = grid
        .points()
        .iter()
        .map(|&p| resolved.quantile_with_se(p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(GridAnalysis {
        grid: grid.clone(),
        q_log,
        se_log,
    })
}

/// DELTA estimate at a single quantile level `p`.
pub fn delta_qte(
    control: DeltaArm<'_>,
    treatment: DeltaArm<'_>,
    p: f64,
    bandwidth: Bandwidth,
    alpha: f64,
) -> Result<QteRow> {
    let grid = Grid::new(vec![p])?;
    Ok(delta_grid(control, treatment, &grid, bandwidth, alpha)?[0])
}

/// DELTA estimates over a grid, resolving each arm's bandwidth once.
pub fn delta_grid(
    control: DeltaArm<'_>,
    treatment: DeltaArm<'_>,
    grid: &Grid,
    bandwidth: Bandwidth,
    alpha: f64,
) -> Result<Vec<QteRow>> {
    qte_grid(
        &delta_grid_analysis(control, grid, bandwidth)?,
        &delta_grid_analysis(treatment, grid, bandwidth)?,
        alpha,
    )
}
