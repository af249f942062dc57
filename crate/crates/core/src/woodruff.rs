//! Quantile standard errors by inverting a CDF band through the empirical CDF.

use std::str::FromStr;

use crate::blb::CdfVariance;
use crate::error::{Error, Result};
use crate::sketch::Ecdf;

/// Symmetrized quantile SE (log units) at every sketch value.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSeKnots {
    pub fractions: Vec<f64>,
    pub se_log: Vec<f64>,
}

/// For every value `x_j` with CDF `F_j` and bootstrap SD `sd_j = sqrt(nu_j)`:
///
/// ```text
/// lower = inf { t : F(t) >= F_j - sd_j }
/// upper = inf { t : F(t) >= F_j + sd_j }
/// se_j  = max(x_j - lower, upper - x_j)
/// ```
///
/// Targets above 1 clamp to the largest value; targets below the first
/// fraction land on the smallest value.
pub fn woodruff_se(ecdf: &Ecdf, nu: &CdfVariance) -> Result<QuantileSeKnots> {
    if ecdf.values() != nu.values() {
        return Err(Error::Config(
            "empirical CDF and bootstrap variance refer to different values".into(),
        ));
    }
    let values = ecdf.values();
    let se_log = ecdf
        .cum_fractions()
        .iter()
        .zip(nu.variances())
        .zip(values)
        .map(|((&f, &var), &x)| {
            let sd = var.max(0.0).sqrt();
            let lower = values[ecdf.index_at_least(f - sd)];
            let upper = values[ecdf.index_at_least(f + sd)];
            (x - lower).max(upper - x)
        })
        .collect();
    Ok(QuantileSeKnots {
        fractions: ecdf.cum_fractions().to_vec(),
        se_log,
    })
}

/// Evaluation grid of probabilities in `(0, 1]`, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Grid("grid is empty".into()));
        }
        if let Some(&p) = points.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Grid(format!("grid point {p} is outside (0, 1]")));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Grid(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(Grid(points))
    }

    /// Percentiles `lo, lo + step, ..., hi` (in percent). Every point is
    /// computed as `(lo + k * step) / 100` rather than by accumulation.
    pub fn percentiles(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(lo <= hi) {
            return Err(Error::Grid(format!("bad range P{lo}:P{hi}:{step}")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        Grid::new((0..=n).map(|k| (lo + k as f64 * step) / 100.0).collect())
    }

    /// P20 to P99 in steps of 1.
    pub fn default_percentiles() -> Self {
        Grid::percentiles(20.0, 99.0, 1.0).expect("default grid is valid")
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::default_percentiles()
    }
}

/// Parses `P<lo>:P<hi>:<step>`, e.g. `P20:P99:1`.
impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Grid(format!("expected P<lo>:P<hi>:<step>, got {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [lo, hi, step] = parts.as_slice() else {
            return Err(bad());
        };
        let pct = |t: &str| -> Result<f64> {
            t.strip_prefix(['P', 'p'])
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(bad)
        };
        let step: f64 = step.parse().map_err(|_| bad())?;
        let (lo, hi) = (pct(lo)?, pct(hi)?);
        if !(lo > 0.0 && hi <= 100.0) {
            return Err(Error::Grid(format!(
                "percentiles in {s:?} must lie in (0, 100]"
            )));
        }
        Grid::percentiles(lo, hi, step)
    }
}

/// Per-variant quantiles and SEs on the evaluation grid (log units).
#[derive(Debug, Clone, PartialEq)]
pub struct GridAnalysis {
    pub grid: Grid,
    pub q_log: Vec<f64>,
    pub se_log: Vec<f64>,
}

/// Quantile at every grid point, plus the SE linearly interpolated in
/// `(fraction, SE)` space. Grid points left of the first knot take the first
/// knot's SE.
pub fn interpolate_to_grid(
    ecdf: &Ecdf,
    knots: &QuantileSeKnots,
    grid: &Grid,
) -> Result<GridAnalysis> {
    if grid.is_empty() {
        return Err(Error::Grid("grid is empty".into()));
    }
    let fr = &knots.fractions;
    let se = &knots.se_log;
    let mut q_log = Vec::with_capacity(grid.len());
    let mut se_log = Vec::with_capacity(grid.len());
    for &p in grid.points() {
        q_log.push(ecdf.quantile(p)?);
        let k = fr.partition_point(|&f| f < p).min(fr.len() - 1);
        let value = if k == 0 || fr[k] == p {
            se[k]
        } else {
            let t = (p - fr[k - 1]) / (fr[k] - fr[k - 1]);
            se[k - 1] + t * (se[k] - se[k - 1])
        };
        se_log.push(value);
    }
    Ok(GridAnalysis {
        grid: grid.clone(),
        q_log,
        se_log,
    })
}
