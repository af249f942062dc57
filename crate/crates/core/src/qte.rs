//! Percentage-change quantile treatment effects.
//!
//! Quantiles and their SEs arrive on the natural-log scale. The relative
//! change is `exp(qt - qc) - 1` and its SE follows from the delta method on
//! the log difference.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::woodruff::GridAnalysis;

/// One grid point of the QTE output. Percent quantities are in percent units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QteRow {
    pub percentile: f64,
    pub q_control: f64,
    pub q_treatment: f64,
    pub delta_pct: f64,
    pub se_pct: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Two-sided critical value `z_{alpha/2}`.
pub fn z_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} is outside (0, 1)")));
    }
    Ok(std_normal().inverse_cdf(1.0 - alpha / 2.0))
}

pub fn delta_percent(qc_log: f64, qt_log: f64) -> f64 {
    (qt_log - qc_log).exp_m1() * 100.0
}

pub fn delta_se(qc_log: f64, qt_log: f64, se_c_log: f64, se_t_log: f64) -> f64 {
    se_c_log.hypot(se_t_log) * (qt_log - qc_log).exp() * 100.0
}

/// Two-sided normal p-value. With a zero SE the statistic is a point mass:
/// 1 when there is no difference, 0 otherwise.
pub fn p_value(delta_pct: f64, se_pct: f64) -> f64 {
    if se_pct == 0.0 {
        return if delta_pct == 0.0 { 1.0 } else { 0.0 };
    }
    (2.0 * std_normal().cdf(-(delta_pct / se_pct).abs())).min(1.0)
}

/// Assembles a row from per-variant log quantiles and log SEs.
pub fn qte_row(percentile: f64, qc_log: f64, qt_log: f64, se_c: f64, se_t: f64, z: f64) -> QteRow {
    let delta_pct = delta_percent(qc_log, qt_log);
    let se_pct = delta_se(qc_log, qt_log, se_c, se_t);
    QteRow {
        percentile,
        q_control: qc_log.exp(),
        q_treatment: qt_log.exp(),
        delta_pct,
        se_pct,
        p_value: p_value(delta_pct, se_pct),
        ci_lower: delta_pct - z * se_pct,
        ci_upper: delta_pct + z * se_pct,
    }
}

pub fn qte_grid(
    control: &GridAnalysis,
    treatment: &GridAnalysis,
    alpha: f64,
) -> Result<Vec<QteRow>> {
    if control.grid != treatment.grid {
        return Err(Error::GridMismatch);
    }
    let z = z_critical(alpha)?;
    Ok(control
        .grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            qte_row(
                p,
                control.q_log[i],
                treatment.q_log[i],
                control.se_log[i],
                treatment.se_log[i],
                z,
            )
        })
        .collect())
}
