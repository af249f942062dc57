//! Static SVG figures drawn from the analysis tables.
//!
//! For each (experiment, metric) three files are written, each with one
//! panel per segment: p-values on a log axis, Δ% with its confidence band,
//! and per-variant log-quantile SEs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use plotters::coord::Shift;
use plotters::prelude::*;

use crate::analyze::{QTE_FILE, SE_FILE};

/// Significance line of the p-value figure.
pub const SIGNIFICANCE: f64 = 0.05;

const PANEL_W: u32 = 520;
const PANEL_H: u32 = 360;
const P_FLOOR: f64 = 1e-16;
const PURPLE: RGBColor = RGBColor(128, 0, 160);
const INCREASE: RGBColor = RGBColor(200, 30, 30);
const DECREASE: RGBColor = RGBColor(30, 90, 200);
const NEUTRAL: RGBColor = RGBColor(150, 150, 150);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QtePoint {
    pub percentile: f64,
    pub delta_pct: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Colour class of a point in the p-value figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Increase,
    Decrease,
    NotSignificant,
}

pub fn classify(point: &QtePoint) -> Marker {
    if !(point.p_value < SIGNIFICANCE) || point.delta_pct == 0.0 {
        Marker::NotSignificant
    } else if point.delta_pct > 0.0 {
        Marker::Increase
    } else {
        Marker::Decrease
    }
}

/// `(variant, percentile, se_log)`.
pub type SePoint = (String, f64, f64);

type Panels<T> = BTreeMap<String, Vec<T>>;
type ByMetric<T> = BTreeMap<(String, String), Panels<T>>;

#[derive(Debug, Clone, Default)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn reader(path: &Path) -> anyhow::Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::Reader::from_reader(BufReader::new(file)))
}

fn column(headers: &csv::StringRecord, name: &str) -> anyhow::Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow!("column {name} is missing"))
}

fn number(rec: &csv::StringRecord, i: usize) -> anyhow::Result<f64> {
    let s = rec.get(i).unwrap_or("");
    s.parse().with_context(|| format!("{s:?} is not a number"))
}

pub fn read_qte(path: &Path) -> anyhow::Result<ByMetric<QtePoint>> {
    let mut rdr = reader(path)?;
    let h = rdr.headers()?.clone();
    let idx = [
        "experiment",
        "metric",
        "segment",
        "percentile",
        "delta_pct",
        "p_value",
        "ci_lower",
        "ci_upper",
    ]
    .map(|n| column(&h, n));
    let [exp, metric, seg, pct, delta, p, lo, hi] =
        idx.into_iter().collect::<anyhow::Result<Vec<_>>>()?[..]
    else {
        unreachable!()
    };
    let mut out = ByMetric::new();
    for rec in rdr.records() {
        let rec = rec?;
        let point = QtePoint {
            percentile: number(&rec, pct)?,
            delta_pct: number(&rec, delta)?,
            p_value: number(&rec, p)?,
            ci_lower: number(&rec, lo)?,
            ci_upper: number(&rec, hi)?,
        };
        out.entry((rec[exp].to_owned(), rec[metric].to_owned()))
            .or_insert_with(Panels::new)
            .entry(rec[seg].to_owned())
            .or_default()
            .push(point);
    }
    Ok(out)
}

pub fn read_se(path: &Path) -> anyhow::Result<ByMetric<SePoint>> {
    let mut rdr = reader(path)?;
    let h = rdr.headers()?.clone();
    let idx = [
        "experiment",
        "metric",
        "segment",
        "variant",
        "percentile",
        "se_log",
    ]
    .map(|n| column(&h, n));
    let [exp, metric, seg, variant, pct, se] =
        idx.into_iter().collect::<anyhow::Result<Vec<_>>>()?[..]
    else {
        unreachable!()
    };
    let mut out = ByMetric::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.entry((rec[exp].to_owned(), rec[metric].to_owned()))
            .or_insert_with(Panels::new)
            .entry(rec[seg].to_owned())
            .or_default()
            .push((
                rec[variant].to_owned(),
                number(&rec, pct)?,
                number(&rec, se)?,
            ));
    }
    Ok(out)
}

/// File-name-safe version of a label.
fn slug(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() {
        "_".into()
    } else {
        cleaned
    }
}

fn panel_label(segment: &str) -> &str {
    if segment.is_empty() {
        "(no segment)"
    } else {
        segment
    }
}

/// Splits the canvas into a near-square grid with one area per panel.
fn panel_areas<'a>(
    root: &DrawingArea<SVGBackend<'a>, Shift>,
    n: usize,
) -> Vec<DrawingArea<SVGBackend<'a>, Shift>> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols);
    root.split_evenly((rows, cols))
        .into_iter()
        .take(n)
        .collect()
}

fn canvas_size(n: usize) -> (u32, u32) {
    let cols = (n as f64).sqrt().ceil().max(1.0) as u32;
    let rows = (n as u32).div_ceil(cols);
    (PANEL_W * cols, PANEL_H * rows)
}

fn span(values: impl Iterator<Item = f64>) -> Option<Range<f64>> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        return None;
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        0.5 * lo.abs().max(1.0)
    };
    Some(lo - pad..hi + pad)
}

fn pct_range<T>(rows: &[T], pct: impl Fn(&T) -> f64) -> Range<f64> {
    span(rows.iter().map(pct)).unwrap_or(0.0..100.0)
}

/// Drops panels with no finite points, so empty segments leave no gap.
fn non_empty<T: Clone>(panels: &Panels<T>, finite: impl Fn(&T) -> bool) -> Vec<(String, Vec<T>)> {
    panels
        .iter()
        .map(|(seg, rows)| {
            (
                seg.clone(),
                rows.iter()
                    .filter(|r| finite(r))
                    .cloned()
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, rows)| !rows.is_empty())
        .collect()
}

type DrawResult = Result<(), Box<dyn std::error::Error>>;

fn draw_pvalues(path: &Path, title: &str, panels: &[(String, Vec<QtePoint>)]) -> DrawResult {
    let root = SVGBackend::new(path, canvas_size(panels.len())).into_drawing_area();
    root.fill(&WHITE)?;
    let root = root.titled(title, ("sans-serif", 18))?;
    for (area, (segment, rows)) in panel_areas(&root, panels.len()).iter().zip(panels) {
        let min_p = rows
            .iter()
            .map(|r| r.p_value.max(P_FLOOR))
            .fold(1.0, f64::min);
        let y_lo = (min_p.min(1e-3)) / 2.0;
        let mut chart = ChartBuilder::on(area)
            .caption(panel_label(segment), ("sans-serif", 14))
            .margin(8)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(pct_range(rows, |r| r.percentile), (y_lo..1.0).log_scale())?;
        chart
            .configure_mesh()
            .x_desc("percentile")
            .y_desc("p-value")
            .y_label_formatter(&|y| format!("{y:.0e}"))
            .draw()?;
        let x = pct_range(rows, |r| r.percentile);
        chart.draw_series(DashedLineSeries::new(
            [(x.start, SIGNIFICANCE), (x.end, SIGNIFICANCE)],
            3,
            3,
            PURPLE.stroke_width(2),
        ))?;
        chart.draw_series(LineSeries::new(
            rows.iter().map(|r| (r.percentile, r.p_value.max(P_FLOOR))),
            NEUTRAL.stroke_width(1),
        ))?;
        chart.draw_series(rows.iter().map(|r| {
            let (color, size) = match classify(r) {
                Marker::Increase => (INCREASE, 4),
                Marker::Decrease => (DECREASE, 4),
                Marker::NotSignificant => (NEUTRAL, 2),
            };
            Circle::new((r.percentile, r.p_value.max(P_FLOOR)), size, color.filled())
        }))?;
    }
    root.present()?;
    Ok(())
}

fn draw_deltas(path: &Path, title: &str, panels: &[(String, Vec<QtePoint>)]) -> DrawResult {
    let root = SVGBackend::new(path, canvas_size(panels.len())).into_drawing_area();
    root.fill(&WHITE)?;
    let root = root.titled(title, ("sans-serif", 18))?;
    for (area, (segment, rows)) in panel_areas(&root, panels.len()).iter().zip(panels) {
        let y = span(rows.iter().flat_map(|r| [r.ci_lower, r.ci_upper, 0.0])).unwrap_or(-1.0..1.0);
        let x = pct_range(rows, |r| r.percentile);
        let mut chart = ChartBuilder::on(area)
            .caption(panel_label(segment), ("sans-serif", 14))
            .margin(8)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(x.clone(), y)?;
        chart
            .configure_mesh()
            .x_desc("percentile")
            .y_desc("delta %")
            .draw()?;
        chart.draw_series(LineSeries::new(
            [(x.start, 0.0), (x.end, 0.0)],
            BLACK.stroke_width(1),
        ))?;
        let band = rows
            .iter()
            .map(|r| (r.percentile, r.ci_upper))
            .chain(rows.iter().rev().map(|r| (r.percentile, r.ci_lower)))
            .filter(|(_, v)| v.is_finite());
        chart.draw_series(std::iter::once(Polygon::new(
            band.collect::<Vec<_>>(),
            DECREASE.mix(0.15),
        )))?;
        chart.draw_series(LineSeries::new(
            rows.iter().map(|r| (r.percentile, r.delta_pct)),
            DECREASE.stroke_width(2),
        ))?;
    }
    root.present()?;
    Ok(())
}

fn draw_se(path: &Path, title: &str, panels: &[(String, Vec<SePoint>)]) -> DrawResult {
    let root = SVGBackend::new(path, canvas_size(panels.len())).into_drawing_area();
    root.fill(&WHITE)?;
    let root = root.titled(title, ("sans-serif", 18))?;
    for (area, (segment, rows)) in panel_areas(&root, panels.len()).iter().zip(panels) {
        let y_hi = rows.iter().map(|r| r.2).fold(0.0, f64::max);
        let y_hi = if y_hi > 0.0 { 1.1 * y_hi } else { 1.0 };
        let mut chart = ChartBuilder::on(area)
            .caption(panel_label(segment), ("sans-serif", 14))
            .margin(8)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(pct_range(rows, |r| r.1), 0.0..y_hi)?;
        chart
            .configure_mesh()
            .x_desc("percentile")
            .y_desc("SE (log scale)")
            .draw()?;
        for (variant, color) in [("C", DECREASE), ("T", INCREASE)] {
            chart
                .draw_series(LineSeries::new(
                    rows.iter().filter(|r| r.0 == variant).map(|r| (r.1, r.2)),
                    color.stroke_width(2),
                ))?
                .label(variant)
                .legend(move |(x, y)| {
                    PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2))
                });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
    }
    root.present()?;
    Ok(())
}

/// Draws the figures for every (experiment, metric) found in the result
/// tables under `dir`. Per-figure failures become warnings.
pub fn emit_plots(dir: &Path) -> anyhow::Result<PlotReport> {
    let qte = read_qte(&dir.join(QTE_FILE))?;
    let se = read_se(&dir.join(SE_FILE)).unwrap_or_default();
    let mut report = PlotReport::default();
    let mut attempt = |path: PathBuf, result: DrawResult| match result {
        Ok(()) => report.files.push(path),
        Err(e) => report.warnings.push(format!("{}: {e}", path.display())),
    };
    for ((experiment, metric), panels) in &qte {
        let stem = format!("{}__{}", slug(experiment), slug(metric));
        let title = format!("{experiment} / {metric}");
        let p_panels = non_empty(panels, |r| {
            r.p_value.is_finite() && r.percentile.is_finite()
        });
        if !p_panels.is_empty() {
            let path = dir.join(format!("{stem}__pvalue.svg"));
            let r = draw_pvalues(&path, &title, &p_panels);
            attempt(path, r);
        }
        let d_panels = non_empty(panels, |r| {
            r.delta_pct.is_finite() && r.percentile.is_finite()
        });
        if !d_panels.is_empty() {
            let path = dir.join(format!("{stem}__delta.svg"));
            let r = draw_deltas(&path, &title, &d_panels);
            attempt(path, r);
        }
        if let Some(se_panels) = se.get(&(experiment.clone(), metric.clone())) {
            let se_panels = non_empty(se_panels, |r| r.1.is_finite() && r.2.is_finite());
            if !se_panels.is_empty() {
                let path = dir.join(format!("{stem}__se.svg"));
                let r = draw_se(&path, &title, &se_panels);
                attempt(path, r);
            }
        }
    }
    Ok(report)
}
