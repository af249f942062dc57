//! `conq analyze`: per-group QTE tables from an event file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use conq::ingest::{read_observations, IngestOptions, Observation};
use conq::pipeline::{analyze_events, derive_seed, Analysis, ConqParams, Method};
use conq::sketch::{EventRecord, Variant};
use rayon::prelude::*;

use crate::format::num;
use crate::plots::emit_plots;

pub const QTE_FILE: &str = "qte.csv";
pub const SE_FILE: &str = "se.csv";
pub const ERRORS_FILE: &str = "errors.csv";

pub const QTE_HEADER: [&str; 12] = [
    "experiment",
    "metric",
    "segment",
    "percentile",
    "method",
    "q_control",
    "q_treatment",
    "delta_pct",
    "se_pct",
    "p_value",
    "ci_lower",
    "ci_upper",
];

pub const SE_HEADER: [&str; 8] = [
    "experiment",
    "metric",
    "segment",
    "percentile",
    "method",
    "variant",
    "quantile",
    "se_log",
];

/// Segment label used when the input is not split by segment.
pub const ALL_SEGMENTS: &str = "all";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub params: ConqParams,
    pub method: Method,
    pub seed: u64,
    pub segment_by: bool,
    pub ingest: IngestOptions,
    pub plots: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            input: input.into(),
            output_dir: output_dir.into(),
            params: ConqParams::default(),
            method: Method::Conq,
            seed: 0,
            segment_by: false,
            ingest: IngestOptions::default(),
            plots: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub experiment: String,
    pub metric: String,
    pub segment: String,
}

impl GroupKey {
    fn seed(&self, master: u64) -> u64 {
        derive_seed(master, &[&self.experiment, &self.metric, &self.segment])
    }
}

/// Control and treatment events of one group.
#[derive(Debug, Clone, Default)]
pub struct GroupEvents {
    pub control: Vec<EventRecord>,
    pub treatment: Vec<EventRecord>,
}

/// Splits observations by (experiment, metric[, segment]) in key order.
pub fn group_observations(
    observations: Vec<Observation>,
    segment_by: bool,
) -> BTreeMap<GroupKey, GroupEvents> {
    let mut groups: BTreeMap<GroupKey, GroupEvents> = BTreeMap::new();
    for obs in observations {
        let segment = if segment_by {
            obs.event.segment.clone().unwrap_or_default()
        } else {
            ALL_SEGMENTS.to_owned()
        };
        let key = GroupKey {
            experiment: obs.experiment,
            metric: obs.event.metric.clone(),
            segment,
        };
        let entry = groups.entry(key).or_default();
        match obs.event.variant {
            Variant::Control => entry.control.push(obs.event),
            Variant::Treatment => entry.treatment.push(obs.event),
        }
    }
    groups
}

pub fn analyze_group(
    events: &GroupEvents,
    params: &ConqParams,
    method: Method,
    seed: u64,
) -> anyhow::Result<Analysis> {
    match (events.control.is_empty(), events.treatment.is_empty()) {
        (true, true) => bail!("no rows"),
        (true, false) => bail!("no control (C) rows"),
        (false, true) => bail!("no treatment (T) rows"),
        (false, false) => {}
    }
    Ok(analyze_events(
        &events.control,
        &events.treatment,
        params,
        method,
        seed,
    )?)
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeSummary {
    pub groups: usize,
    pub failures: Vec<(GroupKey, String)>,
    pub skipped_rows: usize,
    pub dropped_non_positive: usize,
    pub files: Vec<PathBuf>,
    /// Plot problems. They never fail the run.
    pub plot_warnings: Vec<String>,
}

impl AnalyzeSummary {
    pub fn all_failed(&self) -> bool {
        self.groups > 0 && self.failures.len() == self.groups
    }
}

/// Reads the input, analyses every group and writes the result tables.
pub fn cmd_analyze(cfg: &RunConfig) -> anyhow::Result<AnalyzeSummary> {
    cfg.params.validate()?;
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(|| run_analyze(cfg)),
        None => run_analyze(cfg),
    }
}

fn run_analyze(cfg: &RunConfig) -> anyhow::Result<AnalyzeSummary> {
    let file =
        File::open(&cfg.input).with_context(|| format!("opening {}", cfg.input.display()))?;
    let data = read_observations(BufReader::new(file), cfg.ingest)
        .with_context(|| format!("reading {}", cfg.input.display()))?;
    let groups: Vec<(GroupKey, GroupEvents)> =
        group_observations(data.observations, cfg.segment_by)
            .into_iter()
            .collect();
    if groups.is_empty() {
        bail!("{} contains no data rows", cfg.input.display());
    }

    // `collect` keeps input order, so the writer sees groups in key order
    // whatever the schedule was.
    let results: Vec<anyhow::Result<Analysis>> = groups
        .par_iter()
        .map(|(key, events)| analyze_group(events, &cfg.params, cfg.method, key.seed(cfg.seed)))
        .collect();

    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let qte_path = cfg.output_dir.join(QTE_FILE);
    let se_path = cfg.output_dir.join(SE_FILE);
    let err_path = cfg.output_dir.join(ERRORS_FILE);
    let mut qte = csv_writer(&qte_path)?;
    let mut se = csv_writer(&se_path)?;
    let mut errors = csv_writer(&err_path)?;
    qte.write_record(QTE_HEADER)?;
    se.write_record(SE_HEADER)?;
    errors.write_record(["experiment", "metric", "segment", "error"])?;

    let mut summary = AnalyzeSummary {
        groups: groups.len(),
        skipped_rows: data.skipped_rows,
        dropped_non_positive: data.dropped_non_positive,
        ..Default::default()
    };
    let method = cfg.method.name();
    for ((key, _), result) in groups.iter().zip(results) {
        let analysis = match result {
            Ok(a) => a,
            Err(e) => {
                let msg = format!("{e:#}");
                errors.write_record([&key.experiment, &key.metric, &key.segment, &msg])?;
                summary.failures.push((key.clone(), msg));
                continue;
            }
        };
        for r in &analysis.rows {
            qte.write_record([
                key.experiment.as_str(),
                &key.metric,
                &key.segment,
                &num(100.0 * r.percentile),
                method,
                &num(r.q_control),
                &num(r.q_treatment),
                &num(r.delta_pct),
                &num(r.se_pct),
                &num(r.p_value),
                &num(r.ci_lower),
                &num(r.ci_upper),
            ])?;
        }
        for (variant, arm) in [
            (Variant::Control, &analysis.control),
            (Variant::Treatment, &analysis.treatment),
        ] {
            for (i, &p) in arm.grid.points().iter().enumerate() {
                se.write_record([
                    key.experiment.as_str(),
                    &key.metric,
                    &key.segment,
                    &num(100.0 * p),
                    method,
                    variant.code(),
                    &num(arm.q_log[i].exp()),
                    &num(arm.se_log[i]),
                ])?;
            }
        }
    }
    qte.flush()?;
    se.flush()?;
    errors.flush()?;
    summary.files = vec![qte_path, se_path, err_path];

    if cfg.plots {
        match emit_plots(&cfg.output_dir) {
            Ok(report) => {
                summary.files.extend(report.files);
                summary.plot_warnings = report.warnings;
            }
            Err(e) => summary.plot_warnings.push(format!("{e:#}")),
        }
    }
    Ok(summary)
}

pub(crate) fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(file)))
}
