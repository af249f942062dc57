//! Argument definitions and command dispatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conq::baseline::Bandwidth;
use conq::eval::{
    draw_effects, AaStudyConfig, CompareConfig, EventCount, SimConfig, DEFAULT_THRESHOLDS,
};
use conq::ingest::IngestOptions;
use conq::pipeline::{derive_seed, ConqParams, Method};
use conq::woodruff::Grid;

use crate::analyze::{cmd_analyze, RunConfig};
use crate::studies::{cmd_aa_validate, cmd_compare};

#[derive(Debug, Parser)]
#[command(
    name = "conq",
    version,
    about = "Quantile treatment effects for user-clustered experiment metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate QTEs for every experiment/metric[/segment] in an event file.
    Analyze(AnalyzeArgs),
    /// Simulated A/A study with Benjamini-Hochberg control per percentile.
    AaValidate(AaArgs),
    /// Paired p-values of two methods on identical simulated experiments.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Conq,
    Delta,
}

impl MethodName {
    pub fn with_bandwidth(self, bandwidth: Bandwidth) -> Method {
        match self {
            MethodName::Conq => Method::Conq,
            MethodName::Delta => Method::Delta(bandwidth),
        }
    }
}

/// Sketch and bootstrap settings shared by all commands.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Decimal digits kept after log-scaling.
    #[arg(long, default_value_t = 2)]
    pub digits: u32,
    /// User buckets per variant.
    #[arg(long, default_value_t = 100)]
    pub buckets: usize,
    /// Balanced bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    pub bootstraps: usize,
    /// Two-sided significance level of the confidence intervals.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Master seed; every random stream is derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to one per core).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl EngineArgs {
    fn params(&self, grid: Grid) -> ConqParams {
        ConqParams {
            digits: self.digits,
            buckets: self.buckets,
            bootstraps: self.bootstraps,
            alpha: self.alpha,
            grid,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Delimited file with columns experiment,variant,user_id,metric,value[,segment].
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, env = "CONQ_OUTPUT_DIR", default_value = "conq-out")]
    pub output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodName::Conq)]
    pub method: MethodName,
    /// KDE bandwidth for --method delta: a positive number (log units) or `nrr`.
    #[arg(long, default_value = "nrr")]
    pub bandwidth: Bandwidth,
    /// Percentile grid as P<lo>:P<hi>:<step>.
    #[arg(long, default_value = "P20:P99:1")]
    pub grid: Grid,
    /// Analyse each segment separately.
    #[arg(long)]
    pub segment_by: bool,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    pub skip_bad_rows: bool,
    /// Drop and count non-positive values instead of failing.
    #[arg(long)]
    pub drop_non_positive: bool,
    /// Also write SVG figures.
    #[arg(long)]
    pub plots: bool,
    /// Field delimiter (a single ASCII character, `\t` for tab).
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    pub delimiter: u8,
    #[command(flatten)]
    pub engine: EngineArgs,
}

impl AnalyzeArgs {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            input: self.input.clone(),
            output_dir: self.output_dir.clone(),
            params: self.engine.params(self.grid.clone()),
            method: self.method.with_bandwidth(self.bandwidth),
            seed: self.engine.seed,
            segment_by: self.segment_by,
            ingest: IngestOptions {
                delimiter: self.delimiter,
                skip_bad_rows: self.skip_bad_rows,
                drop_non_positive: self.drop_non_positive,
            },
            plots: self.plots,
            threads: self.engine.threads,
        }
    }
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s {
        "\\t" | "tab" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be one ASCII character, got {s:?}")),
    }
}

/// Generator of the simulated experiments.
#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Users per variant.
    #[arg(long, default_value_t = 2000)]
    pub users: usize,
    /// Mean events per user (geometric, at least one).
    #[arg(long, default_value_t = 5.0)]
    pub events_mean: f64,
    /// Location of the log-normal event distribution.
    #[arg(long, default_value_t = 6.0)]
    pub log_location: f64,
    /// Scale of the log-normal event distribution.
    #[arg(long, default_value_t = 1.0)]
    pub log_scale: f64,
    /// SD of the per-user random effect on the log scale.
    #[arg(long, default_value_t = 0.3)]
    pub user_effect_scale: f64,
}

impl SimArgs {
    fn template(&self, seed: u64) -> SimConfig {
        SimConfig {
            n_users: self.users,
            events: EventCount::Geometric {
                mean: self.events_mean,
            },
            log_location: self.log_location,
            log_scale: self.log_scale,
            user_effect_scale: self.user_effect_scale,
            effect: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AaArgs {
    #[arg(long, env = "CONQ_OUTPUT_DIR", default_value = "conq-out")]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub metrics: usize,
    /// A/A pairs per metric.
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
    /// Comma-separated FDR levels.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
    pub alphas: Vec<f64>,
    #[arg(long, default_value = "P20:P95:5")]
    pub grid: Grid,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

impl AaArgs {
    pub fn study(&self) -> AaStudyConfig {
        AaStudyConfig {
            n_metrics: self.metrics,
            n_pairs: self.pairs,
            alphas: self.alphas.clone(),
            template: self.sim.template(self.engine.seed),
            params: self.engine.params(self.grid.clone()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long, env = "CONQ_OUTPUT_DIR", default_value = "conq-out")]
    pub output_dir: PathBuf,
    /// Simulated experiments.
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Comma-separated percentiles (in percent).
    #[arg(long, value_delimiter = ',', default_values_t = [50.0, 90.0])]
    pub percentiles: Vec<f64>,
    #[arg(long, value_enum, default_value_t = MethodName::Conq)]
    pub method: MethodName,
    /// Method compared against --method.
    #[arg(long, value_enum, default_value_t = MethodName::Delta)]
    pub against: MethodName,
    /// KDE bandwidth used by any delta method.
    #[arg(long, default_value = "nrr")]
    pub bandwidth: Bandwidth,
    /// Comma-separated multiplicative effects, cycled over replicates.
    /// Without it, effects are drawn from --max-effect-pct and --null-share.
    #[arg(long, value_delimiter = ',')]
    pub effects: Vec<f64>,
    /// Largest absolute drawn effect, in percent.
    #[arg(long, default_value_t = 10.0)]
    pub max_effect_pct: f64,
    /// Share of drawn effects that are exactly null.
    #[arg(long, default_value_t = 0.3)]
    pub null_share: f64,
    /// Comma-separated p-value thresholds of the discovery sweep.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

impl CompareArgs {
    pub fn config(&self) -> anyhow::Result<CompareConfig> {
        let percentiles: Vec<f64> = self.percentiles.iter().map(|p| p / 100.0).collect();
        let grid = Grid::new(percentiles.clone())?;
        let effects = if self.effects.is_empty() {
            let seed = derive_seed(self.engine.seed, &["effects"]);
            draw_effects(self.reps.max(1), self.max_effect_pct, self.null_share, seed)
        } else {
            self.effects.clone()
        };
        Ok(CompareConfig {
            template: self.sim.template(self.engine.seed),
            effects,
            n_reps: self.reps,
            percentiles,
            methods: (
                self.method.with_bandwidth(self.bandwidth),
                self.against.with_bandwidth(self.bandwidth),
            ),
            thresholds: self.thresholds.clone(),
            params: self.engine.params(grid),
        })
    }
}

/// Executes a parsed command line. Progress goes to stderr.
pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Analyze(args) => {
            let summary = cmd_analyze(&args.run_config())?;
            eprintln!(
                "analysed {} group(s), {} failed; {} row(s) skipped, {} non-positive value(s) dropped",
                summary.groups,
                summary.failures.len(),
                summary.skipped_rows,
                summary.dropped_non_positive
            );
            for (key, msg) in &summary.failures {
                eprintln!("  {}/{}/{}: {msg}", key.experiment, key.metric, key.segment);
            }
            for w in &summary.plot_warnings {
                eprintln!("  plot warning: {w}");
            }
            for f in &summary.files {
                eprintln!("wrote {}", f.display());
            }
            Ok(if summary.all_failed() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::AaValidate(args) => {
            let (table, path) =
                cmd_aa_validate(&args.study(), &args.output_dir, args.engine.threads)?;
            eprintln!(
                "{} p-values per percentile; wrote {}",
                table.total_tests,
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(args) => {
            let cfg = args.config()?;
            let (cmp, files) = cmd_compare(&cfg, &args.output_dir, args.engine.threads)?;
            for &p in &cfg.percentiles {
                eprintln!("P{}: spearman {:.4}", 100.0 * p, cmp.spearman_at(p));
            }
            for f in &files {
                eprintln!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
