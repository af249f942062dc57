//! Simulation studies: synthetic clustered experiments, A/A false discovery
//! accounting with Benjamini-Hochberg, coverage and method comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::{analyze_arms, derive_seed, ConqParams, Method, PreparedArm};
use crate::qte::QteRow;
use crate::sketch::{EventRecord, Variant};
use crate::woodruff::Grid;

/// Per-user event count distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventCount {
    Fixed(usize),
    /// `1 + Geometric`, with the given mean (>= 1).
    Geometric {
        mean: f64,
    },
}

/// Lognormal events with an additive log-scale random effect per user.
///
/// Event `j` of user `i` is `exp(log_location + u_i + e_ij)` with
/// `u_i ~ N(0, user_effect_scale^2)` and `e_ij ~ N(0, log_scale^2)`.
/// Treatment values are multiplied by `effect`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_users: usize,
    pub events: EventCount,
    pub log_location: f64,
    pub log_scale: f64,
    pub user_effect_scale: f64,
    pub effect: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_users: 2_000,
            events: EventCount::Geometric { mean: 5.0 },
            log_location: 6.0,
            log_scale: 1.0,
            user_effect_scale: 0.3,
            effect: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("simulation needs at least one user".into()));
        }
        match self.events {
            EventCount::Fixed(0) => {
                return Err(Error::Config("users need at least one event".into()))
            }
            EventCount::Geometric { mean } if !(mean >= 1.0) => {
                return Err(Error::Config(format!(
                    "geometric event mean {mean} must be >= 1"
                )))
            }
            _ => {}
        }
        if !(self.log_scale >= 0.0 && self.user_effect_scale >= 0.0) {
            return Err(Error::Config("scales must be non-negative".into()));
        }
        if !(self.effect > 0.0) || !self.log_location.is_finite() {
            return Err(Error::Config(
                "effect must be positive and location finite".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Simulated events, one inner vector per user.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedExperiment {
    pub control: Vec<Vec<f64>>,
    pub treatment: Vec<Vec<f64>>,
}

impl SimulatedExperiment {
    /// Flattens both arms into event records with user ids `c<i>` / `t<i>`.
    pub fn to_records(&self, metric: &str) -> (Vec<EventRecord>, Vec<EventRecord>) {
        let flatten = |users: &[Vec<f64>], variant: Variant| {
            users
                .iter()
                .enumerate()
                .flat_map(|(i, events)| {
                    events.iter().map(move |&value| EventRecord {
                        user_id: format!("{}{i}", variant.code().to_lowercase()),
                        variant,
                        metric: metric.to_owned(),
                        value,
                        segment: None,
                    })
                })
                .collect()
        };
        (
            flatten(&self.control, Variant::Control),
            flatten(&self.treatment, Variant::Treatment),
        )
    }
}

fn simulate_arm(cfg: &SimConfig, multiplier: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_effect =
        Normal::new(0.0, cfg.user_effect_scale).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.log_scale).map_err(|e| Error::Config(e.to_string()))?;
    let geometric = match cfg.events {
        EventCount::Geometric { mean } => {
            Some(Geometric::new(1.0 / mean).map_err(|e| Error::Config(e.to_string()))?)
        }
        EventCount::Fixed(_) => None,
    };
    let mut users = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let m = match (cfg.events, &geometric) {
            (EventCount::Fixed(m), _) => m,
            (_, Some(g)) => 1 + g.sample(&mut rng) as usize,
            (_, None) => unreachable!(),
        };
        let u = user_effect.sample(&mut rng);
        users.push(
            (0..m)
                .map(|_| (cfg.log_location + u + noise.sample(&mut rng)).exp() * multiplier)
                .collect(),
        );
    }
    Ok(users)
}

/// Deterministic in `cfg.seed`; the two arms use independent streams.
pub fn simulate_experiment(cfg: &SimConfig) -> Result<SimulatedExperiment> {
    cfg.validate()?;
    Ok(SimulatedExperiment {
        control: simulate_arm(cfg, 1.0, derive_seed(cfg.seed, &["sim", "C"]))?,
        treatment: simulate_arm(cfg, cfg.effect, derive_seed(cfg.seed, &["sim", "T"]))?,
    })
}

/// Benjamini-Hochberg step-up procedure. Returns the rejected indices in
/// ascending index order.
pub fn bh_adjust(p_values: &[f64], alpha: f64) -> Vec<usize> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    // Stable sort, so ties keep index order.
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let k = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * alpha / m as f64)
        .unwrap_or(0);
    let mut rejected = order[..k].to_vec();
    rejected.sort_unstable();
    rejected
}

/// Average ranks (1-based), ties share the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            r[idx] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation. NaN when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    pearson(&ranks(a), &ranks(b))
}

/// Runs `n_reps` simulated experiments (replicate `r` seeded from
/// `(template.seed, r)`) and analyses each with `method`.
pub fn run_replicates(
    template: &SimConfig,
    n_reps: usize,
    params: &ConqParams,
    method: Method,
) -> Result<Vec<Vec<QteRow>>> {
    params.validate()?;
    (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(template.seed, &["replicate", &r.to_string()]);
            let (c, t) = prepare_pair(&template.with_seed(seed), params, seed)?;
            Ok(analyze_arms(&c, &t, method, &params.grid, params.alpha)?.rows)
        })
        .collect()
}

fn prepare_pair(
    cfg: &SimConfig,
    params: &ConqParams,
    seed: u64,
) -> Result<(PreparedArm, PreparedArm)> {
    let sim = simulate_experiment(cfg)?;
    Ok((
        PreparedArm::from_users(&sim.control, params, derive_seed(seed, &["C"]))?,
        PreparedArm::from_users(&sim.treatment, params, derive_seed(seed, &["T"]))?,
    ))
}

/// False discoveries per percentile (rows) and nominal FDR level (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct AaTable {
    pub percentiles: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Number of p-values per percentile.
    pub total_tests: usize,
    /// `counts[percentile][alpha]`.
    pub counts: Vec<Vec<usize>>,
}

impl AaTable {
    pub fn percent(&self, percentile: usize, alpha: usize) -> f64 {
        if self.total_tests == 0 {
            return 0.0;
        }
        100.0 * self.counts[percentile][alpha] as f64 / self.total_tests as f64
    }
}

#[derive(Debug, Clone)]
pub struct AaStudyConfig {
    pub n_metrics: usize,
    pub n_pairs: usize,
    pub alphas: Vec<f64>,
    /// Simulation template; its effect must be 1.
    pub template: SimConfig,
    /// CONQ parameters; `params.grid` is the percentile grid of the table.
    pub params: ConqParams,
}

impl Default for AaStudyConfig {
    fn default() -> Self {
        AaStudyConfig {
            n_metrics: 5,
            n_pairs: 20,
            alphas: vec![0.05, 0.1, 0.2],
            template: SimConfig::default(),
            params: ConqParams {
                grid: Grid::percentiles(20.0, 95.0, 5.0).expect("valid grid"),
                ..ConqParams::default()
            },
        }
    }
}

/// Runs CONQ on every metric x pair A/A experiment, then applies BH per
/// percentile for every nominal level. Every rejection is a false discovery.
pub fn aa_study(cfg: &AaStudyConfig) -> Result<AaTable> {
    if cfg.template.effect != 1.0 {
        return Err(Error::Config(format!(
            "A/A study needs effect 1, got {}",
            cfg.template.effect
        )));
    }
    if let Some(&a) = cfg.alphas.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
        return Err(Error::Config(format!("FDR level {a} is outside (0, 1)")));
    }
    cfg.params.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.n_metrics)
        .flat_map(|m| (0..cfg.n_pairs).map(move |k| (m, k)))
        .collect();
    let p_values: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(m, k)| {
            let seed = derive_seed(cfg.template.seed, &["aa", &m.to_string(), &k.to_string()]);
            let (c, t) = prepare_pair(&cfg.template.with_seed(seed), &cfg.params, seed)?;
            let a = analyze_arms(&c, &t, Method::Conq, &cfg.params.grid, cfg.params.alpha)?;
            Ok(a.rows.iter().map(|r| r.p_value).collect())
        })
        .collect::<Result<_>>()?;

    let percentiles = cfg.params.grid.points().to_vec();
    let counts = (0..percentiles.len())
        .map(|i| {
            let column: Vec<f64> = p_values.iter().map(|ps| ps[i]).collect();
            cfg.alphas
                .iter()
                .map(|&a| bh_adjust(&column, a).len())
                .collect()
        })
        .collect();
    Ok(AaTable {
        percentiles,
        alphas: cfg.alphas.clone(),
        total_tests: jobs.len(),
        counts,
    })
}

/// Thresholds of the discovery-proportion sweep.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.0001, 0.001, 0.01, 0.05, 0.1, 0.2];

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub template: SimConfig,
    /// Replicate `r` uses `effects[r % effects.len()]`.
    pub effects: Vec<f64>,
    pub n_reps: usize,
    pub percentiles: Vec<f64>,
    pub methods: (Method, Method),
    pub thresholds: Vec<f64>,
    /// Digits, buckets, bootstraps and alpha; the grid is replaced by `percentiles`.
    pub params: ConqParams,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            template: SimConfig::default(),
            effects: vec![1.0],
            n_reps: 200,
            percentiles: vec![0.5, 0.9],
            methods: (Method::Conq, Method::Delta(Default::default())),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            params: ConqParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedP {
    pub rep: usize,
    pub effect: f64,
    pub percentile: f64,
    pub p_first: f64,
    pub p_second: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryRate {
    pub percentile: f64,
    pub threshold: f64,
    pub first: f64,
    pub second: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<PairedP>,
    pub discoveries: Vec<DiscoveryRate>,
}

impl Comparison {
    /// Rank correlation of the two methods' p-values at one percentile.
    pub fn spearman_at(&self, percentile: f64) -> f64 {
        let (a, b): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.percentile == percentile)
            .map(|r| (r.p_first, r.p_second))
            .unzip();
        spearman(&a, &b)
    }
}

/// Runs both methods on identical simulated data for every replicate.
pub fn compare_methods(cfg: &CompareConfig) -> Result<Comparison> {
    if cfg.effects.is_empty() {
        return Err(Error::Config("comparison needs at least one effect".into()));
    }
    let grid = Grid::new(cfg.percentiles.clone())?;
    let params = ConqParams {
        grid: grid.clone(),
        ..cfg.params.clone()
    };
    params.validate()?;
    let per_rep: Vec<Vec<PairedP>> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| {
            let effect = cfg.effects[rep % cfg.effects.len()];
            let seed = derive_seed(cfg.template.seed, &["compare", &rep.to_string()]);
            let sim = SimConfig {
                effect,
                seed,
                ..cfg.template.clone()
            };
            let (c, t) = prepare_pair(&sim, &params, seed)?;
            let first = analyze_arms(&c, &t, cfg.methods.0, &grid, params.alpha)?.rows;
            let second = analyze_arms(&c, &t, cfg.methods.1, &grid, params.alpha)?.rows;
            Ok(first
                .iter()
                .zip(&second)
                .map(|(a, b)| PairedP {
                    rep,
                    effect,
                    percentile: a.percentile,
                    p_first: a.p_value,
                    p_second: b.p_value,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PairedP> = per_rep.into_iter().flatten().collect();

    let mut discoveries = Vec::new();
    for &percentile in grid.points() {
        let at: Vec<&PairedP> = rows.iter().filter(|r| r.percentile == percentile).collect();
        let n = at.len().max(1) as f64;
        for &threshold in &cfg.thresholds {
            discoveries.push(DiscoveryRate {
                percentile,
                threshold,
                first: at.iter().filter(|r| r.p_first < threshold).count() as f64 / n,
                second: at.iter().filter(|r| r.p_second < threshold).count() as f64 / n,
            });
        }
    }
    Ok(Comparison { rows, discoveries })
}

/// Fraction of replicates whose CI at grid index `i` covers `true_delta_pct`.
pub fn coverage(replicates: &[Vec<QteRow>], i: usize, true_delta_pct: f64) -> f64 {
    let hits = replicates
        .iter()
        .filter(|rows| rows[i].ci_lower <= true_delta_pct && true_delta_pct <= rows[i].ci_upper)
        .count();
    hits as f64 / replicates.len() as f64
}

/// Uniform draw helper for mixed-effect studies.
pub fn draw_effects(n: usize, max_abs_pct: f64, null_share: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < null_share {
                1.0
            } else {
                1.0 + rng.random_range(-max_abs_pct..=max_abs_pct) / 100.0
            }
        })
        .collect()
}
