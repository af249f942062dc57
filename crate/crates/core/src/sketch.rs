//! Log-scaled, user-bucketed count tables.
//!
//! Every positive metric value is mapped to `round(ln(value), d)`. Users are
//! shuffled with a seeded RNG and split into `s` disjoint buckets, so all the
//! events of one user live in one bucket. The sketch keeps the sorted unique
//! rounded values together with a per-bucket count for each of them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest supported rounding precision. `ln(f64::MAX) * 10^12` still fits in an `i64`.
pub const MAX_DIGITS: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Control,
    Treatment,
}

impl Variant {
    pub fn code(self) -> &'static str {
        match self {
            Variant::Control => "C",
            Variant::Treatment => "T",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "C" => Some(Variant::Control),
            "T" => Some(Variant::Treatment),
            _ => None,
        }
    }
}

/// One metric observation tied to a user and a variant.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub user_id: String,
    pub variant: Variant,
    pub metric: String,
    pub value: f64,
    pub segment: Option<String>,
}

fn scale(digits: u32) -> f64 {
    10f64.powi(digits as i32)
}

/// Integer key `k` such that the rounded log value is `k / 10^d`.
fn log_key(value: f64, digits: u32) -> Result<i64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::NonPositiveValue { value, line: None });
    }
    Ok(round_key(value.ln(), digits))
}

fn round_key(x: f64, digits: u32) -> i64 {
    (x * scale(digits)).round_ties_even() as i64
}

/// Natural log of `value`, rounded half-to-even to `digits` decimals.
pub fn log_scale(value: f64, digits: u32) -> Result<f64> {
    check_digits(digits)?;
    Ok(log_key(value, digits)? as f64 / scale(digits))
}

fn check_digits(digits: u32) -> Result<()> {
    if digits > MAX_DIGITS {
        return Err(Error::Config(format!(
            "rounding precision {digits} exceeds the supported maximum of {MAX_DIGITS}"
        )));
    }
    Ok(())
}

/// Per-variant compressed dataset: sorted unique rounded log values and
/// their counts within each user bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    values: Vec<f64>,
    /// Sparse rows, one per bucket: `(value index, count)` sorted by index.
    bucket_rows: Vec<Vec<(u32, u64)>>,
    bucket_users: Vec<usize>,
    total_counts: Vec<u64>,
    n_events: u64,
    n_users: usize,
    digits: u32,
}

impl Sketch {
    /// Builds a sketch from events grouped by user (one inner vector per user).
    ///
    /// Users are shuffled with `seed` and dealt into `buckets` blocks of
    /// `users / buckets` users; the remaining users go round-robin to buckets
    /// `0, 1, ...`.
    pub fn from_users<U: AsRef<[f64]>>(
        users: &[U],
        digits: u32,
        buckets: usize,
        seed: u64,
    ) -> Result<Self> {
        check_digits(digits)?;
        if buckets == 0 {
            return Err(Error::Config("bucket count must be positive".into()));
        }
        if users.is_empty() {
            return Err(Error::EmptyInput("no users"));
        }
        if users.len() < buckets {
            return Err(Error::TooFewUsers {
                users: users.len(),
                buckets,
            });
        }

        let mut keyed: Vec<Vec<i64>> = Vec::with_capacity(users.len());
        for user in users {
            let events = user.as_ref();
            if events.is_empty() {
                return Err(Error::EmptyInput("user without events"));
            }
            keyed.push(
                events
                    .iter()
                    .map(|&v| log_key(v, digits))
                    .collect::<Result<_>>()?,
            );
        }

        let mut order: Vec<usize> = (0..keyed.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let block = keyed.len() / buckets;
        let assigned = block * buckets;
        let bucket_of = |rank: usize| {
            if rank < assigned {
                rank / block
            } else {
                rank - assigned
            }
        };

        let mut per_bucket: Vec<BTreeMap<i64, u64>> = vec![BTreeMap::new(); buckets];
        let mut totals: BTreeMap<i64, u64> = BTreeMap::new();
        let mut bucket_users = vec![0usize; buckets];
        for (rank, &user) in order.iter().enumerate() {
            let b = bucket_of(rank);
            bucket_users[b] += 1;
            for &key in &keyed[user] {
                *per_bucket[b].entry(key).or_default() += 1;
                *totals.entry(key).or_default() += 1;
            }
        }

        let index: BTreeMap<i64, u32> = totals
            .keys()
            .enumerate()
            .map(|(j, &k)| (k, j as u32))
            .collect();
        let bucket_rows = per_bucket
            .into_iter()
            .map(|row| row.into_iter().map(|(k, c)| (index[&k], c)).collect())
            .collect();
        let scale = scale(digits);
        let values = totals.keys().map(|&k| k as f64 / scale).collect();
        let total_counts: Vec<u64> = totals.into_values().collect();

        Ok(Sketch {
            values,
            bucket_rows,
            bucket_users,
            n_events: total_counts.iter().sum(),
            total_counts,
            n_users: keyed.len(),
            digits,
        })
    }

    /// Strictly increasing rounded log values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_counts(&self) -> &[u64] {
        &self.total_counts
    }

    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_buckets(&self) -> usize {
        self.bucket_rows.len()
    }

    pub fn digits(&self) -> u32 {
        self.digits
    }

    /// Number of users assigned to each bucket.
    pub fn bucket_users(&self) -> &[usize] {
        &self.bucket_users
    }

    /// Non-zero `(value index, count)` entries of one bucket.
    pub fn bucket_row(&self, bucket: usize) -> &[(u32, u64)] {
        &self.bucket_rows[bucket]
    }

    /// Count `c_{bucket, j}`.
    pub fn bucket_count(&self, bucket: usize, j: usize) -> u64 {
        let row = &self.bucket_rows[bucket];
        row.binary_search_by_key(&(j as u32), |&(idx, _)| idx)
            .map(|pos| row[pos].1)
            .unwrap_or(0)
    }

    /// Dense `s x K` count matrix.
    pub fn bucket_counts(&self) -> Vec<Vec<u64>> {
        self.bucket_rows
            .iter()
            .map(|row| {
                let mut dense = vec![0u64; self.values.len()];
                for &(j, c) in row {
                    dense[j as usize] = c;
                }
                dense
            })
            .collect()
    }

    pub fn ecdf(&self) -> Ecdf {
        Ecdf::from_counts(self.values.clone(), &self.total_counts)
    }

    /// Count-weighted sample standard deviation of the rounded log values.
    pub fn log_std_dev(&self) -> f64 {
        let n = self.n_events as f64;
        if self.n_events < 2 {
            return 0.0;
        }
        let mean = self
            .values
            .iter()
            .zip(&self.total_counts)
            .map(|(&x, &c)| x * c as f64)
            .sum::<f64>()
            / n;
        let ss = self
            .values
            .iter()
            .zip(&self.total_counts)
            .map(|(&x, &c)| (x - mean).powi(2) * c as f64)
            .sum::<f64>();
        (ss / (n - 1.0)).sqrt()
    }
}

/// Builds the sketch of one variant's events.
///
/// Events are grouped by `user_id`; users are ordered by id before the seeded
/// shuffle so the result does not depend on row order.
pub fn build_sketch(
    events: &[EventRecord],
    digits: u32,
    buckets: usize,
    seed: u64,
) -> Result<Sketch> {
    if events.is_empty() {
        return Err(Error::EmptyInput("no events"));
    }
    let mut by_user: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in events {
        if e.user_id.is_empty() {
            return Err(Error::Config("event with empty user id".into()));
        }
        by_user.entry(e.user_id.as_str()).or_default().push(e.value);
    }
    let users: Vec<Vec<f64>> = by_user.into_values().collect();
    Sketch::from_users(&users, digits, buckets, seed)
}

/// Empirical CDF evaluated at the sketch values.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    values: Vec<f64>,
    cum_fractions: Vec<f64>,
}

impl Ecdf {
    /// Cumulative fractions computed from exact integer prefix sums; the last
    /// entry is exactly 1.
    pub fn from_counts(values: Vec<f64>, counts: &[u64]) -> Self {
        assert_eq!(
            values.len(),
            counts.len(),
            "values and counts differ in length"
        );
        let total: u64 = counts.iter().sum();
        let mut running = 0u64;
        let cum_fractions = counts
            .iter()
            .map(|&c| {
                running += c;
                running as f64 / total as f64
            })
            .collect();
        Ecdf {
            values,
            cum_fractions,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cum_fractions(&self) -> &[f64] {
        &self.cum_fractions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the smallest value whose cumulative fraction reaches `target`,
    /// clamped to the last value when `target` exceeds 1.
    pub fn index_at_least(&self, target: f64) -> usize {
        self.cum_fractions
            .partition_point(|&f| f < target)
            .min(self.values.len() - 1)
    }

    /// `inf { x : F_n(x) >= p }` over the sketch values.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Probability(p));
        }
        Ok(self.values[self.index_at_least(p)])
    }
}

/// Free-function form of [`Ecdf::quantile`].
pub fn quantile(ecdf: &Ecdf, p: f64) -> Result<f64> {
    ecdf.quantile(p)
}
