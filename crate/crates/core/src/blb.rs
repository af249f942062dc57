//! Balanced bag-of-little-bootstraps over user buckets.
//!
//! A replicate is a length-`s` vector of bucket indices; bucket `i` is
//! weighted by the number of times it occurs in the replicate. Across the `B`
//! replicates every bucket occurs exactly `B` times.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sketch::Sketch;

/// `B` replicates of `s` zero-based bucket indices each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancedAssignments {
    buckets: usize,
    replicates: Vec<Vec<usize>>,
}

impl BalancedAssignments {
    pub fn replicates(&self) -> &[Vec<usize>] {
        &self.replicates
    }

    pub fn n_buckets(&self) -> usize {
        self.buckets
    }

    /// Multiplicity of every bucket in replicate `r`.
    pub fn multiplicities(&self, r: usize) -> Vec<u64> {
        multiplicities(&self.replicates[r], self.buckets)
    }
}

fn multiplicities(replicate: &[usize], buckets: usize) -> Vec<u64> {
    let mut weights = vec![0u64; buckets];
    for &b in replicate {
        weights[b] += 1;
    }
    weights
}

/// Seeded uniform permutation of `{0 x B, 1 x B, ..., (s-1) x B}` chunked
/// into `B` rows of length `s`.
pub fn balanced_assignments(
    buckets: usize,
    replicates: usize,
    seed: u64,
) -> Result<BalancedAssignments> {
    if buckets < 2 || replicates < 2 {
        return Err(Error::Config(format!(
            "balanced bootstrap needs at least 2 buckets and 2 replicates, got s={buckets}, B={replicates}"
        )));
    }
    let mut long: Vec<usize> = (0..buckets)
        .flat_map(|b| std::iter::repeat_n(b, replicates))
        .collect();
    long.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(BalancedAssignments {
        buckets,
        replicates: long.chunks(buckets).map(<[usize]>::to_vec).collect(),
    })
}

/// Empirical CDF of one reweighted replicate at every sketch value.
///
/// Bucket rows are added with their multiplicity into one count vector, then
/// a cumulative sum over the sorted values gives the CDF. All counting is in
/// integers.
pub fn bootstrap_ecdf(sketch: &Sketch, replicate: &[usize]) -> Result<Vec<f64>> {
    let s = sketch.n_buckets();
    if let Some(&bad) = replicate.iter().find(|&&b| b >= s) {
        return Err(Error::Replicate(format!(
            "bucket index {bad} out of range for {s} buckets"
        )));
    }
    weighted_ecdf(sketch, &multiplicities(replicate, s))
}

fn weighted_ecdf(sketch: &Sketch, weights: &[u64]) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; sketch.values().len()];
    for (bucket, &w) in weights.iter().enumerate() {
        if w == 0 {
            continue;
        }
        for &(j, c) in sketch.bucket_row(bucket) {
            counts[j as usize] += w * c;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Replicate(
            "replicate carries zero total weight".into(),
        ));
    }
    let mut running = 0u64;
    Ok(counts
        .into_iter()
        .map(|c| {
            running += c;
            running as f64 / total as f64
        })
        .collect())
}

/// Bootstrap variance of the empirical CDF at every sketch value.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfVariance {
    values: Vec<f64>,
    variances: Vec<f64>,
}

impl CdfVariance {
    pub fn new(values: Vec<f64>, variances: Vec<f64>) -> Self {
        assert_eq!(values.len(), variances.len());
        CdfVariance { values, variances }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

/// Per-value population variance (divisor `B`) of the replicate CDFs, each
/// value centred on the mean of the replicates at that same value.
///
/// Replicates are evaluated in parallel; the reduction runs in replicate
/// order, so the result does not depend on the thread count.
pub fn blb_variance(sketch: &Sketch, replicates: usize, seed: u64) -> Result<CdfVariance> {
    let k = sketch.values().len();
    let s = sketch.n_buckets();
    // A one-bucket sketch has nothing to resample between.
    if s < 2 {
        return Err(Error::Config(
            "bag of little bootstraps needs at least 2 buckets".into(),
        ));
    }
    let assignments = balanced_assignments(s, replicates, seed)?;
    let cdfs: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| weighted_ecdf(sketch, &assignments.multiplicities(r)))
        .collect::<Result<_>>()?;
    Ok(CdfVariance::new(
        sketch.values().to_vec(),
        replicate_variance(&cdfs, k),
    ))
}

/// Shifted two-pass variance: deviations are taken from the first replicate,
/// so columns where all replicates agree come out exactly zero.
fn replicate_variance(cdfs: &[Vec<f64>], k: usize) -> Vec<f64> {
    let b = cdfs.len() as f64;
    (0..k)
        .map(|j| {
            let pivot = cdfs[0][j];
            let mean_shift = cdfs.iter().map(|c| c[j] - pivot).sum::<f64>() / b;
            cdfs.iter()
                .map(|c| (c[j] - pivot - mean_shift).powi(2))
                .sum::<f64>()
                / b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn histogram(a: &BalancedAssignments) -> Vec<usize> {
        let mut h = vec![0; a.n_buckets()];
        for row in a.replicates() {
            for &b in row {
                h[b] += 1;
            }
        }
        h
    }

    #[test]
    fn assignment_examples() {
        let a = balanced_assignments(2, 2, 3).unwrap();
        assert_eq!(a.replicates().len(), 2);
        assert!(a.replicates().iter().all(|r| r.len() == 2));
        assert_eq!(histogram(&a), vec![2, 2]);

        let a = balanced_assignments(3, 4, 8).unwrap();
        assert_eq!(histogram(&a), vec![4, 4, 4]);

        let a = balanced_assignments(100, 200, 42).unwrap();
        assert_eq!(a, balanced_assignments(100, 200, 42).unwrap());
        assert_ne!(a, balanced_assignments(100, 200, 43).unwrap());
    }

    #[test]
    fn assignment_rejects_degenerate_sizes() {
        assert!(balanced_assignments(1, 10, 0).is_err());
        assert!(balanced_assignments(10, 1, 0).is_err());
    }

    fn two_bucket_sketch() -> Sketch {
        // Two users with one distinct value each, one user per bucket.
        Sketch::from_users(&[vec![1.0], vec![10.0]], 2, 2, 0).unwrap()
    }

    #[test]
    fn identity_replicate_reproduces_overall_ecdf() {
        let users: Vec<Vec<f64>> = (1..=30).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let sk = Sketch::from_users(&users, 2, 5, 1).unwrap();
        let f = bootstrap_ecdf(&sk, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(f, sk.ecdf().cum_fractions());
    }

    #[test]
    fn single_value_replicates_are_one() {
        let users: Vec<Vec<f64>> = (0..6).map(|_| vec![5.0, 5.0]).collect();
        let sk = Sketch::from_users(&users, 2, 3, 1).unwrap();
        assert_eq!(bootstrap_ecdf(&sk, &[2, 2, 0]).unwrap(), vec![1.0]);
        let v = blb_variance(&sk, 50, 9).unwrap();
        assert_eq!(v.variances(), &[0.0]);
    }

    #[test]
    fn hand_enumerated_replicate() {
        let sk = two_bucket_sketch();
        // Find the bucket holding the smaller value a.
        let a_bucket = if sk.bucket_count(0, 0) == 1 { 0 } else { 1 };
        assert_eq!(
            bootstrap_ecdf(&sk, &[a_bucket, a_bucket]).unwrap(),
            vec![1.0, 1.0]
        );
        let b_bucket = 1 - a_bucket;
        assert_eq!(
            bootstrap_ecdf(&sk, &[b_bucket, b_bucket]).unwrap(),
            vec![0.0, 1.0]
        );
        assert!(bootstrap_ecdf(&sk, &[0, 2]).is_err());
    }

    #[test]
    fn identical_buckets_have_zero_variance() {
        // Four users with identical events, one per bucket.
        let users: Vec<Vec<f64>> = (0..4).map(|_| vec![1.0, 2.0, 3.0]).collect();
        let sk = Sketch::from_users(&users, 2, 4, 3).unwrap();
        let v = blb_variance(&sk, 100, 4).unwrap();
        assert!(v.variances().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn variance_is_deterministic() {
        let users: Vec<Vec<f64>> = (1..=50).map(|i| vec![i as f64; 1 + i % 3]).collect();
        let sk = Sketch::from_users(&users, 2, 10, 1).unwrap();
        let a = blb_variance(&sk, 64, 77).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| blb_variance(&sk, 64, 77).unwrap());
        assert_eq!(a, b);
        assert!(a.variances().iter().all(|&x| x >= 0.0));
        assert_eq!(*a.variances().last().unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn every_bucket_appears_exactly_b_times(s in 2usize..40, b in 2usize..40, seed in any::<u64>()) {
            let a = balanced_assignments(s, b, seed).unwrap();
            prop_assert_eq!(a.replicates().len(), b);
            prop_assert!(histogram(&a).iter().all(|&h| h == b));
        }

        #[test]
        fn replicate_ecdfs_are_monotone(seed in any::<u64>(), s in 2usize..6) {
            let users: Vec<Vec<f64>> = (1..=20).map(|i| vec![(i % 7 + 1) as f64, i as f64]).collect();
            let sk = Sketch::from_users(&users, 2, s, seed).unwrap();
            let a = balanced_assignments(s, 8, seed).unwrap();
            for r in a.replicates() {
                let f = bootstrap_ecdf(&sk, r).unwrap();
                prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
                prop_assert_eq!(*f.last().unwrap(), 1.0);
            }
        }
    }
}
