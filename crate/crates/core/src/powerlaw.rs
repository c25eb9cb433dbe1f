//! Power-law densities, the modified Newman exponent statistic, and the
//! top-K occurrence profile it is measured on.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{dot, norm, FactorModel, MIN_ROW_NORM};

/// Sums of log ratios smaller than this in magnitude are treated as zero.
pub const DEGENERATE_LOG_SUM: f64 = 1e-12;

pub const DEFAULT_TOP_K: usize = 10;

/// Pareto density with the right-limit value `k / x_min` at `x == x_min`.
pub fn pareto_pdf(x: f64, x_min: f64, k: f64) -> Result<f64> {
    if !(x_min > 0.0) || !(k > 0.0) {
        return Err(Error::invalid(format!(
            "pareto needs x_min > 0 and k > 0, got x_min={x_min} k={k}"
        )));
    }
    Ok(if x < x_min {
        0.0
    } else if x == x_min {
        k / x_min
    } else {
        k * (x_min / x).powf(k) / x
    })
}

/// Zipf probability of rank `k` among `n` ranks with exponent `s`.
pub fn zipf_pmf(k: usize, s: f64, n: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("rank {k} outside [1, {n}]")));
    }
    let harmonic: f64 = (1..=n).map(|r| (r as f64).powf(-s)).sum();
    Ok((k as f64).powf(-s) / harmonic)
}

/// `s = 1 + n / sum_i ln(x_i / x_max)`.
///
/// Every `x_i` must be positive and no larger than `x_max`. When all values
/// equal `x_max` the log sum vanishes and the statistic is undefined.
pub fn zipf_exponent_estimate(values: &[f64], x_max: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("exponent estimate needs at least one value"));
    }
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(Error::invalid(format!(
            "x_max must be positive, got {x_max}"
        )));
    }
    let mut log_sum = 0.0;
    for &x in values {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::invalid(format!("values must be positive, got {x}")));
        }
        if x > x_max {
            return Err(Error::invalid(format!("value {x} exceeds x_max {x_max}")));
        }
        log_sum += (x / x_max).ln();
    }
    if log_sum.abs() < DEGENERATE_LOG_SUM {
        return Err(Error::DegenerateDistribution(format!(
            "all {} values equal x_max = {x_max}",
            values.len()
        )));
    }
    Ok(1.0 + values.len() as f64 / log_sum)
}

/// How often each item appears across all users' predicted top-K lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccurrenceProfile {
    pub counts: Vec<u64>,
    pub k: usize,
}

impl OccurrenceProfile {
    pub fn coverage(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts of items that appear at least once.
    pub fn positive_counts(&self) -> Vec<u64> {
        self.counts.iter().copied().filter(|&c| c > 0).collect()
    }

    /// Writes `item_index,count` rows, zero counts included.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["item_index", "count"])?;
        for (j, c) in self.counts.iter().enumerate() {
            out.write_record([j.to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Higher score first, lower item index on ties.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k` highest-cosine items for user `i`, best first.
pub fn top_k_items(
    model: &FactorModel,
    i: usize,
    k: usize,
    item_norms: &[f64],
) -> Result<Vec<usize>> {
    let u = model.user(i);
    let nu = norm(u);
    if nu < MIN_ROW_NORM {
        return Err(Error::NumericalDegeneracy(format!(
            "user {i} has zero norm"
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..model.num_items())
        .map(|j| (dot(u, model.item(j)) / (nu * item_norms[j]), j))
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(scored.into_iter().map(|(_, j)| j).collect())
}

pub(crate) fn item_norms(model: &FactorModel) -> Result<Vec<f64>> {
    (0..model.num_items())
        .map(|j| {
            let n = norm(model.item(j));
            if n < MIN_ROW_NORM {
                Err(Error::NumericalDegeneracy(format!(
                    "item {j} has zero norm"
                )))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Count item appearances over every user's top-K list of predicted scores.
/// Users are processed in parallel; the merged counts do not depend on the split.
pub fn occurrence_profile(model: &FactorModel, k: usize) -> Result<OccurrenceProfile> {
    let n = model.num_items();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("top-K cutoff {k} outside [1, {n}]")));
    }
    let norms = item_norms(model)?;
    let counts = (0..model.num_users())
        .into_par_iter()
        .try_fold(
            || vec![0u64; n],
            |mut acc, i| {
                for j in top_k_items(model, i, k, &norms)? {
                    acc[j] += 1;
                }
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(OccurrenceProfile { counts, k })
}

/// Exponent statistic over the positive occurrence counts, `x_max` = largest count.
pub fn matthew_degree_from_counts(counts: &[u64]) -> Result<f64> {
    let positive: Vec<f64> = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64)
        .collect();
    let x_max = positive.iter().copied().fold(0.0, f64::max);
    if positive.is_empty() {
        return Err(Error::DegenerateDistribution(
            "no item has a positive count".into(),
        ));
    }
    zipf_exponent_estimate(&positive, x_max)
}

/// Degree of Matthew Effect of a model's top-K output. Larger is weaker.
pub fn matthew_degree(model: &FactorModel, k: usize) -> Result<f64> {
    matthew_degree_with_profile(model, k).map(|(s, _)| s)
}

pub fn matthew_degree_with_profile(
    model: &FactorModel,
    k: usize,
) -> Result<(f64, OccurrenceProfile)> {
    let profile = occurrence_profile(model, k)?;
    let s = matthew_degree_from_counts(&profile.counts)?;
    Ok((s, profile))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RatingScale;
    use proptest::prelude::*;

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_pdf(0.5, 1.0, 2.0).unwrap(), 0.0);
        assert!((pareto_pdf(2.0, 1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(pareto_pdf(1.0, 1.0, 2.0).unwrap(), 2.0);
        assert!(pareto_pdf(1.0, 0.0, 2.0).is_err());
        assert!(pareto_pdf(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn zipf_examples() {
        for k in 1..=5 {
            assert!((zipf_pmf(k, 0.0, 5).unwrap() - 0.2).abs() < 1e-15);
        }
        assert!((zipf_pmf(1, 1.0, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(zipf_pmf(0, 1.0, 2).is_err());
        assert!(zipf_pmf(3, 1.0, 2).is_err());
    }

    #[test]
    fn estimator_examples() {
        // 1 - 3 / ln(8)
        let s = zipf_exponent_estimate(&[1.0, 2.0, 4.0], 4.0).unwrap();
        assert!((s - (-0.442_695_040_888_963_4)).abs() < 1e-12, "{s}");
        let e = std::f64::consts::E;
        let s = zipf_exponent_estimate(&[10.0 / e, 10.0], 10.0).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert!(matches!(
            zipf_exponent_estimate(&[5.0, 5.0, 5.0], 5.0),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(zipf_exponent_estimate(&[0.0, 1.0], 1.0).is_err());
        assert!(zipf_exponent_estimate(&[], 1.0).is_err());
        assert!(zipf_exponent_estimate(&[2.0], 1.0).is_err());
    }

    #[test]
    fn matthew_from_counts() {
        let s = matthew_degree_from_counts(&[0, 4, 2, 0, 1]).unwrap();
        assert!((s + 0.442_695_040_888_963_4).abs() < 1e-12);
        assert!(matches!(
            matthew_degree_from_counts(&[3, 0, 3]),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn shared_argmax_profile() {
        // Both users point at item 0.
        let m = FactorModel::from_parts(
            2,
            3,
            2,
            vec![1.0, 0.1, 1.0, 0.2],
            vec![1.0, 0.1, 0.0, 1.0, -1.0, 0.0],
            RatingScale::MOVIELENS,
        )
        .unwrap();
        let p = occurrence_profile(&m, 1).unwrap();
        assert_eq!(p.counts, vec![2, 0, 0]);
        assert_eq!(p.coverage(), 1);
        assert!(occurrence_profile(&m, 4).is_err());
        assert!(occurrence_profile(&m, 0).is_err());
    }

    #[test]
    fn full_list_counts_everything_once() {
        let m = FactorModel::init(1, 7, 3, 5, RatingScale::MOVIELENS).unwrap();
        let p = occurrence_profile(&m, 7).unwrap();
        assert_eq!(p.counts, vec![1; 7]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let m = FactorModel::from_parts(
            1,
            3,
            1,
            vec![1.0],
            vec![2.0, 1.0, 3.0],
            RatingScale::MOVIELENS,
        )
        .unwrap();
        let norms = item_norms(&m).unwrap();
        assert_eq!(top_k_items(&m, 0, 2, &norms).unwrap(), vec![0, 1]);
    }

    #[test]
    fn profile_csv() {
        let p = OccurrenceProfile {
            counts: vec![2, 0],
            k: 1,
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "item_index,count\n0,2\n1,0\n"
        );
    }

    proptest! {
        #[test]
        fn pmf_normalizes(s in -2.0f64..4.0, n in 1usize..1000) {
            let total: f64 = (1..=n).map(|k| zipf_pmf(k, s, n).unwrap()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn matthew_depends_on_count_multiset(
            counts in prop::collection::vec(0u64..50, 2..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = counts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            shuffled.extend([0, 0]);
            match (matthew_degree_from_counts(&counts), matthew_degree_from_counts(&shuffled)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
    }
}
