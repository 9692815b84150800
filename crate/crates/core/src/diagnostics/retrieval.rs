//! High-variance retrieval metrics: AUC and precision at a top fraction.

use super::rank::fractional_ranks;
use crate::{Error, Result};

/// Default fraction of samples labeled high-variance.
pub const DEFAULT_TOP_FRACTION: f64 = 0.10;

/// `max(1, floor(fraction * n))`, shared by both metrics.
pub fn top_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).max(1)
}

/// Indices of the `k` largest values, ties broken toward the lower index.
pub fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn check(u: &[f64], v: &[f64], fraction: f64) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
            context: "retrieval inputs".into(),
        });
    }
    if u.len() < 3 {
        return Err(Error::invalid(format!(
            "retrieval metrics need N >= 3, got {}",
            u.len()
        )));
    }
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::invalid(format!(
            "top fraction {fraction} must lie in (0, 0.5]"
        )));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::invalid("retrieval inputs must be finite"));
    }
    Ok(())
}

/// Probability that a high-variance sample outscores a low-variance one under `u`.
pub fn auc_high_variance(u: &[f64], v: &[f64], top_fraction: f64) -> Result<f64> {
    check(u, v, top_fraction)?;
    let n = u.len();
    let k = top_count(top_fraction, n);
    if k >= n {
        return Err(Error::Degenerate(
            "high-variance label set covers every sample".into(),
        ));
    }
    let ranks = fractional_ranks(u);
    let positive_rank_sum: f64 = top_indices(v, k).iter().map(|&i| ranks[i]).sum();
    let (p, q) = (k as f64, (n - k) as f64);
    let mann_whitney = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok((mann_whitney / (p * q)).clamp(0.0, 1.0))
}

/// Share of the top-`k` samples by `u` that are also top-`k` by `v`.
pub fn precision_at_fraction(u: &[f64], v: &[f64], fraction: f64) -> Result<f64> {
    check(u, v, fraction)?;
    let k = top_count(fraction, u.len());
    let truth = top_indices(v, k);
    let hits = top_indices(u, k)
        .iter()
        .filter(|i| truth.contains(i))
        .count();
    Ok(hits as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn cutoff() {
        assert_eq!(top_count(0.1, 10), 1);
        assert_eq!(top_count(0.1, 5), 1);
        assert_eq!(top_count(0.1, 500), 50);
        assert_eq!(top_count(0.2, 15), 3);
    }

    #[test]
    fn auc_extremes() {
        let v = ramp(20);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(auc_high_variance(&v, &v, 0.1).unwrap(), 1.0);
        assert_eq!(auc_high_variance(&[3.0; 20], &v, 0.1).unwrap(), 0.5);
        assert_eq!(auc_high_variance(&neg, &v, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn precision_extremes() {
        let v = ramp(20);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(precision_at_fraction(&v, &v, 0.1).unwrap(), 1.0);
        assert_eq!(precision_at_fraction(&neg, &v, 0.1).unwrap(), 0.0);
        let u = vec![0.0, 5.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let v = vec![0.1, 9.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(precision_at_fraction(&u, &v, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn ties_at_cut_keep_lower_index() {
        assert_eq!(top_indices(&[1.0, 2.0, 2.0, 0.0], 2), vec![1, 2]);
        assert_eq!(top_indices(&[2.0, 2.0, 2.0], 1), vec![0]);
    }

    #[test]
    fn bad_fraction() {
        let v = ramp(10);
        assert!(auc_high_variance(&v, &v, 0.0).is_err());
        assert!(precision_at_fraction(&v, &v, 0.6).is_err());
    }
}
