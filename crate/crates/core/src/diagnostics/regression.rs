//! Held-out linear regression of variance on an uncertainty measure.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::rank::spearman_rho;
use crate::seed::rng_for;
use crate::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;
const SHUFFLE_STREAM: u64 = 0x5eed_f01d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// `None` when the training measure is constant.
    pub beta0: Option<f64>,
    pub beta1: Option<f64>,
    pub mae: Option<f64>,
    /// `None` when predictions or held-out targets are constant.
    pub rho: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutSummary {
    pub mae_mean: f64,
    pub rho_mean: Option<f64>,
    pub folds: Vec<FoldMetrics>,
}

/// Fits `(beta0, beta1)` by ordinary least squares.
pub fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx <= 0.0 {
        return None;
    }
    let beta1 = sxy / sxx;
    Some((my - beta1 * mx, beta1))
}

/// Splits `0..n` into `folds` contiguous slices of a seeded permutation.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[SHUFFLE_STREAM]));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

pub fn heldout_regression(u: &[f64], v: &[f64], folds: usize, seed: u64) -> Result<HeldoutSummary> {
    let n = u.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
            context: "regression inputs".into(),
        });
    }
    if folds < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if n < 2 * folds {
        return Err(Error::invalid(format!(
            "need N >= {} for {folds} folds, got {n}",
            2 * folds
        )));
    }
    let splits = fold_indices(n, folds, seed);
    let mut metrics = Vec::with_capacity(folds);
    for (f, test) in splits.iter().enumerate() {
        let mut in_test = vec![false; n];
        for &i in test {
            in_test[i] = true;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n)
            .filter(|&i| !in_test[i])
            .map(|i| (u[i], v[i]))
            .unzip();
        let fit = ols(&xs, &ys);
        let (mae, rho) = match fit {
            Some((b0, b1)) => {
                let pred: Vec<f64> = test.iter().map(|&i| b0 + b1 * u[i]).collect();
                let truth: Vec<f64> = test.iter().map(|&i| v[i]).collect();
                let mae = pred
                    .iter()
                    .zip(&truth)
                    .map(|(p, t)| (p - t).abs())
                    .sum::<f64>()
                    / test.len() as f64;
                let rho = if test.len() >= 3 {
                    spearman_rho(&pred, &truth)
                } else {
                    None
                };
                (Some(mae), rho)
            }
            None => (None, None),
        };
        metrics.push(FoldMetrics {
            fold: f,
            n_train: xs.len(),
            n_test: test.len(),
            beta0: fit.map(|b| b.0),
            beta1: fit.map(|b| b.1),
            mae,
            rho,
            flagged: fit.is_none(),
        });
    }
    let maes: Vec<f64> = metrics.iter().filter_map(|m| m.mae).collect();
    if maes.is_empty() {
        return Err(Error::Degenerate(
            "measure is constant in every training fold".into(),
        ));
    }
    let rhos: Vec<f64> = metrics.iter().filter_map(|m| m.rho).collect();
    Ok(HeldoutSummary {
        mae_mean: maes.iter().sum::<f64>() / maes.len() as f64,
        rho_mean: (!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64),
        folds: metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_linear() {
        let u: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = u.iter().map(|x| 2.0 * x + 1.0).collect();
        let s = heldout_regression(&u, &v, 5, 42).unwrap();
        assert!(s.mae_mean < 1e-12);
        for f in &s.folds {
            assert_eq!(f.rho, Some(1.0));
            assert!((f.beta1.unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_partition_indices() {
        let f = fold_indices(23, 5, 7);
        let mut all: Vec<usize> = f.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(
            f.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![5, 5, 5, 4, 4]
        );
        assert_eq!(f, fold_indices(23, 5, 7));
    }

    #[test]
    fn constant_measure_flags_every_fold() {
        assert!(heldout_regression(
            &[1.0; 12],
            &(0..12).map(f64::from).collect::<Vec<_>>(),
            3,
            0
        )
        .is_err());
        assert!(heldout_regression(&[1.0; 5], &[1.0; 5], 3, 0).is_err());
        assert!(heldout_regression(&[1.0; 6], &[1.0; 6], 1, 0).is_err());
    }
}
