//! Fractional ranks and Spearman rank correlation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Largest sample for which the exact permutation p-value is offered.
pub const MAX_EXACT_N: usize = 12;

/// 1-based ranks with ties sharing the average of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    TApproximation,
    ExactPermutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn check_inputs(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
            context: "spearman inputs".into(),
        });
    }
    if u.len() < 3 {
        return Err(Error::invalid(format!(
            "spearman needs N >= 3, got {}",
            u.len()
        )));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::invalid("spearman inputs must be finite"));
    }
    if is_constant(u) {
        return Err(Error::Degenerate("spearman: `u` is constant".into()));
    }
    if is_constant(v) {
        return Err(Error::Degenerate("spearman: `v` is constant".into()));
    }
    Ok(())
}

/// Spearman rho only; `None` when either side is constant.
pub fn spearman_rho(u: &[f64], v: &[f64]) -> Option<f64> {
    pearson(&fractional_ranks(u), &fractional_ranks(v))
}

/// Two-sided p-value for rho under the t approximation with `n - 2` dof.
pub fn t_approx_p_value(rho: f64, n: usize) -> f64 {
    let dof = (n - 2) as f64;
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let t = rho * (dof / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Rank correlation with a t-approximation p-value.
pub fn spearman(u: &[f64], v: &[f64]) -> Result<Spearman> {
    check_inputs(u, v)?;
    let rho = spearman_rho(u, v).expect("non-constant inputs");
    Ok(Spearman {
        rho,
        p_value: t_approx_p_value(rho, u.len()),
        method: PValueMethod::TApproximation,
    })
}

/// Rank correlation with an exact two-sided permutation p-value (N <= 12).
///
/// Ranks are doubled and centered so every product is an integer, which keeps
/// the incremental dot product exact over all `N!` permutations.
pub fn spearman_exact(u: &[f64], v: &[f64]) -> Result<Spearman> {
    check_inputs(u, v)?;
    let n = u.len();
    if n > MAX_EXACT_N {
        return Err(Error::invalid(format!(
            "exact permutation p-value limited to N <= {MAX_EXACT_N}, got {n}"
        )));
    }
    let centered = |x: &[f64]| -> Vec<i64> {
        fractional_ranks(x)
            .iter()
            .map(|r| (2.0 * r).round() as i64 - (n as i64 + 1))
            .collect()
    };
    let a = centered(u);
    let mut b = centered(v);
    let observed: i64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let rho = spearman_rho(u, v).expect("non-constant inputs");

    // Heap's algorithm over permutations of `b`, tracking the dot product.
    let mut dot = observed;
    let mut extreme = 0u64;
    let mut total = 0u64;
    let mut c = vec![0usize; n];
    let mut visit = |d: i64| {
        total += 1;
        if d.abs() >= observed.abs() {
            extreme += 1;
        }
    };
    visit(dot);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let j = if i % 2 == 0 { 0 } else { c[i] };
            dot += (a[i] - a[j]) * (b[j] - b[i]);
            b.swap(i, j);
            visit(dot);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(Spearman {
        rho,
        p_value: extreme as f64 / total as f64,
        method: PValueMethod::ExactPermutation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            fractional_ranks(&[10.0, 20.0, 20.0, 5.0]),
            vec![2.0, 3.5, 3.5, 1.0]
        );
    }

    #[test]
    fn hand_values() {
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.rho, 1.0);
        assert_eq!(s.p_value, 0.0);
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(s.rho, -1.0);
        // oracle: tests/oracles/hand_values.py (6 sum d^2 shortcut)
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((s.rho - 0.8).abs() < 1e-12);
    }

    #[test]
    fn constant_side_is_named() {
        let err = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("`u`"));
        let err = spearman(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("`v`"));
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn t_approximation_matches_reference() {
        // rho = 0.8, n = 4: t = 0.8 * sqrt(2 / 0.36) = 1.8856, two-sided p with 2 dof
        // = 1 - t / sqrt(2 + t^2) (closed form of the t CDF at 2 dof)
        let t: f64 = 0.8 * (2.0f64 / 0.36).sqrt();
        let expected = 1.0 - t / (2.0 + t * t).sqrt();
        assert!((t_approx_p_value(0.8, 4) - expected).abs() < 1e-12);
    }

    #[test]
    fn exact_p_small_cases() {
        // N = 4, rho = 0.8: |rho| >= 0.8 for 2 permutations at rho = +-1 and
        // 3 + 3 at rho = +-0.8, so p = 8 / 24.
        let s = spearman_exact(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((s.rho - 0.8).abs() < 1e-12);
        assert!((s.p_value - 8.0 / 24.0).abs() < 1e-12, "{}", s.p_value);
        let s = spearman_exact(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((s.p_value - 2.0 / 6.0).abs() < 1e-12);
        assert!(spearman_exact(&[0.0; 13], &[0.0; 13]).is_err());
    }
}
