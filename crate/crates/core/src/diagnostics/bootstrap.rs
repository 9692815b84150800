//! Paired percentile bootstrap for differences of rank correlations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rank::spearman_rho;
use crate::seed::rng_for;
use crate::stats::percentile;
use crate::{Error, Result};

pub const DEFAULT_REPLICATES: usize = 1000;
pub const MIN_REPLICATES: usize = 100;
/// Largest tolerated share of skipped (degenerate) replicates.
pub const MAX_SKIPPED_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// Delta on the original sample.
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
    pub replicates: usize,
    pub skipped: usize,
}

/// Per-replicate rho of each measure against `v`, all measures sharing one
/// resample. Entry is `None` when a resampled side is constant.
pub fn bootstrap_rhos(
    measures: &[&[f64]],
    v: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<Option<f64>>>> {
    let n = v.len();
    if replicates < MIN_REPLICATES {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!("bootstrap needs N >= 3, got {n}")));
    }
    for m in measures {
        if m.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.len(),
                context: "bootstrap measure".into(),
            });
        }
    }
    let rows = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, &[b as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let vb: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            measures
                .iter()
                .map(|m| {
                    let mb: Vec<f64> = idx.iter().map(|&i| m[i]).collect();
                    spearman_rho(&mb, &vb)
                })
                .collect()
        })
        .collect();
    Ok(rows)
}

/// Percentile CI of `rho(a) - rho(b)` from shared bootstrap draws.
pub fn delta_ci(
    rows: &[Vec<Option<f64>>],
    a: usize,
    b: usize,
    observed: f64,
) -> Result<BootstrapCi> {
    let deltas: Vec<f64> = rows.iter().filter_map(|r| Some(r[a]? - r[b]?)).collect();
    let skipped = rows.len() - deltas.len();
    if skipped as f64 > MAX_SKIPPED_SHARE * rows.len() as f64 {
        return Err(Error::Degenerate(format!(
            "{skipped} of {} bootstrap replicates had constant ranks",
            rows.len()
        )));
    }
    Ok(BootstrapCi {
        observed,
        lower: percentile(&deltas, 2.5),
        upper: percentile(&deltas, 97.5),
        replicates: rows.len(),
        skipped,
    })
}

/// Paired bootstrap CI for `rho(u_a, v) - rho(u_b, v)`.
pub fn paired_bootstrap_delta(
    u_a: &[f64],
    u_b: &[f64],
    v: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapCi> {
    let rows = bootstrap_rhos(&[u_a, u_b], v, replicates, seed)?;
    let observed = match (spearman_rho(u_a, v), spearman_rho(u_b, v)) {
        (Some(a), Some(b)) => a - b,
        _ => {
            return Err(Error::Degenerate(
                "constant input to paired bootstrap".into(),
            ))
        }
    };
    delta_ci(&rows, 0, 1, observed)
}
