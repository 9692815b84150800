//! Statistical protocol relating uncertainty measures to gradient variance.

mod bootstrap;
mod rank;
mod regression;
mod retrieval;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bootstrap::{
    bootstrap_rhos, delta_ci, paired_bootstrap_delta, BootstrapCi, DEFAULT_REPLICATES,
    MAX_SKIPPED_SHARE, MIN_REPLICATES,
};
pub use rank::{
    fractional_ranks, pearson, spearman, spearman_exact, spearman_rho, t_approx_p_value,
    PValueMethod, Spearman, MAX_EXACT_N,
};
pub use regression::{
    fold_indices, heldout_regression, ols, FoldMetrics, HeldoutSummary, DEFAULT_FOLDS,
};
pub use retrieval::{
    auc_high_variance, precision_at_fraction, top_count, top_indices, DEFAULT_TOP_FRACTION,
};

use crate::{Error, Result};

/// Samples removed from the top of the variance distribution in protocol runs.
pub const DEFAULT_TRIM: usize = 20;

/// One query's measures paired with its gradient variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub query_id: String,
    pub measures: BTreeMap<String, f64>,
    pub target: f64,
}

/// Indices kept after dropping the `n` largest values, in original order.
pub fn trim_indices(values: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > 0 && n >= values.len() {
        return Err(Error::invalid(format!(
            "cannot trim {n} of {} samples",
            values.len()
        )));
    }
    let mut drop = vec![false; values.len()];
    for i in top_indices(values, n) {
        drop[i] = true;
    }
    Ok((0..values.len()).filter(|&i| !drop[i]).collect())
}

/// Drops the `n` samples with the largest `key`; ties at the cut keep the
/// lower original index.
pub fn trim_top_variance<T: Clone>(
    samples: &[T],
    n: usize,
    key: impl Fn(&T) -> f64,
) -> Result<Vec<T>> {
    let values: Vec<f64> = samples.iter().map(key).collect();
    Ok(trim_indices(&values, n)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub trim: usize,
    pub bootstrap: usize,
    pub folds: usize,
    pub top_fraction: f64,
    pub seed: u64,
    pub exact_p: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            trim: DEFAULT_TRIM,
            bootstrap: DEFAULT_REPLICATES,
            folds: DEFAULT_FOLDS,
            top_fraction: DEFAULT_TOP_FRACTION,
            seed: 42,
            exact_p: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureStats {
    pub measure: String,
    pub rho: f64,
    pub p_value: f64,
    pub p_method: PValueMethod,
    pub auc: f64,
    pub precision: f64,
    pub heldout: HeldoutSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub ci: BootstrapCi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub n_input: usize,
    pub n_used: usize,
    pub trimmed: usize,
    pub seed: u64,
    pub top_count: usize,
    pub measures: Vec<MeasureStats>,
    pub deltas: Vec<DeltaReport>,
}

impl StatReport {
    pub fn measure(&self, name: &str) -> Option<&MeasureStats> {
        self.measures.iter().find(|m| m.measure == name)
    }

    pub fn delta(&self, a: &str, b: &str) -> Option<&DeltaReport> {
        self.deltas.iter().find(|d| d.a == a && d.b == b)
    }
}

/// All ordered pairs `(names[i], names[j])` with `i < j`.
pub fn all_pairs(names: &[String]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            out.push((names[i].clone(), names[j].clone()));
        }
    }
    out
}

/// Runs the full protocol after trimming.
///
/// `pairs` selects which `rho(a) - rho(b)` intervals to report.
pub fn analyze(
    samples: &[PairedSample],
    names: &[String],
    pairs: &[(String, String)],
    config: &AnalysisConfig,
) -> Result<StatReport> {
    if names.is_empty() {
        return Err(Error::invalid("no measures to analyze"));
    }
    for s in samples {
        if !s.target.is_finite() {
            return Err(Error::Validation {
                query_id: s.query_id.clone(),
                message: "non-finite variance".into(),
            });
        }
        for name in names {
            match s.measures.get(name) {
                Some(x) if x.is_finite() => {}
                Some(_) => {
                    return Err(Error::Validation {
                        query_id: s.query_id.clone(),
                        message: format!("non-finite measure `{name}`"),
                    })
                }
                None => {
                    return Err(Error::Validation {
                        query_id: s.query_id.clone(),
                        message: format!("measure `{name}` missing"),
                    })
                }
            }
        }
    }
    let kept = trim_top_variance(samples, config.trim, |s| s.target)?;
    if kept.len() < 3 {
        return Err(Error::invalid(format!(
            "{} samples remain after trimming, need at least 3",
            kept.len()
        )));
    }
    let v: Vec<f64> = kept.iter().map(|s| s.target).collect();
    let columns: Vec<Vec<f64>> = names
        .iter()
        .map(|n| kept.iter().map(|s| s.measures[n]).collect())
        .collect();

    let mut measures = Vec::with_capacity(names.len());
    for (name, u) in names.iter().zip(&columns) {
        let named = |e: Error| Error::Degenerate(format!("measure `{name}`: {e}"));
        let s = if config.exact_p && u.len() <= MAX_EXACT_N {
            spearman_exact(u, &v)
        } else {
            spearman(u, &v)
        }
        .map_err(named)?;
        measures.push(MeasureStats {
            measure: name.clone(),
            rho: s.rho,
            p_value: s.p_value,
            p_method: s.method,
            auc: auc_high_variance(u, &v, config.top_fraction).map_err(named)?,
            precision: precision_at_fraction(u, &v, config.top_fraction).map_err(named)?,
            heldout: heldout_regression(u, &v, config.folds, config.seed).map_err(named)?,
        });
    }

    let mut deltas = Vec::with_capacity(pairs.len());
    if !pairs.is_empty() {
        let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
        let rows = bootstrap_rhos(&refs, &v, config.bootstrap, config.seed)?;
        let index = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::invalid(format!("unknown measure `{n}` in pair")))
        };
        for (a, b) in pairs {
            let (ia, ib) = (index(a)?, index(b)?);
            let observed = measures[ia].rho - measures[ib].rho;
            deltas.push(DeltaReport {
                a: a.clone(),
                b: b.clone(),
                ci: delta_ci(&rows, ia, ib, observed)?,
            });
        }
    }

    Ok(StatReport {
        n_input: samples.len(),
        n_used: kept.len(),
        trimmed: config.trim,
        seed: config.seed,
        top_count: top_count(config.top_fraction, kept.len()),
        measures,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: usize, u: f64, v: f64) -> PairedSample {
        PairedSample {
            query_id: format!("q{id}"),
            measures: [("u".to_string(), u)].into_iter().collect(),
            target: v,
        }
    }

    #[test]
    fn trimming() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(trim_top_variance(&xs, 0, |x| *x).unwrap(), xs.to_vec());
        assert_eq!(
            trim_top_variance(&xs, 2, |x| *x).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            trim_indices(&[1.0, 5.0, 5.0, 0.0], 1).unwrap(),
            vec![0, 2, 3]
        );
        assert!(trim_indices(&xs, 5).is_err());
    }

    #[test]
    fn analyze_small_instance() {
        let samples: Vec<PairedSample> = (0..30)
            .map(|i| sample(i, i as f64, (i as f64 * 1.3).sin() + i as f64 * 0.1))
            .collect();
        let names = vec!["u".to_string()];
        let cfg = AnalysisConfig {
            trim: 5,
            bootstrap: 100,
            ..Default::default()
        };
        let r = analyze(&samples, &names, &[], &cfg).unwrap();
        assert_eq!(r.n_used, 25);
        let m = r.measure("u").unwrap();
        assert!((-1.0..=1.0).contains(&m.rho));
        assert!((0.0..=1.0).contains(&m.auc) && (0.0..=1.0).contains(&m.precision));
    }

    #[test]
    fn missing_measure_names_query() {
        let mut samples: Vec<PairedSample> =
            (0..5).map(|i| sample(i, i as f64, i as f64)).collect();
        samples[3].measures.clear();
        let err = analyze(
            &samples,
            &["u".into()],
            &[],
            &AnalysisConfig {
                trim: 0,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("q3"));
    }
}
