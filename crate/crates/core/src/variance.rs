//! Sample-level gradient variance, its intra/inter-cluster split, and the
//! Gini and entropy upper bounds on the pairwise (inter-cluster) part.
//!
//! All covariances are population covariances, so for any clustering of the
//! advantage-weighted gradients `x_i = A_i g_i` the split is exact:
//! `V(q) = V_intra + V_inter`.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::rollout::RolloutGroup;
use crate::uncertainty::shannon_entropy;
use crate::vector::{axpy, dot, squared_distance};
use crate::{Error, Result};

const MASS_TOLERANCE: f64 = 1e-9;

/// Advantage-weighted gradients `A_i g_i`.
pub fn weighted_gradients(group: &RolloutGroup, advantages: &[f64]) -> Result<Vec<Vec<f64>>> {
    let grads = group.grads()?;
    if advantages.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            expected: grads.len(),
            actual: advantages.len(),
            context: format!("advantages for query {}", group.query_id()),
        });
    }
    Ok(grads
        .iter()
        .zip(advantages)
        .map(|(g, a)| g.iter().map(|x| a * x).collect())
        .collect())
}

/// Population trace-variance `1/n sum ||x_i - mean||^2`.
pub fn trace_variance(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; vectors[0].len()];
    for v in vectors {
        axpy(&mut mean, 1.0 / n, v);
    }
    vectors
        .iter()
        .map(|v| squared_distance(v, &mean))
        .sum::<f64>()
        / n
}

/// `V(q) = 1/G sum_i ||A_i g_i - 1/G sum_j A_j g_j||^2`.
pub fn sample_gradient_variance(group: &RolloutGroup, advantages: &[f64]) -> Result<f64> {
    Ok(trace_variance(&weighted_gradients(group, advantages)?))
}

/// Law-of-total-variance split of a trace variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub v_intra: f64,
    pub v_inter: f64,
    pub v_total: f64,
}

fn check_masses(masses: &[f64], k: usize) -> Result<()> {
    if masses.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: masses.len(),
            context: "cluster masses".into(),
        });
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE || masses.iter().any(|m| *m < 0.0) {
        return Err(Error::invalid(format!(
            "cluster masses must be a probability vector (sum {total})"
        )));
    }
    Ok(())
}

/// `V_intra = sum_k p_k tr Cov(g | k)`, `V_inter = sum_k p_k ||mu_k||^2 - ||sum_k p_k mu_k||^2`.
pub fn variance_decomposition(
    cluster_means: &[Vec<f64>],
    masses: &[f64],
    intra_traces: &[f64],
) -> Result<Decomposition> {
    check_masses(masses, cluster_means.len())?;
    if intra_traces.len() != masses.len() {
        return Err(Error::DimensionMismatch {
            expected: masses.len(),
            actual: intra_traces.len(),
            context: "intra-cluster traces".into(),
        });
    }
    let v_intra: f64 = masses.iter().zip(intra_traces).map(|(p, t)| p * t).sum();
    let mut overall = vec![0.0; cluster_means[0].len()];
    let mut second_moment = 0.0;
    for (p, mu) in masses.iter().zip(cluster_means) {
        axpy(&mut overall, *p, mu);
        second_moment += p * dot(mu, mu);
    }
    let v_inter = (second_moment - dot(&overall, &overall)).max(0.0);
    Ok(Decomposition {
        v_intra,
        v_inter,
        v_total: v_intra + v_inter,
    })
}

/// `1/2 sum_ij p_i p_j ||mu_i - mu_j||^2`.
pub fn pairwise_variance(means: &[Vec<f64>], masses: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            total += masses[i] * masses[j] * squared_distance(&means[i], &means[j]);
        }
    }
    total
}

/// `1 - sum p^2`.
pub fn gini_impurity(masses: &[f64]) -> f64 {
    1.0 - masses.iter().map(|p| p * p).sum::<f64>()
}

/// Worst-case distance, Gini bound and its slack over the true pairwise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub delta_max_sq: f64,
    pub bound: f64,
    pub slack: f64,
}

pub fn max_pairwise_sq_distance(means: &[Vec<f64>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            best = best.max(squared_distance(&means[i], &means[j]));
        }
    }
    best
}

/// `bound = (D_max^2 / 2) Gini`, `slack = bound - pairwise_variance`.
pub fn bound_slack(means: &[Vec<f64>], masses: &[f64]) -> Slack {
    if means.len() < 2 {
        return Slack {
            delta_max_sq: 0.0,
            bound: 0.0,
            slack: 0.0,
        };
    }
    let delta_max_sq = max_pairwise_sq_distance(means);
    let bound = delta_max_sq / 2.0 * gini_impurity(masses);
    Slack {
        delta_max_sq,
        bound,
        slack: bound - pairwise_variance(means, masses),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBoundCheck {
    pub gini: f64,
    pub entropy: f64,
    /// `Gini <= H` and `V_pairwise <= (D_max^2 / 2) H`.
    pub holds: bool,
}

pub fn entropy_bound_check(masses: &[f64], means: &[Vec<f64>]) -> EntropyBoundCheck {
    let gini = gini_impurity(masses);
    let entropy = shannon_entropy(masses);
    let bound = max_pairwise_sq_distance(means) / 2.0 * entropy;
    let holds = gini <= entropy + 1e-15 && pairwise_variance(means, masses) <= bound + 1e-12;
    EntropyBoundCheck {
        gini,
        entropy,
        holds,
    }
}

/// Per-cluster means and trace-variances of `vectors` under `clusters`.
pub fn cluster_moments(
    vectors: &[Vec<f64>],
    clusters: &ClusterAssignment,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = clusters.k();
    let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for (v, &z) in vectors.iter().zip(&clusters.labels) {
        members[z].push(v.clone());
    }
    let mut means = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    for m in &members {
        let n = m.len() as f64;
        let mut mu = vec![0.0; vectors[0].len()];
        for v in m {
            axpy(&mut mu, 1.0 / n, v);
        }
        traces.push(m.iter().map(|v| squared_distance(v, &mu)).sum::<f64>() / n);
        means.push(mu);
    }
    (means, traces)
}

/// Full variance diagnostics for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub query_id: String,
    pub v_total: f64,
    pub v_intra: f64,
    pub v_inter: f64,
    pub v_pairwise: f64,
    pub gini: f64,
    pub entropy_bound: f64,
    pub slack: f64,
    pub delta_max_sq: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

/// Decomposes `V(q)` of the advantage-weighted gradients over `clusters`.
pub fn variance_report(
    group: &RolloutGroup,
    advantages: &[f64],
    clusters: &ClusterAssignment,
) -> Result<VarianceReport> {
    let x = weighted_gradients(group, advantages)?;
    let (means, traces) = cluster_moments(&x, clusters);
    let split = variance_decomposition(&means, &clusters.masses, &traces)?;
    let slack = bound_slack(&means, &clusters.masses);
    let entropy = shannon_entropy(&clusters.masses);
    Ok(VarianceReport {
        query_id: group.query_id().to_string(),
        v_total: split.v_total,
        v_intra: split.v_intra,
        v_inter: split.v_inter,
        v_pairwise: pairwise_variance(&means, &clusters.masses),
        gini: gini_impurity(&clusters.masses),
        entropy_bound: slack.delta_max_sq / 2.0 * entropy,
        slack: slack.slack,
        delta_max_sq: slack.delta_max_sq,
        k: clusters.k(),
    })
}
