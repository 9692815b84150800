//! Greedy, order-dependent entailment clustering of rollouts.
//!
//! Rollout 0 seeds cluster 0. Each later rollout is scored against the
//! representative (first member) of every existing cluster using
//! `entailment[rep][candidate]`; it joins the best-scoring cluster when that
//! probability is at least the threshold, otherwise it opens a new cluster.
//! Representatives are never updated as clusters grow.

use serde::Serialize;

use crate::rollout::RolloutGroup;
use crate::vector::{axpy, norm, scaled};
use crate::{Error, Result};

/// Centroids whose summed member embedding is shorter than this fall back to
/// the representative's embedding.
pub const DEGENERATE_CENTROID_NORM: f64 = 1e-9;

/// Mapping of rollouts to semantic clusters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    /// Cluster index per rollout, contiguous `0..k` in order of creation.
    pub labels: Vec<usize>,
    /// `count / G` per cluster.
    pub masses: Vec<f64>,
    /// Unit-norm mean embedding per cluster.
    pub centroids: Vec<Vec<f64>>,
    /// First-assigned rollout of each cluster.
    pub representatives: Vec<usize>,
}

impl ClusterAssignment {
    /// Number of clusters `K`.
    pub fn k(&self) -> usize {
        self.masses.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for &z in &self.labels {
            counts[z] += 1;
        }
        counts
    }
}

/// Clusters a group from its ingested entailment matrix.
pub fn greedy_entailment_cluster(
    group: &RolloutGroup,
    threshold: f64,
) -> Result<ClusterAssignment> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "entailment threshold {threshold} must lie in (0, 1)"
        )));
    }
    let matrix = group.entailment()?;
    let labels = greedy_labels(matrix, threshold)?;
    cluster_by_labels(group, &labels)
}

/// The greedy assignment rule on a bare `G x G` matrix.
pub fn greedy_labels(entailment: &[Vec<f64>], threshold: f64) -> Result<Vec<usize>> {
    let g = entailment.len();
    if entailment.iter().any(|row| row.len() != g) {
        return Err(Error::invalid("entailment matrix is not square"));
    }
    if g == 0 {
        return Ok(Vec::new());
    }
    let mut reps = vec![0usize];
    let mut labels = vec![0usize; g];
    for i in 1..g {
        // strict `>` keeps the lowest cluster index on ties
        let mut best: Option<(usize, f64)> = None;
        for (k, &rep) in reps.iter().enumerate() {
            let p = entailment[rep][i];
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((k, p));
            }
        }
        match best {
            Some((k, p)) if p >= threshold => labels[i] = k,
            _ => {
                labels[i] = reps.len();
                reps.push(i);
            }
        }
    }
    Ok(labels)
}

/// Builds masses and centroids from externally supplied labels.
///
/// Labels may use any indices; they are relabeled to `0..K` in order of first
/// appearance, so the representative of each cluster is its first member.
pub fn cluster_by_labels(group: &RolloutGroup, labels: &[usize]) -> Result<ClusterAssignment> {
    let g = group.len();
    if labels.len() != g {
        return Err(Error::DimensionMismatch {
            expected: g,
            actual: labels.len(),
            context: format!("labels for query {}", group.query_id()),
        });
    }
    let mut remap: Vec<(usize, usize)> = Vec::new();
    let mut representatives = Vec::new();
    let mut dense = Vec::with_capacity(g);
    for (i, &raw) in labels.iter().enumerate() {
        let z = match remap.iter().find(|(r, _)| *r == raw) {
            Some(&(_, z)) => z,
            None => {
                let z = remap.len();
                remap.push((raw, z));
                representatives.push(i);
                z
            }
        };
        dense.push(z);
    }
    let k = representatives.len();
    let dim = group.embedding_dim();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &z) in dense.iter().enumerate() {
        axpy(&mut sums[z], 1.0, &group.embeddings()[i]);
        counts[z] += 1;
    }
    let centroids = sums
        .iter()
        .zip(&representatives)
        .map(|(s, &rep)| {
            let n = norm(s);
            if n < DEGENERATE_CENTROID_NORM {
                group.embeddings()[rep].clone()
            } else {
                scaled(s, 1.0 / n)
            }
        })
        .collect();
    let masses = counts.iter().map(|&c| c as f64 / g as f64).collect();
    Ok(ClusterAssignment {
        labels: dense,
        masses,
        centroids,
        representatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(embeddings: Vec<Vec<f64>>) -> RolloutGroup {
        let g = embeddings.len();
        RolloutGroup::new(
            "q",
            (0..g).map(|i| format!("a{i}")).collect(),
            embeddings,
            vec![0.0; g],
        )
        .unwrap()
    }

    fn with_matrix(m: Vec<Vec<f64>>) -> RolloutGroup {
        let g = m.len();
        group((0..g).map(|i| vec![1.0, i as f64]).collect())
            .with_entailment(m)
            .unwrap()
    }

    #[test]
    fn hand_simulated_three_rollouts() {
        let m = vec![
            vec![1.0, 0.9, 0.1],
            vec![0.9, 1.0, 0.1],
            vec![0.1, 0.1, 1.0],
        ];
        let c = greedy_entailment_cluster(&with_matrix(m), 0.35).unwrap();
        assert_eq!(c.labels, vec![0, 0, 1]);
        assert_eq!(c.representatives, vec![0, 2]);
    }

    #[test]
    fn nothing_joins_at_zero_entailment() {
        let c = greedy_entailment_cluster(&with_matrix(vec![vec![0.0; 4]; 4]), 0.35).unwrap();
        assert_eq!(c.labels, vec![0, 1, 2, 3]);
        assert_eq!(c.k(), 4);
    }

    #[test]
    fn everything_joins_at_full_entailment() {
        let c = greedy_entailment_cluster(&with_matrix(vec![vec![1.0; 5]; 5]), 0.35).unwrap();
        assert_eq!(c.labels, vec![0; 5]);
        assert_eq!(c.masses, vec![1.0]);
    }

    #[test]
    fn threshold_boundary_joins() {
        let m = vec![vec![1.0, 0.35], vec![0.35, 1.0]];
        let c = greedy_entailment_cluster(&with_matrix(m), 0.35).unwrap();
        assert_eq!(c.labels, vec![0, 0]);
    }

    #[test]
    fn direction_is_rep_to_candidate() {
        // entailment[1][0] is high but only entailment[0][1] is consulted
        let m = vec![vec![1.0, 0.1], vec![0.99, 1.0]];
        let c = greedy_entailment_cluster(&with_matrix(m), 0.35).unwrap();
        assert_eq!(c.labels, vec![0, 1]);
    }

    #[test]
    fn ties_prefer_lowest_cluster_and_rep_is_fixed() {
        // rollout 2 entails reps 0 and 1 equally; rollout 3 is only entailed
        // by rollout 2 (not a representative) so it opens a new cluster.
        let m = vec![
            vec![1.0, 0.0, 0.8, 0.0],
            vec![0.0, 1.0, 0.8, 0.0],
            vec![0.8, 0.8, 1.0, 0.9],
            vec![0.0, 0.0, 0.9, 1.0],
        ];
        let c = greedy_entailment_cluster(&with_matrix(m), 0.35).unwrap();
        assert_eq!(c.labels, vec![0, 1, 0, 2]);
    }

    #[test]
    fn bad_inputs() {
        let g = group(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            greedy_entailment_cluster(&g, 0.35),
            Err(Error::MissingField {
                field: "entailment",
                ..
            })
        ));
        assert!(greedy_labels(&[vec![1.0, 0.0], vec![1.0]], 0.35).is_err());
        assert!(greedy_entailment_cluster(&with_matrix(vec![vec![1.0; 2]; 2]), 1.0).is_err());
        assert!(cluster_by_labels(&g, &[0]).is_err());
    }

    #[test]
    fn masses_by_counting() {
        let g = group(vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let c = cluster_by_labels(&g, &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.masses, vec![0.5, 0.5]);
        assert_eq!(c.centroids, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn single_cluster_centroid_is_normalized_mean() {
        let g = group(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c = cluster_by_labels(&g, &[3, 3]).unwrap();
        assert_eq!(c.k(), 1);
        let s = 0.5f64.sqrt();
        assert!((c.centroids[0][0] - s).abs() < 1e-15 && (c.centroids[0][1] - s).abs() < 1e-15);
    }

    #[test]
    fn identical_members_give_member_centroid() {
        let g = group(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let c = cluster_by_labels(&g, &[0, 1, 0]).unwrap();
        assert_eq!(c.centroids[0], vec![1.0, 0.0]);
    }

    #[test]
    fn cancelling_members_fall_back_to_representative() {
        let g = group(vec![vec![0.0, 1.0], vec![0.0, -1.0]]);
        let c = cluster_by_labels(&g, &[0, 0]).unwrap();
        assert_eq!(c.centroids[0], vec![0.0, 1.0]);
    }

    #[test]
    fn external_labels_relabeled_in_creation_order() {
        let g = group(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let c = cluster_by_labels(&g, &[7, 2, 7]).unwrap();
        assert_eq!(c.labels, vec![0, 1, 0]);
        assert_eq!(c.representatives, vec![0, 1]);
        let total: f64 = c.counts().iter().map(|&n| n as f64).sum();
        assert_eq!(total, 3.0);
    }
}
