//! Scalar uncertainty measures over one rollout group.
//!
//! All entropies are in nats. Rollout weights are uniform (`1/G`).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{greedy_entailment_cluster, ClusterAssignment};
use crate::rollout::{DatasetManifest, RolloutGroup};
use crate::vector::{axpy, dot, norm};
use crate::{Error, Result};

/// Barycenters shorter than this are treated as mass-cancelling.
pub const DEGENERATE_BARYCENTER_NORM: f64 = 1e-9;

/// Shannon entropy `-sum p ln p` with `0 ln 0 = 0`.
pub fn shannon_entropy(masses: &[f64]) -> f64 {
    let h: f64 = masses
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // -1 * ln 1 is -0.0
    h.max(0.0)
}

/// Entropy of the cluster-mass distribution.
pub fn semantic_entropy(clusters: &ClusterAssignment) -> f64 {
    shannon_entropy(&clusters.masses)
}

/// Mean of precomputed per-rollout token entropies.
pub fn token_entropy_aggregate(per_rollout: &[f64]) -> f64 {
    per_rollout.iter().sum::<f64>() / per_rollout.len() as f64
}

/// `pi^T D pi` with `D_ij = clip(1 - e_i . e_j, 0, 1)` and `D_ii = 0`.
pub fn cosine_dispersion(group: &RolloutGroup) -> f64 {
    cosine_dispersion_of(group.embeddings())
}

pub fn cosine_dispersion_of(embeddings: &[Vec<f64>]) -> f64 {
    let g = embeddings.len();
    let mut total = 0.0;
    for i in 0..g {
        for j in (i + 1)..g {
            total += (1.0 - dot(&embeddings[i], &embeddings[j])).clamp(0.0, 1.0);
        }
    }
    2.0 * total / (g * g) as f64
}

/// Mass-weighted cosine transport cost of cluster centroids to their
/// normalized barycentric direction, clipped to `[0, 1]`.
///
/// When the centroids cancel (barycenter norm below
/// [`DEGENERATE_BARYCENTER_NORM`]) every cluster is charged `1/2`, the cost
/// towards any direction orthogonal to them, giving `0.5`.
pub fn barycentric_transport(clusters: &ClusterAssignment) -> f64 {
    let dim = clusters.centroids[0].len();
    let mut bary = vec![0.0; dim];
    for (m, c) in clusters.masses.iter().zip(&clusters.centroids) {
        axpy(&mut bary, *m, c);
    }
    let n = norm(&bary);
    if n < DEGENERATE_BARYCENTER_NORM {
        return clusters.masses.iter().sum::<f64>() * 0.5;
    }
    let cost: f64 = clusters
        .masses
        .iter()
        .zip(&clusters.centroids)
        .map(|(m, c)| m * (1.0 - dot(c, &bary) / n) / 2.0)
        .sum();
    cost.clamp(0.0, 1.0)
}

/// Largest attainable `sum_i |r_i - mean|` for `G` rewards in the range.
pub fn rd_max(group_size: usize, manifest: &DatasetManifest) -> f64 {
    let g = group_size as f64;
    let lower = (group_size / 2) as f64;
    let upper = group_size.div_ceil(2) as f64;
    2.0 / g * lower * upper * (manifest.r_max() - manifest.r_min())
}

/// Raw and range-normalized reward dispersion.
pub fn reward_dispersion(rewards: &[f64], manifest: &DatasetManifest) -> (f64, f64) {
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let raw: f64 = rewards.iter().map(|r| (r - mean).abs()).sum();
    let normalized = (raw / rd_max(rewards.len(), manifest)).clamp(0.0, 1.0);
    (raw, normalized)
}

/// Which measures to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureSet {
    pub entropy: bool,
    pub se: bool,
    pub cd: bool,
    pub bot: bool,
    pub rd: bool,
}

impl MeasureSet {
    pub const fn all() -> Self {
        MeasureSet {
            entropy: true,
            se: true,
            cd: true,
            bot: true,
            rd: true,
        }
    }

    pub const fn none() -> Self {
        MeasureSet {
            entropy: false,
            se: false,
            cd: false,
            bot: false,
            rd: false,
        }
    }

    fn needs_clusters(&self) -> bool {
        self.se || self.bot
    }

    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.entropy, "entropy"),
            (self.se, "se"),
            (self.cd, "cd"),
            (self.bot, "bot"),
            (self.rd, "rd"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect()
    }
}

impl Default for MeasureSet {
    /// Everything except token entropy, which needs an optional input field.
    fn default() -> Self {
        MeasureSet {
            entropy: false,
            ..MeasureSet::all()
        }
    }
}

impl FromStr for MeasureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = MeasureSet::none();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "entropy" => set.entropy = true,
                "se" => set.se = true,
                "cd" => set.cd = true,
                "bot" => set.bot = true,
                "rd" => set.rd = true,
                other => return Err(Error::invalid(format!("unknown measure `{other}`"))),
            }
        }
        Ok(set)
    }
}

/// All scalar measures for one group. Measures not requested are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub query_id: String,
    #[serde(rename = "se")]
    pub semantic_entropy: Option<f64>,
    pub cd: Option<f64>,
    pub bot: Option<f64>,
    pub rd: Option<f64>,
    pub rd_raw: Option<f64>,
    pub token_entropy: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
}

/// Computes the requested measures, clustering by entailment when SE or BoT
/// is requested.
pub fn score_group(
    group: &RolloutGroup,
    manifest: &DatasetManifest,
    measures: MeasureSet,
    entailment_threshold: f64,
) -> Result<UncertaintyReport> {
    let clusters = if measures.needs_clusters() {
        Some(greedy_entailment_cluster(group, entailment_threshold)?)
    } else {
        None
    };
    score_with_clusters(group, manifest, measures, clusters.as_ref())
}

/// Like [`score_group`] but with a caller-supplied clustering.
pub fn score_with_clusters(
    group: &RolloutGroup,
    manifest: &DatasetManifest,
    measures: MeasureSet,
    clusters: Option<&ClusterAssignment>,
) -> Result<UncertaintyReport> {
    let need = |field: &'static str| Error::MissingField {
        query_id: group.query_id().to_string(),
        field,
    };
    let token_entropy = if measures.entropy {
        Some(token_entropy_aggregate(group.token_entropies()?))
    } else {
        None
    };
    let (semantic_entropy, bot, k) = if measures.needs_clusters() {
        let c = clusters.ok_or_else(|| need("entailment"))?;
        (
            measures.se.then(|| semantic_entropy(c)),
            measures.bot.then(|| barycentric_transport(c)),
            Some(c.k()),
        )
    } else {
        (None, None, None)
    };
    let (rd_raw, rd) = if measures.rd {
        let (raw, norm) = reward_dispersion(group.rewards(), manifest);
        (Some(raw), Some(norm))
    } else {
        (None, None)
    };
    Ok(UncertaintyReport {
        query_id: group.query_id().to_string(),
        semantic_entropy,
        cd: measures.cd.then(|| cosine_dispersion(group)),
        bot,
        rd,
        rd_raw,
        token_entropy,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::cluster_by_labels;

    fn group(embeddings: Vec<Vec<f64>>, rewards: Vec<f64>) -> RolloutGroup {
        let g = embeddings.len();
        RolloutGroup::new(
            "q",
            (0..g).map(|i| i.to_string()).collect(),
            embeddings,
            rewards,
        )
        .unwrap()
    }

    fn assignment(masses: Vec<f64>, centroids: Vec<Vec<f64>>) -> ClusterAssignment {
        ClusterAssignment {
            labels: vec![],
            representatives: vec![],
            masses,
            centroids,
        }
    }

    #[test]
    fn semantic_entropy_values() {
        assert_eq!(shannon_entropy(&[1.0]), 0.0);
        assert!((shannon_entropy(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
        // oracle: tests/oracles/hand_values.py
        assert!((shannon_entropy(&[0.75, 0.25]) - 0.562_335_144_618_808_3).abs() < 1e-12);
        assert_eq!(shannon_entropy(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn token_entropy_mean() {
        assert_eq!(token_entropy_aggregate(&[0.0, 0.0]), 0.0);
        let l2 = 2f64.ln();
        assert_eq!(token_entropy_aggregate(&[l2, l2]), l2);
        assert!((token_entropy_aggregate(&[0.2, 0.4, 0.6]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cd_hand_values() {
        let same = group(vec![vec![1.0, 2.0]; 3], vec![0.0; 3]);
        assert!(cosine_dispersion(&same) < 1e-12);
        let orth = group(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2]);
        assert!((cosine_dispersion(&orth) - 0.5).abs() < 1e-15);
        let anti = group(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0; 2]);
        assert!((cosine_dispersion(&anti) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bot_hand_values() {
        assert_eq!(
            barycentric_transport(&assignment(vec![1.0], vec![vec![0.6, 0.8]])),
            0.0
        );
        let b = barycentric_transport(&assignment(
            vec![0.75, 0.25],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        ));
        // oracle: tests/oracles/hand_values.py
        assert!((b - 0.104_715_292_478_952_59).abs() < 1e-12, "{b}");
        let anti = barycentric_transport(&assignment(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        ));
        assert_eq!(anti, 0.5);
    }

    #[test]
    fn rd_hand_values() {
        let m = DatasetManifest::new([0.0, 2.0], 2, 4).unwrap();
        assert_eq!(reward_dispersion(&[1.0; 4], &m), (0.0, 0.0));
        let (raw, rd) = reward_dispersion(&[2.0, 0.0, 0.0, 0.0], &m);
        assert!((raw - 3.0).abs() < 1e-15 && (rd - 0.75).abs() < 1e-15);
        assert_eq!(rd_max(4, &m), 4.0);
        assert_eq!(rd_max(16, &m), 16.0);
        // odd G: floor(5/2) * ceil(5/2) = 6
        assert!((rd_max(5, &m) - 2.0 / 5.0 * 6.0 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn measure_set_parsing() {
        let s: MeasureSet = "entropy,se,cd,bot,rd".parse().unwrap();
        assert_eq!(s, MeasureSet::all());
        let s: MeasureSet = "cd, rd".parse().unwrap();
        assert!(s.cd && s.rd && !s.se);
        assert!("cd,foo".parse::<MeasureSet>().is_err());
    }

    #[test]
    fn report_requires_named_fields() {
        let g = group(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 2.0]);
        let m = DatasetManifest::new([0.0, 2.0], 2, 2).unwrap();
        let err = score_group(&g, &m, MeasureSet::all(), 0.35).unwrap_err();
        assert!(err.to_string().contains("entailment"), "{err}");
        let only_cd: MeasureSet = "cd,rd".parse().unwrap();
        let r = score_group(&g, &m, only_cd, 0.35).unwrap();
        assert_eq!(r.cd, Some(0.5));
        assert_eq!(r.rd, Some(1.0));
        assert_eq!(r.semantic_entropy, None);
        let ent: MeasureSet = "entropy".parse().unwrap();
        assert!(score_group(&g, &m, ent, 0.35)
            .unwrap_err()
            .to_string()
            .contains("token_entropy"));
    }

    #[test]
    fn se_zero_iff_single_cluster() {
        let g = group(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![0.0; 3],
        );
        let one = cluster_by_labels(&g, &[0, 0, 0]).unwrap();
        let two = cluster_by_labels(&g, &[0, 1, 0]).unwrap();
        assert_eq!(semantic_entropy(&one), 0.0);
        assert!(semantic_entropy(&two) > 0.0);
    }
}
