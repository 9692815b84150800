//! Group-normalized advantages and their query-level reweighting.
//!
//! The modulated advantage is `A~_i = A_i * w_geo * w_rd`, where
//! `w_geo = clip(1 - alpha_G * s^2, 0, 1)` for a geometric score `s` (CD or
//! BoT), `w_rd = 1 + alpha_G * RD` and `alpha_G = alpha_base / ln G`.
//! Both factors are bounded, so `|A~_i| <= (1 + alpha_G) |A_i|`.
//!
//! Three adapted baselines reweight the same advantages from other signals:
//! reward variance, mean token entropy and per-rollout policy-ratio variance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rollout::RolloutGroup;
use crate::stats;
use crate::uncertainty::{token_entropy_aggregate, UncertaintyReport};
use crate::{Error, Result};

/// Geometric score driving the reliability weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoKind {
    Cd,
    Bot,
}

impl fmt::Display for GeoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeoKind::Cd => "cd",
            GeoKind::Bot => "bot",
        })
    }
}

impl FromStr for GeoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" => Ok(GeoKind::Cd),
            "bot" => Ok(GeoKind::Bot),
            other => Err(Error::invalid(format!("unknown geometric score `{other}`"))),
        }
    }
}

/// `(r_i - mean) / (std + epsilon)` with the population standard deviation.
pub fn grpo_advantages(rewards: &[f64], epsilon: f64) -> Vec<f64> {
    let mean = stats::mean(rewards);
    let denom = stats::std_dev(rewards) + epsilon;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// `alpha_base / ln G`.
pub fn alpha_for_group(alpha_base: f64, group_size: f64) -> Result<f64> {
    if group_size < 2.0 {
        return Err(Error::invalid(format!(
            "group size {group_size} < 2 leaves ln G non-positive"
        )));
    }
    if alpha_base < 0.0 {
        return Err(Error::invalid(format!("alpha_base {alpha_base} < 0")));
    }
    Ok(alpha_base / group_size.ln())
}

/// Reliability weight `clip(1 - alpha_G * score^2, 0, 1)`.
pub fn geo_weight(score: f64, alpha_g: f64) -> f64 {
    (1.0 - alpha_g * score * score).clamp(0.0, 1.0)
}

/// Informativeness weight `1 + alpha_G * rd`, `rd` in `[0, 1]`.
pub fn rd_weight(rd: f64, alpha_g: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rd) {
        return Err(Error::invalid(format!(
            "reward dispersion {rd} outside [0, 1]"
        )));
    }
    Ok(1.0 + alpha_g * rd)
}

/// Raw and modulated advantages of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatedAdvantages {
    pub query_id: String,
    pub geo_kind: GeoKind,
    pub geo_score: f64,
    pub alpha_g: f64,
    pub omega_geo: f64,
    pub omega_rd: f64,
    pub raw_advantages: Vec<f64>,
    pub modulated_advantages: Vec<f64>,
}

/// Scales raw advantages by both weights.
pub fn apply_weights(raw: &[f64], omega_geo: f64, omega_rd: f64) -> Vec<f64> {
    raw.iter().map(|a| a * omega_geo * omega_rd).collect()
}

/// Composes advantages, `alpha_G` and both weights for one group.
pub fn modulate(
    group: &RolloutGroup,
    report: &UncertaintyReport,
    geo_kind: GeoKind,
    alpha_base: f64,
    epsilon: f64,
) -> Result<ModulatedAdvantages> {
    if report.query_id != group.query_id() {
        return Err(Error::invalid(format!(
            "report for {} applied to group {}",
            report.query_id,
            group.query_id()
        )));
    }
    let missing = |field| Error::MissingField {
        query_id: group.query_id().to_string(),
        field,
    };
    let geo_score = match geo_kind {
        GeoKind::Cd => report.cd.ok_or_else(|| missing("cd"))?,
        GeoKind::Bot => report.bot.ok_or_else(|| missing("bot"))?,
    };
    let rd = report.rd.ok_or_else(|| missing("rd"))?;
    let alpha_g = alpha_for_group(alpha_base, group.len() as f64)?;
    let raw = grpo_advantages(group.rewards(), epsilon);
    let omega_geo = geo_weight(geo_score, alpha_g);
    let omega_rd = rd_weight(rd, alpha_g)?;
    Ok(ModulatedAdvantages {
        query_id: group.query_id().to_string(),
        geo_kind,
        geo_score,
        alpha_g,
        omega_geo,
        omega_rd,
        modulated_advantages: apply_weights(&raw, omega_geo, omega_rd),
        raw_advantages: raw,
    })
}

/// Variance-based reweighting `clip(1 - alpha * clip(Var(r)/norm, 0, 1), 0, 1)`.
pub fn qhawkeye_weight(rewards: &[f64], alpha: f64, variance_normalizer: f64) -> Result<f64> {
    if !(variance_normalizer > 0.0) {
        return Err(Error::invalid("variance normalizer must be > 0"));
    }
    let u = (stats::variance(rewards) / variance_normalizer).clamp(0.0, 1.0);
    Ok((1.0 - alpha * u).clamp(0.0, 1.0))
}

/// Entropy gate `clip(1 - alpha * H / norm, 0, 1)` applied uniformly to a group.
pub fn egspo_gate(mean_token_entropy: f64, alpha: f64, entropy_normalizer: f64) -> Result<f64> {
    if !(entropy_normalizer > 0.0) {
        return Err(Error::invalid("entropy normalizer must be > 0"));
    }
    Ok((1.0 - alpha * mean_token_entropy / entropy_normalizer).clamp(0.0, 1.0))
}

/// Per-rollout damping `1 / (1 + lambda * v_i)`.
pub fn r2vpo_weights(ratio_variances: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if let Some(v) = ratio_variances.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!(
            "negative policy-ratio variance {v}"
        )));
    }
    Ok(ratio_variances
        .iter()
        .map(|v| 1.0 / (1.0 + lambda * v))
        .collect())
}

/// Adapted baseline modulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    None,
    Qhawkeye,
    Egspo,
    R2vpo,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BaselineKind::None),
            "qhawkeye" => Ok(BaselineKind::Qhawkeye),
            "egspo" => Ok(BaselineKind::Egspo),
            "r2vpo" => Ok(BaselineKind::R2vpo),
            other => Err(Error::invalid(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Percentile used to derive dataset-level normalizers.
pub const NORMALIZER_PERCENTILE: f64 = 95.0;

/// Dataset-level normalizers from a sequential calibration pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineNormalizers {
    pub reward_variance: f64,
    pub token_entropy: Option<f64>,
}

impl BaselineNormalizers {
    /// 95th percentiles of per-group reward variance and mean token entropy.
    ///
    /// A non-positive percentile (every group constant) is replaced by 1,
    /// which leaves the corresponding weight at 1 for those groups anyway.
    pub fn calibrate(groups: &[RolloutGroup]) -> Self {
        let positive_or_one = |x: f64| if x > 0.0 { x } else { 1.0 };
        let variances: Vec<f64> = groups
            .iter()
            .map(|g| stats::variance(g.rewards()))
            .collect();
        let reward_variance = if variances.is_empty() {
            1.0
        } else {
            positive_or_one(stats::percentile(&variances, NORMALIZER_PERCENTILE))
        };
        let entropies: Option<Vec<f64>> = groups
            .iter()
            .map(|g| g.token_entropies().ok().map(token_entropy_aggregate))
            .collect();
        let token_entropy = entropies
            .filter(|e| !e.is_empty())
            .map(|e| positive_or_one(stats::percentile(&e, NORMALIZER_PERCENTILE)));
        BaselineNormalizers {
            reward_variance,
            token_entropy,
        }
    }
}

/// Per-rollout weights of a baseline for one group.
pub fn baseline_weights(
    group: &RolloutGroup,
    kind: BaselineKind,
    alpha: f64,
    lambda: f64,
    normalizers: &BaselineNormalizers,
) -> Result<Vec<f64>> {
    let g = group.len();
    match kind {
        BaselineKind::None => Ok(vec![1.0; g]),
        BaselineKind::Qhawkeye => {
            let w = qhawkeye_weight(group.rewards(), alpha, normalizers.reward_variance)?;
            Ok(vec![w; g])
        }
        BaselineKind::Egspo => {
            let h = token_entropy_aggregate(group.token_entropies()?);
            let norm = normalizers
                .token_entropy
                .ok_or_else(|| Error::invalid("token-entropy normalizer unavailable"))?;
            Ok(vec![egspo_gate(h, alpha, norm)?; g])
        }
        BaselineKind::R2vpo => r2vpo_weights(group.ratio_variances()?, lambda),
    }
}
