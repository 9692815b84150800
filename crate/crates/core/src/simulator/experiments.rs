//! The anisotropic-gap and calibration-gap experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_groups, SimConfig, SimQuery};
use crate::clustering::cluster_by_labels;
use crate::diagnostics::{analyze, trim_indices, AnalysisConfig, PairedSample, StatReport};
use crate::modulation::{alpha_for_group, grpo_advantages, rd_weight};
use crate::stats::mean;
use crate::uncertainty::{
    barycentric_transport, cosine_dispersion, reward_dispersion, semantic_entropy,
};
use crate::variance::{sample_gradient_variance, trace_variance, weighted_gradients};
use crate::vector::norm;
use crate::{Error, Result, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicRow {
    pub query_id: String,
    pub regime: String,
    pub se: f64,
    pub cd: f64,
    pub bot: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicSummary {
    /// Query seeds, each rendered once per regime.
    pub pairs: usize,
    /// Largest |SE(near) - SE(far)| over pairs.
    pub se_max_abs_diff: f64,
    /// Pairs with at least two occupied modes.
    pub multimodal_pairs: usize,
    /// Multimodal pairs with CD(far) > CD(near).
    pub cd_far_greater: usize,
    pub mean_cd_near: f64,
    pub mean_cd_far: f64,
    pub mean_bot_near: f64,
    pub mean_bot_far: f64,
    pub mean_v_near: f64,
    pub mean_v_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicOutcome {
    pub rows: Vec<AnisotropicRow>,
    pub summary: AnisotropicSummary,
    pub report: StatReport,
}

fn same_except_directions(near: &SimConfig, far: &SimConfig) -> Result<()> {
    if near.modes != far.modes {
        return Err(Error::invalid(format!(
            "regimes disagree on K: {} vs {}",
            near.modes, far.modes
        )));
    }
    if near.masses != far.masses || near.dirichlet_concentration != far.dirichlet_concentration {
        return Err(Error::invalid("regimes disagree on cluster masses"));
    }
    let mut aligned = near.clone();
    aligned.directions = far.directions.clone();
    aligned.seed = far.seed;
    aligned.num_queries = far.num_queries;
    if aligned != *far {
        return Err(Error::invalid(
            "regimes may differ only in their mode directions",
        ));
    }
    Ok(())
}

fn measure_query(q: &SimQuery, regime: &str) -> Result<AnisotropicRow> {
    let clusters = cluster_by_labels(&q.group, &q.labels)?;
    let adv = grpo_advantages(q.group.rewards(), DEFAULT_EPSILON);
    Ok(AnisotropicRow {
        query_id: format!("{}/{regime}", q.group.query_id()),
        regime: regime.to_string(),
        se: semantic_entropy(&clusters),
        cd: cosine_dispersion(&q.group),
        bot: barycentric_transport(&clusters),
        v: sample_gradient_variance(&q.group, &adv)?,
    })
}

/// Renders `n / 2` query seeds in both regimes and relates SE, CD and BoT to
/// `V(q)` over the pooled `n` samples.
///
/// Labels, rewards and gradient noise depend only on the query seed, so the
/// two renderings of a query share SE exactly and differ only in geometry.
pub fn anisotropic_experiment(
    near: &SimConfig,
    far: &SimConfig,
    n: usize,
    seed: u64,
    analysis: &AnalysisConfig,
) -> Result<AnisotropicOutcome> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "pooled sample size {n} must be even and positive"
        )));
    }
    let pairs = n / 2;
    let configure = |c: &SimConfig| {
        let mut c = c.clone();
        c.seed = seed;
        c.num_queries = pairs;
        c
    };
    let (near, far) = (configure(near), configure(far));
    same_except_directions(&near, &far)?;
    let near_data = generate_groups(&near)?;
    let far_data = generate_groups(&far)?;

    let measured: Vec<(AnisotropicRow, AnisotropicRow)> = near_data
        .queries
        .par_iter()
        .zip(&far_data.queries)
        .map(|(a, b)| Ok((measure_query(a, "near")?, measure_query(b, "far")?)))
        .collect::<Result<_>>()?;

    let mut se_max_abs_diff: f64 = 0.0;
    let (mut multimodal_pairs, mut cd_far_greater) = (0, 0);
    for ((a, b), q) in measured.iter().zip(&near_data.queries) {
        se_max_abs_diff = se_max_abs_diff.max((a.se - b.se).abs());
        let occupied = q.labels.iter().any(|&z| z != q.labels[0]);
        if occupied {
            multimodal_pairs += 1;
            cd_far_greater += usize::from(b.cd > a.cd);
        }
    }
    let col = |f: fn(&AnisotropicRow) -> f64, far: bool| {
        mean(
            &measured
                .iter()
                .map(|(a, b)| f(if far { b } else { a }))
                .collect::<Vec<_>>(),
        )
    };
    let summary = AnisotropicSummary {
        pairs,
        se_max_abs_diff,
        multimodal_pairs,
        cd_far_greater,
        mean_cd_near: col(|r| r.cd, false),
        mean_cd_far: col(|r| r.cd, true),
        mean_bot_near: col(|r| r.bot, false),
        mean_bot_far: col(|r| r.bot, true),
        mean_v_near: col(|r| r.v, false),
        mean_v_far: col(|r| r.v, true),
    };

    let rows: Vec<AnisotropicRow> = measured.into_iter().flat_map(|(a, b)| [a, b]).collect();
    let samples: Vec<PairedSample> = rows
        .iter()
        .map(|r| PairedSample {
            query_id: r.query_id.clone(),
            measures: [("se", r.se), ("cd", r.cd), ("bot", r.bot)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            target: r.v,
        })
        .collect();
    let names: Vec<String> = ["se", "cd", "bot"].map(String::from).to_vec();
    let pairs_of_interest =
        [("cd", "se"), ("bot", "se")].map(|(a, b)| (a.to_string(), b.to_string()));
    let mut analysis = analysis.clone();
    analysis.seed = seed;
    let report = analyze(&samples, &names, &pairs_of_interest, &analysis)?;
    Ok(AnisotropicOutcome {
        rows,
        summary,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub query_id: String,
    pub se: f64,
    pub rd: f64,
    /// Population variance of the raw advantages.
    pub advantage_variance: f64,
    /// `||(1/G) sum_i A_i g_i||`.
    pub update_norm: f64,
    /// The same with RD-modulated advantages.
    pub update_norm_rd: f64,
    /// Survives SE filtering.
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub retained: usize,
    pub mean_advantage_variance: f64,
    pub mean_update_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub filter_fraction: f64,
    pub removed: usize,
    pub alpha_g: f64,
    /// Highest-SE queries removed, raw advantages.
    pub filtered: ArmSummary,
    /// Every query, raw advantages.
    pub unfiltered: ArmSummary,
    /// Every query, RD-modulated advantages.
    pub rd_modulated: ArmSummary,
    /// `filtered / rd_modulated` mean update norm; `None` when the latter is 0.
    pub ratio: Option<f64>,
    /// `filtered / unfiltered` mean update norm.
    pub ratio_to_unfiltered: Option<f64>,
    /// `rd_modulated - filtered` mean update norm.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub rows: Vec<CalibrationRow>,
    pub summary: CalibrationSummary,
}

fn mean_update(group: &crate::RolloutGroup, advantages: &[f64]) -> Result<f64> {
    let x = weighted_gradients(group, advantages)?;
    let g = x.len() as f64;
    let mut total = vec![0.0; x[0].len()];
    for v in &x {
        crate::vector::axpy(&mut total, 1.0 / g, v);
    }
    Ok(norm(&total))
}

/// Compares SE-based filtering against RD modulation on the same queries.
pub fn calibration_experiment(
    config: &SimConfig,
    n: usize,
    filter_fraction: f64,
    seed: u64,
    alpha_base: f64,
    epsilon: f64,
) -> Result<CalibrationOutcome> {
    if !(0.0..1.0).contains(&filter_fraction) {
        return Err(Error::invalid(format!(
            "filter fraction {filter_fraction} must lie in [0, 1)"
        )));
    }
    let mut config = config.clone();
    config.seed = seed;
    config.num_queries = n;
    let data = generate_groups(&config)?;
    let alpha_g = alpha_for_group(alpha_base, config.group_size as f64)?;

    let mut rows: Vec<CalibrationRow> = data
        .queries
        .par_iter()
        .map(|q| {
            let clusters = cluster_by_labels(&q.group, &q.labels)?;
            let (_, rd) = reward_dispersion(q.group.rewards(), &data.manifest);
            let adv = grpo_advantages(q.group.rewards(), epsilon);
            let w = rd_weight(rd, alpha_g)?;
            let modulated: Vec<f64> = adv.iter().map(|a| a * w).collect();
            Ok(CalibrationRow {
                query_id: q.group.query_id().to_string(),
                se: semantic_entropy(&clusters),
                rd,
                advantage_variance: trace_variance(
                    &adv.iter().map(|a| vec![*a]).collect::<Vec<_>>(),
                ),
                update_norm: mean_update(&q.group, &adv)?,
                update_norm_rd: mean_update(&q.group, &modulated)?,
                retained: true,
            })
        })
        .collect::<Result<_>>()?;

    let removed = (filter_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    if removed >= n {
        return Err(Error::invalid("filter removes every query"));
    }
    let se: Vec<f64> = rows.iter().map(|r| r.se).collect();
    let kept = trim_indices(&se, removed)?;
    for r in rows.iter_mut() {
        r.retained = false;
    }
    for &i in &kept {
        rows[i].retained = true;
    }

    let arm = |pick: &dyn Fn(&CalibrationRow) -> Option<f64>| {
        let chosen: Vec<(&CalibrationRow, f64)> = rows
            .iter()
            .filter_map(|r| pick(r).map(|x| (r, x)))
            .collect();
        ArmSummary {
            retained: chosen.len(),
            mean_advantage_variance: mean(
                &chosen
                    .iter()
                    .map(|(r, _)| r.advantage_variance)
                    .collect::<Vec<_>>(),
            ),
            mean_update_norm: mean(&chosen.iter().map(|(_, x)| *x).collect::<Vec<_>>()),
        }
    };
    let filtered = arm(&|r| r.retained.then_some(r.update_norm));
    let unfiltered = arm(&|r| Some(r.update_norm));
    let rd_modulated = arm(&|r| Some(r.update_norm_rd));
    let ratio_of = |a: f64, b: f64| (b > 0.0).then(|| a / b);
    let summary = CalibrationSummary {
        filter_fraction,
        removed,
        alpha_g,
        ratio: ratio_of(filtered.mean_update_norm, rd_modulated.mean_update_norm),
        ratio_to_unfiltered: ratio_of(filtered.mean_update_norm, unfiltered.mean_update_norm),
        gap: rd_modulated.mean_update_norm - filtered.mean_update_norm,
        filtered,
        unfiltered,
        rd_modulated,
    };
    Ok(CalibrationOutcome { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{test_config, Directions};

    fn quick() -> AnalysisConfig {
        AnalysisConfig {
            trim: 0,
            bootstrap: 200,
            ..Default::default()
        }
    }

    #[test]
    fn regimes_share_entropy() {
        let mut near = test_config();
        near.directions = Directions::Angle { degrees: 10.0 };
        near.rewards.noise = 0.1;
        let far = test_config();
        let far = SimConfig {
            rewards: near.rewards.clone(),
            ..far
        };
        let out = anisotropic_experiment(&near, &far, 60, 7, &quick()).unwrap();
        assert_eq!(out.summary.se_max_abs_diff, 0.0);
        assert_eq!(out.summary.cd_far_greater, out.summary.multimodal_pairs);
        assert!(out.summary.mean_v_far > out.summary.mean_v_near);
    }

    #[test]
    fn identical_regimes_give_null_delta_for_same_measure() {
        let c = test_config();
        let out = anisotropic_experiment(&c, &c, 40, 3, &quick()).unwrap();
        assert_eq!(out.summary.se_max_abs_diff, 0.0);
        assert!(out.rows.len() == 40);
    }

    #[test]
    fn mismatched_regimes_rejected() {
        let near = test_config();
        let mut far = test_config();
        far.modes = 3;
        far.masses = vec![0.4, 0.3, 0.3];
        far.rewards.cluster_means = vec![1.0, 0.0, 0.0];
        assert!(anisotropic_experiment(&near, &far, 10, 1, &quick()).is_err());
        let mut far = test_config();
        far.masses = vec![0.3, 0.7];
        assert!(anisotropic_experiment(&near, &far, 10, 1, &quick()).is_err());
        assert!(anisotropic_experiment(&near, &near, 11, 1, &quick()).is_err());
    }

    #[test]
    fn zero_fraction_matches_unfiltered() {
        let mut c = test_config();
        c.dirichlet_concentration = Some(1.0);
        let out = calibration_experiment(&c, 50, 0.0, 5, 0.6, 1e-6).unwrap();
        assert_eq!(out.summary.filtered, out.summary.unfiltered);
        assert!(calibration_experiment(&c, 5, 0.99, 5, 0.6, 1e-6).is_err());
    }

    #[test]
    fn constant_rewards_give_no_gap() {
        let mut c = test_config();
        c.rewards.cluster_means = vec![0.5, 0.5];
        let out = calibration_experiment(&c, 30, 0.2, 5, 0.6, 1e-6).unwrap();
        assert_eq!(out.summary.gap, 0.0);
        assert_eq!(out.summary.rd_modulated.mean_update_norm, 0.0);
        assert_eq!(out.summary.ratio, None);
    }
}
