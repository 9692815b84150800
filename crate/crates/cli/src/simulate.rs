//! `simulate`: synthetic experiments driven by JSON configs.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use gcpo_core::simulator::{
    generate_groups, AblationSpec, AnisotropicSpec, CalibrationSpec, SimConfig, TrainingSpec,
};

use crate::output::{meta, write_csv, write_json, write_jsonl, RunConfig};
use crate::{Experiment, SimulateArgs};

const ANISOTROPIC: &str = include_str!("../../../configs/anisotropic.json");
const CALIBRATION: &str = include_str!("../../../configs/calibration.json");
const TRAINING: &str = include_str!("../../../configs/training.json");
const ABLATE: &str = include_str!("../../../configs/ablate.json");
const GENERATE: &str = include_str!("../../../configs/generate.json");

fn load<T: DeserializeOwned>(path: Option<&Path>, builtin: &str) -> Result<T> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(serde_json::from_str(builtin).expect("built-in config parses")),
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a, T: Serialize> {
    experiment: Experiment,
    config: &'a T,
}

pub fn run(a: &SimulateArgs) -> Result<()> {
    let dir = &a.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let config_path = a.config.as_deref();
    let header = |seed: u64, config: &serde_json::Value| -> Result<serde_json::Value> {
        let mut m = meta(
            "simulate",
            &RunConfig {
                seed,
                ..Default::default()
            },
            a,
        )?;
        m["config"]["experiment"] = config.clone();
        Ok(m)
    };
    match a.experiment {
        Experiment::Anisotropic => {
            let mut spec: AnisotropicSpec = load(config_path, ANISOTROPIC)?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let h = header(spec.seed, &serde_json::to_value(&spec)?)?;
            write_json(
                &dir.join("config.json"),
                &h,
                &ConfigEcho {
                    experiment: a.experiment,
                    config: &spec,
                },
            )?;
            let out = spec.run()?;
            write_jsonl(&dir.join("queries.jsonl"), &h, &out.rows)?;
            write_json(
                &dir.join("summary.json"),
                &h,
                &serde_json::json!({
                    "summary": out.summary,
                    "report": out.report,
                }),
            )?;
            for d in &out.report.deltas {
                eprintln!(
                    "delta rho({}) - rho({}) = {:+.4}, 95% CI [{:+.4}, {:+.4}]",
                    d.a, d.b, d.ci.observed, d.ci.lower, d.ci.upper
                );
            }
        }
        Experiment::Calibration => {
            let mut spec: CalibrationSpec = load(config_path, CALIBRATION)?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let h = header(spec.seed, &serde_json::to_value(&spec)?)?;
            write_json(
                &dir.join("config.json"),
                &h,
                &ConfigEcho {
                    experiment: a.experiment,
                    config: &spec,
                },
            )?;
            let out = spec.run()?;
            write_jsonl(&dir.join("queries.jsonl"), &h, &out.rows)?;
            write_json(&dir.join("summary.json"), &h, &out.summary)?;
            eprintln!(
                "mean update norm: filtered {:.4}, unfiltered {:.4}, rd-modulated {:.4}",
                out.summary.filtered.mean_update_norm,
                out.summary.unfiltered.mean_update_norm,
                out.summary.rd_modulated.mean_update_norm
            );
        }
        Experiment::Training => {
            let mut spec: TrainingSpec = load(config_path, TRAINING)?;
            if let Some(s) = a.seed {
                spec.reseed(s);
            }
            let h = header(spec.estimator_seed, &serde_json::to_value(&spec)?)?;
            write_json(
                &dir.join("config.json"),
                &h,
                &ConfigEcho {
                    experiment: a.experiment,
                    config: &spec,
                },
            )?;
            let out = spec.run()?;
            let lines: Vec<serde_json::Value> = [&out.grpo, &out.gcpo]
                .iter()
                .flat_map(|o| {
                    o.trajectories.iter().map(move |t| {
                        serde_json::json!({
                            "method": o.method,
                            "seed": t.seed,
                            "expected_reward": t.expected_reward,
                            "update_variance": t.update_variance,
                        })
                    })
                })
                .collect();
            write_jsonl(&dir.join("trajectories.jsonl"), &h, &lines)?;
            write_json(
                &dir.join("summary.json"),
                &h,
                &serde_json::json!({
                    "grpo": {
                        "final_reward_mean": out.grpo.final_reward_mean,
                        "final_reward_std": out.grpo.final_reward_std,
                        "mean_update_variance": out.grpo.mean_update_variance,
                    },
                    "gcpo": {
                        "final_reward_mean": out.gcpo.final_reward_mean,
                        "final_reward_std": out.gcpo.final_reward_std,
                        "mean_update_variance": out.gcpo.mean_update_variance,
                    },
                    "stability": out.stability,
                    "estimator_logits": out.estimator_logits,
                    "estimator": out.estimator,
                }),
            )?;
            eprintln!(
                "final reward std: grpo {:.5}, gcpo {:.5}",
                out.stability.grpo_final_std, out.stability.gcpo_final_std
            );
        }
        Experiment::Ablate => {
            let mut spec: AblationSpec = load(config_path, ABLATE)?;
            if let Some(s) = a.seed {
                spec.reseed(s);
            }
            let seed = spec.train.seeds.first().copied().unwrap_or_default();
            let h = header(seed, &serde_json::to_value(&spec)?)?;
            write_json(
                &dir.join("config.json"),
                &h,
                &ConfigEcho {
                    experiment: a.experiment,
                    config: &spec,
                },
            )?;
            let rows = spec.run()?;
            write_jsonl(&dir.join("rows.jsonl"), &h, &rows)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.alpha_base.to_string(),
                        r.final_reward_mean.to_string(),
                        r.final_reward_std.to_string(),
                        r.mean_update_variance.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &dir.join("ablation.csv"),
                &h,
                &[
                    "alpha_base",
                    "final_reward_mean",
                    "final_reward_std",
                    "mean_update_variance",
                ],
                &table,
            )?;
            write_json(
                &dir.join("summary.json"),
                &h,
                &serde_json::json!({ "rows": rows }),
            )?;
            eprintln!("{} ablation rows", rows.len());
        }
        Experiment::Generate => {
            let mut config: SimConfig = load(config_path, GENERATE)?;
            if let Some(s) = a.seed {
                config.seed = s;
            }
            let h = header(config.seed, &serde_json::to_value(&config)?)?;
            write_json(
                &dir.join("config.json"),
                &h,
                &ConfigEcho {
                    experiment: a.experiment,
                    config: &config,
                },
            )?;
            let data = generate_groups(&config)?;
            let records: Vec<_> = data.queries.iter().map(|q| q.group.to_record()).collect();
            write_jsonl(&dir.join("groups.jsonl"), &h, &records)?;
            let labels: Vec<serde_json::Value> = data
                .queries
                .iter()
                .map(|q| serde_json::json!({"query_id": q.group.query_id(), "labels": q.labels, "masses": q.masses}))
                .collect();
            write_jsonl(&dir.join("labels.jsonl"), &h, &labels)?;
            write_json(&dir.join("manifest.json"), &h, &data.manifest)?;
            eprintln!(
                "{} groups -> {}",
                records.len(),
                dir.join("groups.jsonl").display()
            );
        }
    }
    Ok(())
}
