//! Per-group pipeline commands and the statistical report.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use gcpo_core::diagnostics::{self, all_pairs, trim_indices, AnalysisConfig, PairedSample};
use gcpo_core::modulation::{self, baseline_weights, BaselineKind, BaselineNormalizers};
use gcpo_core::rollout::{load_groups, read_groups, read_jsonl};
use gcpo_core::uncertainty::{score_group, MeasureSet};
use gcpo_core::variance::variance_report;
use gcpo_core::{
    greedy_entailment_cluster, DatasetManifest, GeoKind, ModulatedAdvantages, RolloutGroup,
    UncertaintyReport, VarianceReport,
};

use crate::output::{meta, opt, write_csv, write_json, write_jsonl, RunConfig};
use crate::{
    AdvantageField, AnalyzeArgs, BaselineArg, ClusterArgs, GeoArg, ModulateArgs, ScoreArgs,
    VarianceArgs,
};

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        bail!("--entailment-threshold {t} must lie in (0, 1)");
    }
    Ok(())
}

fn groups(input: &Path, manifest: Option<&Path>) -> Result<Vec<RolloutGroup>> {
    let groups = match manifest {
        Some(m) => load_groups(input, &DatasetManifest::load(m)?)?,
        None => read_groups(input)?,
    };
    Ok(groups)
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    check_threshold(a.entailment_threshold)?;
    let measures: MeasureSet = a.measures.parse()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let groups = load_groups(&a.input, &manifest)?;
    let reports = groups
        .par_iter()
        .map(|g| score_group(g, &manifest, measures, a.entailment_threshold))
        .collect::<gcpo_core::Result<Vec<UncertaintyReport>>>()?;
    let run = RunConfig {
        entailment_threshold: a.entailment_threshold,
        ..Default::default()
    };
    write_jsonl(&a.output, &meta("score", &run, a)?, &reports)?;
    eprintln!("scored {} groups -> {}", reports.len(), a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct ClusterLine {
    query_id: String,
    labels: Vec<usize>,
    masses: Vec<f64>,
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    check_threshold(a.entailment_threshold)?;
    let groups = groups(&a.input, a.manifest.as_deref())?;
    let lines = groups
        .par_iter()
        .map(|g| {
            let c = greedy_entailment_cluster(g, a.entailment_threshold)?;
            Ok(ClusterLine {
                query_id: g.query_id().to_string(),
                labels: c.labels,
                masses: c.masses,
            })
        })
        .collect::<gcpo_core::Result<Vec<_>>>()?;
    let run = RunConfig {
        entailment_threshold: a.entailment_threshold,
        ..Default::default()
    };
    write_jsonl(&a.output, &meta("cluster", &run, a)?, &lines)?;
    eprintln!("clustered {} groups -> {}", lines.len(), a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct ModulateLine {
    #[serde(flatten)]
    advantages: ModulatedAdvantages,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<BaselineKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_advantages: Option<Vec<f64>>,
}

pub fn modulate(a: &ModulateArgs) -> Result<()> {
    check_threshold(a.entailment_threshold)?;
    if a.epsilon.is_nan() || a.epsilon <= 0.0 {
        bail!("--epsilon must be positive");
    }
    let geo = match a.geo {
        GeoArg::Cd => GeoKind::Cd,
        GeoArg::Bot => GeoKind::Bot,
    };
    let baseline = match a.baseline {
        BaselineArg::None => None,
        BaselineArg::Qhawkeye => Some(BaselineKind::Qhawkeye),
        BaselineArg::Egspo => Some(BaselineKind::Egspo),
        BaselineArg::R2vpo => Some(BaselineKind::R2vpo),
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let groups = load_groups(&a.input, &manifest)?;
    let normalizers = BaselineNormalizers::calibrate(&groups);
    let measures = MeasureSet {
        cd: geo == GeoKind::Cd,
        bot: geo == GeoKind::Bot,
        rd: true,
        ..MeasureSet::none()
    };
    let lines = groups
        .par_iter()
        .map(|g| {
            let report = score_group(g, &manifest, measures, a.entailment_threshold)?;
            let advantages = modulation::modulate(g, &report, geo, a.alpha, a.epsilon)?;
            let (weights, adjusted) = match baseline {
                Some(kind) => {
                    let w = baseline_weights(g, kind, a.alpha, a.r2vpo_lambda, &normalizers)?;
                    let adj = advantages
                        .raw_advantages
                        .iter()
                        .zip(&w)
                        .map(|(x, w)| x * w)
                        .collect();
                    (Some(w), Some(adj))
                }
                None => (None, None),
            };
            Ok(ModulateLine {
                advantages,
                baseline,
                baseline_weights: weights,
                baseline_advantages: adjusted,
            })
        })
        .collect::<gcpo_core::Result<Vec<_>>>()?;
    let run = RunConfig {
        alpha_base: a.alpha,
        epsilon: a.epsilon,
        entailment_threshold: a.entailment_threshold,
        ..Default::default()
    };
    write_jsonl(&a.output, &meta("modulate", &run, a)?, &lines)?;
    eprintln!("modulated {} groups -> {}", lines.len(), a.output.display());
    Ok(())
}

fn advantage_table(path: &Path, field: AdvantageField) -> Result<HashMap<String, Vec<f64>>> {
    let key = match field {
        AdvantageField::Raw => "raw_advantages",
        AdvantageField::Modulated => "modulated_advantages",
    };
    let mut table = HashMap::new();
    for value in read_jsonl::<serde_json::Value>(path)? {
        let id = value
            .get("query_id")
            .and_then(|v| v.as_str())
            .with_context(|| format!("{}: record without query_id", path.display()))?
            .to_string();
        let adv: Vec<f64> = serde_json::from_value(value.get(key).cloned().unwrap_or_default())
            .with_context(|| {
                format!(
                    "{}: query {id}: missing or malformed `{key}`",
                    path.display()
                )
            })?;
        if table.insert(id.clone(), adv).is_some() {
            bail!("{}: duplicate query_id {id}", path.display());
        }
    }
    Ok(table)
}

pub fn variance(a: &VarianceArgs) -> Result<()> {
    check_threshold(a.entailment_threshold)?;
    let groups = groups(&a.input, a.manifest.as_deref())?;
    let advantages = advantage_table(&a.advantages, a.advantage_field)?;
    // fail fast on inputs that cannot be clustered
    if let Some(g) = groups.iter().find(|g| g.entailment().is_err()) {
        bail!(
            "query {}: missing required field `entailment`",
            g.query_id()
        );
    }
    let reports = groups
        .par_iter()
        .map(|g| {
            let adv = advantages.get(g.query_id()).with_context(|| {
                format!(
                    "query {}: no advantages in {}",
                    g.query_id(),
                    a.advantages.display()
                )
            })?;
            if adv.len() != g.len() {
                bail!(
                    "query {}: {} advantages for {} rollouts",
                    g.query_id(),
                    adv.len(),
                    g.len()
                );
            }
            let clusters = greedy_entailment_cluster(g, a.entailment_threshold)?;
            Ok(variance_report(g, adv, &clusters)?)
        })
        .collect::<Result<Vec<VarianceReport>>>()?;
    let kept = diagnostics::trim_top_variance(&reports, a.trim_top, |r| r.v_total)?;
    let run = RunConfig {
        entailment_threshold: a.entailment_threshold,
        trim: a.trim_top,
        ..Default::default()
    };
    write_jsonl(&a.output, &meta("variance", &run, a)?, &kept)?;
    eprintln!(
        "variance for {} groups -> {}",
        kept.len(),
        a.output.display()
    );
    Ok(())
}

type Accessor = fn(&UncertaintyReport) -> Option<f64>;

const MEASURES: [(&str, Accessor); 5] = [
    ("entropy", |r| r.token_entropy),
    ("se", |r| r.semantic_entropy),
    ("cd", |r| r.cd),
    ("bot", |r| r.bot),
    ("rd", |r| r.rd),
];

fn side_file(output: &Path, suffix: &str) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    output.with_file_name(format!("{stem}.{suffix}.csv"))
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let scores: Vec<UncertaintyReport> = read_jsonl(&a.scores)?;
    let variances: Vec<VarianceReport> = read_jsonl(&a.variance)?;
    let mut v_by_id = HashMap::new();
    for v in &variances {
        if v_by_id.insert(v.query_id.as_str(), v.v_total).is_some() {
            bail!(
                "{}: duplicate query_id {}",
                a.variance.display(),
                v.query_id
            );
        }
    }
    let mut seen = BTreeSet::new();
    let mut samples = Vec::with_capacity(scores.len());
    for s in &scores {
        if !seen.insert(s.query_id.as_str()) {
            bail!("{}: duplicate query_id {}", a.scores.display(), s.query_id);
        }
        // groups trimmed out of the variance file are skipped
        let Some(&target) = v_by_id.get(s.query_id.as_str()) else {
            continue;
        };
        samples.push((s, target));
    }
    let names: Vec<String> = MEASURES
        .iter()
        .filter(|(_, get)| !samples.is_empty() && samples.iter().all(|(s, _)| get(s).is_some()))
        .map(|(n, _)| n.to_string())
        .collect();
    if names.is_empty() {
        bail!("no measure is present for every paired query");
    }
    let paired: Vec<PairedSample> = samples
        .iter()
        .map(|(s, target)| PairedSample {
            query_id: s.query_id.clone(),
            measures: MEASURES
                .iter()
                .filter(|(n, _)| names.iter().any(|x| x == n))
                .map(|(n, get)| (n.to_string(), get(s).expect("checked above")))
                .collect(),
            target: *target,
        })
        .collect();
    let config = AnalysisConfig {
        trim: a.trim_top,
        bootstrap: a.bootstrap,
        folds: a.folds,
        top_fraction: a.top_fraction,
        seed: a.seed,
        exact_p: a.exact_p,
    };
    let report = diagnostics::analyze(&paired, &names, &all_pairs(&names), &config)?;

    let run = RunConfig {
        seed: a.seed,
        bootstrap: a.bootstrap,
        trim: a.trim_top,
        folds: a.folds,
        top_fraction: a.top_fraction,
        ..Default::default()
    };
    let header = meta("analyze", &run, a)?;
    write_json(&a.output, &header, &report)?;

    let targets: Vec<f64> = paired.iter().map(|p| p.target).collect();
    let kept: BTreeSet<usize> = trim_indices(&targets, a.trim_top)?.into_iter().collect();
    let mut columns = vec!["query_id", "v"];
    columns.extend(names.iter().map(String::as_str));
    columns.push("trimmed");
    let rows: Vec<Vec<String>> = paired
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = vec![p.query_id.clone(), p.target.to_string()];
            row.extend(names.iter().map(|n| p.measures[n].to_string()));
            row.push((!kept.contains(&i)).to_string());
            row
        })
        .collect();
    write_csv(&side_file(&a.output, "scatter"), &header, &columns, &rows)?;

    let fold_rows: Vec<Vec<String>> = report
        .measures
        .iter()
        .flat_map(|m| {
            m.heldout.folds.iter().map(move |f| {
                vec![
                    m.measure.clone(),
                    f.fold.to_string(),
                    f.n_train.to_string(),
                    f.n_test.to_string(),
                    opt(f.beta0),
                    opt(f.beta1),
                    opt(f.mae),
                    opt(f.rho),
                    f.flagged.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        &side_file(&a.output, "folds"),
        &header,
        &[
            "measure", "fold", "n_train", "n_test", "beta0", "beta1", "mae", "rho", "flagged",
        ],
        &fold_rows,
    )?;
    for m in &report.measures {
        eprintln!(
            "{:>8}: rho {:+.4} (p {:.3e})  auc {:.4}  precision {:.4}",
            m.measure, m.rho, m.p_value, m.auc, m.precision
        );
    }
    eprintln!("report -> {}", a.output.display());
    Ok(())
}
