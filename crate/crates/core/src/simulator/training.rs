//! Toy policy-gradient training on per-query softmax policies.
//!
//! Each query has a fixed set of answers, each with an embedding, a semantic
//! mode and a success probability. A step samples `G` answers per query at
//! temperature `T`, draws Bernoulli rewards, forms group-normalized advantages
//! (optionally modulated) and applies the score-function update
//!
//! ```text
//! theta += lr * (1/G) sum_i A_i (onehot(a_i) - pi) / T
//! ```
//!
//! The expected reward `J = sum_a pi_a p_a` has gradient `pi * (p - J) / T`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{categorical, equiangular};
use crate::clustering::cluster_by_labels;
use crate::modulation::{
    alpha_for_group, apply_weights, geo_weight, grpo_advantages, rd_weight, GeoKind,
};
use crate::rollout::{DatasetManifest, RolloutGroup};
use crate::seed::rng_for;
use crate::stats::{mean, sample_std_dev};
use crate::uncertainty::{barycentric_transport, cosine_dispersion, reward_dispersion};
use crate::variance::trace_variance;
use crate::vector::{axpy, normalize_embedding};
use crate::{Error, Result};

const STREAM_TASK: u64 = 10;
const STREAM_TRAIN: u64 = 11;
const STREAM_CHECK: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grpo,
    Gcpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub num_queries: usize,
    pub answers_per_query: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub group_size: usize,
    pub temperature: f64,
    pub alpha_base: f64,
    pub geo_kind: GeoKind,
    pub method: Method,
    pub seeds: Vec<u64>,
    /// Seeds the task (answer embeddings and success rates), shared by all runs.
    pub task_seed: u64,
    pub embedding_dim: usize,
    pub modes: usize,
    pub mode_angle_degrees: f64,
    /// Mean success probability of each mode's answers.
    pub mode_success: Vec<f64>,
    /// Half-width of the uniform spread of answer success around its mode.
    pub success_jitter: f64,
    /// Scale of the Gaussian perturbation of answer embeddings.
    pub embedding_jitter: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_queries: 8,
            answers_per_query: 6,
            learning_rate: 0.5,
            steps: 60,
            group_size: 16,
            temperature: 0.9,
            alpha_base: crate::DEFAULT_ALPHA_BASE,
            geo_kind: GeoKind::Bot,
            method: Method::Gcpo,
            seeds: (0..10).collect(),
            task_seed: 7,
            embedding_dim: 8,
            modes: 2,
            mode_angle_degrees: 90.0,
            mode_success: vec![0.7, 0.3],
            success_jitter: 0.2,
            embedding_jitter: 0.1,
            epsilon: crate::DEFAULT_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.num_queries == 0 || self.answers_per_query == 0 || self.steps == 0 {
            return bad("num_queries, answers_per_query and steps must be positive");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.learning_rate > 0.0) || !(self.temperature > 0.0) {
            return bad("learning_rate and temperature must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.modes == 0 || self.mode_success.len() != self.modes {
            return bad("mode_success needs one entry per mode");
        }
        if self.mode_success.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("mode_success entries must be probabilities");
        }
        if !(self.alpha_base >= 0.0)
            || !(self.success_jitter >= 0.0)
            || !(self.embedding_jitter >= 0.0)
        {
            return bad("alpha_base and jitters must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyQuery {
    pub embeddings: Vec<Vec<f64>>,
    pub modes: Vec<usize>,
    /// Success probability of each answer.
    pub success: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub queries: Vec<ToyQuery>,
    manifest: DatasetManifest,
}

impl ToyTask {
    pub fn build(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let dirs = equiangular(
            config.modes,
            config.embedding_dim,
            config.mode_angle_degrees,
        )?;
        let queries = (0..config.num_queries)
            .map(|q| {
                let mut rng = rng_for(config.task_seed, &[STREAM_TASK, q as u64]);
                let modes: Vec<usize> = (0..config.answers_per_query)
                    .map(|a| a % config.modes)
                    .collect();
                let mut embeddings = Vec::with_capacity(modes.len());
                let mut success = Vec::with_capacity(modes.len());
                for &k in &modes {
                    let mut e = dirs[k].clone();
                    let noise: Vec<f64> = (0..config.embedding_dim)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    axpy(&mut e, config.embedding_jitter, &noise);
                    embeddings.push(normalize_embedding(&e)?);
                    let j = config.success_jitter;
                    let spread = if j > 0.0 {
                        rng.random_range(-j..=j)
                    } else {
                        0.0
                    };
                    success.push((config.mode_success[k] + spread).clamp(0.0, 1.0));
                }
                Ok(ToyQuery {
                    embeddings,
                    modes,
                    success,
                })
            })
            .collect::<Result<_>>()?;
        let manifest = DatasetManifest::new([0.0, 1.0], config.embedding_dim, config.group_size)?;
        Ok(Self { queries, manifest })
    }
}

/// Softmax of `theta / T`.
pub fn policy(theta: &[f64], temperature: f64) -> Vec<f64> {
    let max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta
        .iter()
        .map(|t| ((t - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

pub fn expected_reward(pi: &[f64], success: &[f64]) -> f64 {
    pi.iter().zip(success).map(|(p, s)| p * s).sum()
}

/// Exact gradient of the expected reward with respect to the logits.
pub fn analytic_gradient(theta: &[f64], success: &[f64], temperature: f64) -> Vec<f64> {
    let pi = policy(theta, temperature);
    let j = expected_reward(&pi, success);
    pi.iter()
        .zip(success)
        .map(|(p, s)| p * (s - j) / temperature)
        .collect()
}

struct Sampled {
    answers: Vec<usize>,
    rewards: Vec<f64>,
}

fn sample_group(rng: &mut ChaCha8Rng, pi: &[f64], success: &[f64], g: usize) -> Sampled {
    let answers: Vec<usize> = (0..g).map(|_| categorical(rng, pi)).collect();
    let rewards = answers
        .iter()
        .map(|&a| {
            if rng.random::<f64>() < success[a] {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Sampled { answers, rewards }
}

/// `w_geo * w_rd` for a sampled group, clustering by the answers' modes.
fn group_weight(
    task: &ToyTask,
    q: usize,
    s: &Sampled,
    geo_kind: GeoKind,
    alpha_g: f64,
) -> Result<(f64, f64)> {
    let query = &task.queries[q];
    let group = RolloutGroup::new(
        format!("toy-{q}"),
        s.answers.iter().map(|a| a.to_string()).collect(),
        s.answers
            .iter()
            .map(|&a| query.embeddings[a].clone())
            .collect(),
        s.rewards.clone(),
    )?;
    let labels: Vec<usize> = s.answers.iter().map(|&a| query.modes[a]).collect();
    let score = match geo_kind {
        GeoKind::Cd => cosine_dispersion(&group),
        GeoKind::Bot => barycentric_transport(&cluster_by_labels(&group, &labels)?),
    };
    let (_, rd) = reward_dispersion(&s.rewards, &task.manifest);
    Ok((geo_weight(score, alpha_g), rd_weight(rd, alpha_g)?))
}

fn score_terms(answers: &[usize], coeffs: &[f64], pi: &[f64], temperature: f64) -> Vec<Vec<f64>> {
    answers
        .iter()
        .zip(coeffs)
        .map(|(&a, c)| {
            pi.iter()
                .enumerate()
                .map(|(b, p)| c * (f64::from(u8::from(a == b)) - p) / temperature)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    /// Mean expected reward over queries, before each step and after the last.
    pub expected_reward: Vec<f64>,
    /// Mean over queries of the trace-variance of per-rollout update terms.
    pub update_variance: Vec<f64>,
}

impl Trajectory {
    pub fn final_reward(&self) -> f64 {
        *self.expected_reward.last().expect("non-empty trajectory")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub method: Method,
    pub alpha_base: f64,
    pub trajectories: Vec<Trajectory>,
    pub final_reward_mean: f64,
    /// Sample standard deviation across seeds.
    pub final_reward_std: f64,
    pub mean_update_variance: f64,
}

fn run_seed(config: &TrainConfig, task: &ToyTask, seed: u64) -> Result<Trajectory> {
    let alpha_g = alpha_for_group(config.alpha_base, config.group_size as f64)?;
    let mut thetas = vec![vec![0.0; config.answers_per_query]; config.num_queries];
    let reward_now = |thetas: &[Vec<f64>]| {
        mean(
            &thetas
                .iter()
                .zip(&task.queries)
                .map(|(t, q)| expected_reward(&policy(t, config.temperature), &q.success))
                .collect::<Vec<_>>(),
        )
    };
    let mut expected = vec![reward_now(&thetas)];
    let mut variances = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut step_var = Vec::with_capacity(config.num_queries);
        for (q, theta) in thetas.iter_mut().enumerate() {
            let mut rng = rng_for(seed, &[STREAM_TRAIN, step as u64, q as u64]);
            let pi = policy(theta, config.temperature);
            let s = sample_group(&mut rng, &pi, &task.queries[q].success, config.group_size);
            let raw = grpo_advantages(&s.rewards, config.epsilon);
            let adv = match config.method {
                Method::Grpo => raw,
                Method::Gcpo => {
                    let (wg, wr) = group_weight(task, q, &s, config.geo_kind, alpha_g)?;
                    apply_weights(&raw, wg, wr)
                }
            };
            let terms = score_terms(&s.answers, &adv, &pi, config.temperature);
            step_var.push(trace_variance(&terms));
            let scale = config.learning_rate / config.group_size as f64;
            for t in &terms {
                axpy(theta, scale, t);
            }
        }
        variances.push(mean(&step_var));
        expected.push(reward_now(&thetas));
    }
    Ok(Trajectory {
        seed,
        expected_reward: expected,
        update_variance: variances,
    })
}

/// Trains one policy per seed; seeds run in parallel, results in seed order.
pub fn toy_training(config: &TrainConfig) -> Result<TrainOutcome> {
    let task = ToyTask::build(config)?;
    let trajectories = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, &task, s))
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<f64> = trajectories.iter().map(Trajectory::final_reward).collect();
    let var_means: Vec<f64> = trajectories
        .iter()
        .map(|t| mean(&t.update_variance))
        .collect();
    Ok(TrainOutcome {
        method: config.method,
        alpha_base: config.alpha_base,
        final_reward_mean: mean(&finals),
        final_reward_std: if finals.len() > 1 {
            sample_std_dev(&finals)
        } else {
            0.0
        },
        mean_update_variance: mean(&var_means),
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub alpha_base: f64,
    pub final_reward_mean: f64,
    pub final_reward_std: f64,
    pub mean_update_variance: f64,
}

/// Runs modulated training once per `alpha_base` in the grid.
pub fn alpha_ablation(config: &TrainConfig, grid: &[f64]) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    grid.iter()
        .map(|&alpha| {
            let cfg = TrainConfig {
                alpha_base: alpha,
                method: Method::Gcpo,
                ..config.clone()
            };
            let out = toy_training(&cfg)?;
            Ok(AblationRow {
                alpha_base: alpha,
                final_reward_mean: out.final_reward_mean,
                final_reward_std: out.final_reward_std,
                mean_update_variance: out.mean_update_variance,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCheck {
    pub rollouts: usize,
    pub groups: usize,
    pub analytic: Vec<f64>,
    pub unmodulated_mean: Vec<f64>,
    pub unmodulated_se: Vec<f64>,
    /// Largest `|mean - analytic| / se` over coordinates.
    pub unmodulated_max_z: f64,
    pub modulated_mean: Vec<f64>,
    pub modulated_se: Vec<f64>,
    pub modulated_max_z: f64,
    pub modulated_bias_norm: f64,
    pub weight_min: f64,
    pub weight_max: f64,
}

fn mean_and_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    (0..dim)
        .map(|j| {
            let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            (mean(&col), sample_std_dev(&col) / n.sqrt())
        })
        .unzip()
}

fn max_z(mean: &[f64], se: &[f64], target: &[f64]) -> f64 {
    mean.iter()
        .zip(se)
        .zip(target)
        .map(|((m, s), t)| {
            let d = (m - t).abs();
            if *s > 0.0 {
                d / s
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Compares sampled score-function gradients with the exact gradient at fixed
/// logits.
///
/// The unmodulated estimator uses the leave-in group-mean baseline with a
/// `G / (G - 1)` correction, which makes it unbiased. The modulated estimator
/// multiplies each group's estimate by its `w_geo * w_rd`.
pub fn estimator_check(
    config: &TrainConfig,
    task: &ToyTask,
    query: usize,
    theta: &[f64],
    rollouts: usize,
    seed: u64,
) -> Result<EstimatorCheck> {
    let q = task
        .queries
        .get(query)
        .ok_or_else(|| Error::invalid(format!("query {query} out of range")))?;
    if theta.len() != q.success.len() {
        return Err(Error::DimensionMismatch {
            expected: q.success.len(),
            actual: theta.len(),
            context: "logits".into(),
        });
    }
    let g = config.group_size;
    let groups = rollouts / g;
    if groups < 2 {
        return Err(Error::invalid("need at least two groups of rollouts"));
    }
    let alpha_g = alpha_for_group(config.alpha_base, g as f64)?;
    let pi = policy(theta, config.temperature);
    let correction = g as f64 / (g as f64 - 1.0);
    let draws: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..groups)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, &[STREAM_CHECK, b as u64]);
            let s = sample_group(&mut rng, &pi, &q.success, g);
            let r_bar = mean(&s.rewards);
            let centered: Vec<f64> = s.rewards.iter().map(|r| (r - r_bar) * correction).collect();
            let terms = score_terms(&s.answers, &centered, &pi, config.temperature);
            let mut est = vec![0.0; pi.len()];
            for t in &terms {
                axpy(&mut est, 1.0 / g as f64, t);
            }
            let (wg, wr) = group_weight(task, query, &s, config.geo_kind, alpha_g)?;
            let w = wg * wr;
            let modulated = est.iter().map(|x| x * w).collect();
            Ok((est, modulated, w))
        })
        .collect::<Result<_>>()?;
    let plain: Vec<Vec<f64>> = draws.iter().map(|d| d.0.clone()).collect();
    let weighted: Vec<Vec<f64>> = draws.iter().map(|d| d.1.clone()).collect();
    let analytic = analytic_gradient(theta, &q.success, config.temperature);
    let (um, us) = mean_and_se(&plain);
    let (mm, ms) = mean_and_se(&weighted);
    let bias: Vec<f64> = mm.iter().zip(&analytic).map(|(m, a)| m - a).collect();
    Ok(EstimatorCheck {
        rollouts: groups * g,
        groups,
        unmodulated_max_z: max_z(&um, &us, &analytic),
        modulated_max_z: max_z(&mm, &ms, &analytic),
        modulated_bias_norm: crate::vector::norm(&bias),
        weight_min: draws.iter().map(|d| d.2).fold(f64::INFINITY, f64::min),
        weight_max: draws.iter().map(|d| d.2).fold(f64::NEG_INFINITY, f64::max),
        analytic,
        unmodulated_mean: um,
        unmodulated_se: us,
        modulated_mean: mm,
        modulated_se: ms,
    })
}
