//! Synthetic rollout groups with a controlled semantic-gradient geometry.
//!
//! Each query mixes `K` semantic modes with unit directions `u_k`. A rollout
//! in mode `k` has embedding `normalize(u_k + sigma_e * n)` and score gradient
//!
//! ```text
//! g = sigma_L * L (e - e_bar) + xi,    xi ~ U[-eta, eta]^m
//! ```
//!
//! where `L` has orthonormal columns and `e_bar = sum_k Pi_k u_k` is the
//! policy's mean direction. Hence `||g_i - g_j|| <= sigma_L ||e_i - e_j|| +
//! 2 eta sqrt(m)`, and since `||e_i - e_j||^2 = 2 (1 - cos)`, gradients are
//! Lipschitz in cosine distance with `L_g^2 = 2 sigma_L^2` up to the noise.

mod experiments;
mod suite;
mod training;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use experiments::{
    anisotropic_experiment, calibration_experiment, AnisotropicOutcome, AnisotropicRow,
    AnisotropicSummary, ArmSummary, CalibrationOutcome, CalibrationRow, CalibrationSummary,
};
pub use suite::{
    AblationSpec, AnisotropicSpec, CalibrationSpec, StabilitySummary, TrainingReport, TrainingSpec,
};
pub use training::{
    alpha_ablation, analytic_gradient, estimator_check, expected_reward, policy, toy_training,
    AblationRow, EstimatorCheck, Method, ToyQuery, ToyTask, TrainConfig, TrainOutcome, Trajectory,
};

use crate::rollout::{DatasetManifest, RolloutGroup};
use crate::seed::rng_for;
use crate::vector::{axpy, dot, norm, normalize_embedding, scaled};
use crate::{Error, Result};

/// Entailment between rollouts sharing a ground-truth mode.
pub const WITHIN_ENTAILMENT: f64 = 0.9;
/// Entailment between rollouts of different modes.
pub const ACROSS_ENTAILMENT: f64 = 0.05;

const MAX_REJECTION_ATTEMPTS: usize = 10_000;

// Stream identifiers for `rng_for(seed, [stream, ...])`.
const STREAM_DIRECTIONS: u64 = 1;
const STREAM_GRAD_MAP: u64 = 2;
const STREAM_QUERY: u64 = 3;
const SUB_MASSES: u64 = 0;
const SUB_LABELS: u64 = 1;
const SUB_EMBED: u64 = 2;
const SUB_GRAD: u64 = 3;
const SUB_REWARD: u64 = 4;

/// How the `K` mode directions are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directions {
    /// Equiangular directions with the given pairwise angle.
    Angle { degrees: f64 },
    /// Gaussian directions redrawn until every pair is at least this far apart.
    Random { min_angle_degrees: f64 },
    /// Caller-supplied directions, normalized on use.
    Explicit { vectors: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    /// Mean reward of each mode.
    pub cluster_means: Vec<f64>,
    /// Standard deviation of additive Gaussian reward noise.
    pub noise: f64,
    /// Rewards are clipped into this range after noise.
    #[serde(default = "unit_range")]
    pub range: [f64; 2],
}

fn unit_range() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub group_size: usize,
    pub embedding_dim: usize,
    pub grad_dim: usize,
    pub modes: usize,
    pub directions: Directions,
    pub masses: Vec<f64>,
    /// `sigma_e`, embedding-space noise scale.
    pub intra_noise: f64,
    /// `sigma_L`, spectral scale of the gradient map.
    pub grad_scale: f64,
    /// `eta`, half-width of the per-coordinate gradient noise.
    #[serde(default)]
    pub grad_noise: f64,
    pub rewards: RewardModel,
    pub seed: u64,
    pub num_queries: usize,
    /// When set, each query draws its own masses from a Dirichlet with
    /// parameters `concentration * K * Pi_k` (mean `Pi`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dirichlet_concentration: Option<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.group_size < 2 {
            return bad(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            ));
        }
        if self.modes == 0 || self.embedding_dim == 0 || self.num_queries == 0 {
            return bad("modes, embedding_dim and num_queries must be positive".into());
        }
        if self.grad_dim < self.embedding_dim {
            return bad(format!(
                "grad_dim {} must be at least embedding_dim {}",
                self.grad_dim, self.embedding_dim
            ));
        }
        if self.masses.len() != self.modes || self.rewards.cluster_means.len() != self.modes {
            return bad(format!(
                "masses and cluster_means need {} entries",
                self.modes
            ));
        }
        if self.masses.iter().any(|p| !(*p >= 0.0))
            || (self.masses.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "masses {:?} are not a probability vector",
                self.masses
            ));
        }
        for (name, x) in [
            ("intra_noise", self.intra_noise),
            ("grad_scale", self.grad_scale),
            ("grad_noise", self.grad_noise),
            ("reward noise", self.rewards.noise),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return bad(format!(
                    "{name} must be a finite non-negative number, got {x}"
                ));
            }
        }
        let [lo, hi] = self.rewards.range;
        if !(lo < hi) {
            return bad(format!("reward range [{lo}, {hi}] is empty"));
        }
        if self
            .rewards
            .cluster_means
            .iter()
            .any(|r| *r < lo || *r > hi)
        {
            return bad("cluster_means must lie in the reward range".into());
        }
        if let Some(c) = self.dirichlet_concentration {
            if !(c > 0.0 && c.is_finite()) || self.masses.iter().any(|p| *p <= 0.0) {
                return bad(
                    "dirichlet_concentration needs c > 0 and strictly positive masses".into(),
                );
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        DatasetManifest::new(self.rewards.range, self.embedding_dim, self.group_size)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        if let Ok(u) = normalize_embedding(&v) {
            return u;
        }
    }
}

fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// The `K` unit mode directions for a config.
pub fn mode_directions(config: &SimConfig) -> Result<Vec<Vec<f64>>> {
    let (k, d) = (config.modes, config.embedding_dim);
    match &config.directions {
        Directions::Angle { degrees } => equiangular(k, d, *degrees),
        Directions::Random { min_angle_degrees } => {
            let theta = *min_angle_degrees;
            if !(theta > 0.0 && theta <= 180.0) {
                return Err(Error::invalid(format!(
                    "min angle {theta} must lie in (0, 180]"
                )));
            }
            let max_cos = theta.to_radians().cos();
            let mut rng = rng_for(config.seed, &[STREAM_DIRECTIONS]);
            for _ in 0..MAX_REJECTION_ATTEMPTS {
                let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
                let mut ok = true;
                while dirs.len() < k && ok {
                    let v = random_unit(&mut rng, d);
                    ok = dirs.iter().all(|u| dot(u, &v) <= max_cos + 1e-12);
                    dirs.push(v);
                }
                if ok {
                    return Ok(dirs);
                }
            }
            Err(Error::invalid(format!(
                "could not place {k} directions {theta} degrees apart in dimension {d}"
            )))
        }
        Directions::Explicit { vectors } => {
            if vectors.len() != k || vectors.iter().any(|v| v.len() != d) {
                return Err(Error::invalid(format!(
                    "explicit directions must be {k} vectors of length {d}"
                )));
            }
            vectors.iter().map(|v| normalize_embedding(v)).collect()
        }
    }
}

fn equiangular(k: usize, d: usize, degrees: f64) -> Result<Vec<Vec<f64>>> {
    if !(degrees > 0.0 && degrees <= 180.0) {
        return Err(Error::invalid(format!(
            "angle {degrees} must lie in (0, 180]"
        )));
    }
    let theta = degrees.to_radians();
    match k {
        1 => Ok(vec![basis(d, 0)]),
        2 => {
            if d < 2 {
                return Err(Error::invalid("two modes need embedding_dim >= 2"));
            }
            let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
            let mut a = vec![0.0; d];
            let mut b = vec![0.0; d];
            a[0] = c;
            a[1] = s;
            b[0] = c;
            b[1] = -s;
            Ok(vec![a, b])
        }
        _ => {
            let cos = theta.cos();
            if cos < -1e-12 {
                return Err(Error::invalid(format!(
                    "equiangular placement of {k} modes supports angles up to 90 degrees"
                )));
            }
            let cos = cos.max(0.0);
            let need = if cos > 0.0 { k + 1 } else { k };
            if d < need {
                return Err(Error::invalid(format!(
                    "{k} modes at {degrees} degrees need embedding_dim >= {need}"
                )));
            }
            Ok((0..k)
                .map(|i| {
                    let mut v = scaled(&basis(d, i), (1.0 - cos).sqrt());
                    if cos > 0.0 {
                        v[k] = cos.sqrt();
                    }
                    v
                })
                .collect())
        }
    }
}

/// `sigma_L` times an `m x d` map with orthonormal columns, stored by column.
pub fn gradient_map(config: &SimConfig) -> Vec<Vec<f64>> {
    let mut rng = rng_for(config.seed, &[STREAM_GRAD_MAP]);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(config.embedding_dim);
    while cols.len() < config.embedding_dim {
        let mut v = gaussian(&mut rng, config.grad_dim);
        for c in &cols {
            let p = dot(c, &v);
            axpy(&mut v, -p, c);
        }
        let n = norm(&v);
        if n > 1e-6 {
            cols.push(scaled(&v, 1.0 / n));
        }
    }
    cols.into_iter()
        .map(|c| scaled(&c, config.grad_scale))
        .collect()
}

fn apply_map(map: &[Vec<f64>], x: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (col, &xi) in map.iter().zip(x) {
        axpy(&mut out, xi, col);
    }
    out
}

/// One generated query with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimQuery {
    pub group: RolloutGroup,
    pub labels: Vec<usize>,
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub manifest: DatasetManifest,
    pub directions: Vec<Vec<f64>>,
    pub queries: Vec<SimQuery>,
}

impl SimDataset {
    pub fn groups(&self) -> Vec<RolloutGroup> {
        self.queries.iter().map(|q| q.group.clone()).collect()
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, alphas: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / alphas.len() as f64; alphas.len()]
    }
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return k;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Synthetic entailment: high within a true mode, low across modes.
pub fn synthetic_entailment(labels: &[usize]) -> Vec<Vec<f64>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, a)| {
            labels
                .iter()
                .enumerate()
                .map(|(j, b)| match (i == j, a == b) {
                    (true, _) => 1.0,
                    (false, true) => WITHIN_ENTAILMENT,
                    (false, false) => ACROSS_ENTAILMENT,
                })
                .collect()
        })
        .collect()
}

fn generate_query(
    config: &SimConfig,
    directions: &[Vec<f64>],
    map: &[Vec<f64>],
    q: usize,
) -> Result<SimQuery> {
    let stream = |sub| rng_for(config.seed, &[STREAM_QUERY, q as u64, sub]);
    let masses = match config.dirichlet_concentration {
        Some(c) => {
            let k = config.modes as f64;
            let alphas: Vec<f64> = config.masses.iter().map(|p| c * k * p).collect();
            dirichlet(&mut stream(SUB_MASSES), &alphas)
        }
        None => config.masses.clone(),
    };
    let g = config.group_size;
    let mut label_rng = stream(SUB_LABELS);
    let labels: Vec<usize> = (0..g)
        .map(|_| categorical(&mut label_rng, &masses))
        .collect();

    let mut embed_rng = stream(SUB_EMBED);
    let embeddings = labels
        .iter()
        .map(|&k| {
            if config.intra_noise == 0.0 {
                return Ok(directions[k].clone());
            }
            let mut v = directions[k].clone();
            axpy(
                &mut v,
                config.intra_noise,
                &gaussian(&mut embed_rng, config.embedding_dim),
            );
            normalize_embedding(&v)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut e_bar = vec![0.0; config.embedding_dim];
    for (p, u) in masses.iter().zip(directions) {
        axpy(&mut e_bar, *p, u);
    }
    let mut grad_rng = stream(SUB_GRAD);
    let eta = config.grad_noise;
    let grads: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| {
            let centered: Vec<f64> = e.iter().zip(&e_bar).map(|(a, b)| a - b).collect();
            let mut grad = apply_map(map, &centered, config.grad_dim);
            if eta > 0.0 {
                for x in grad.iter_mut() {
                    *x += grad_rng.random_range(-eta..=eta);
                }
            }
            grad
        })
        .collect();

    let mut reward_rng = stream(SUB_REWARD);
    let [lo, hi] = config.rewards.range;
    let rewards: Vec<f64> = labels
        .iter()
        .map(|&k| {
            let noise: f64 = StandardNormal.sample(&mut reward_rng);
            (config.rewards.cluster_means[k] + config.rewards.noise * noise).clamp(lo, hi)
        })
        .collect();

    let answers = labels
        .iter()
        .enumerate()
        .map(|(i, k)| format!("mode{k}-{i}"))
        .collect();
    let group = RolloutGroup::new(format!("sim-{q:05}"), answers, embeddings, rewards)?
        .with_grads(grads)?
        .with_entailment(synthetic_entailment(&labels))?;
    Ok(SimQuery {
        group,
        labels,
        masses,
    })
}

/// Generates `num_queries` groups; a pure function of the config.
pub fn generate_groups(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let directions = mode_directions(config)?;
    let map = gradient_map(config);
    let queries = (0..config.num_queries)
        .into_par_iter()
        .map(|q| generate_query(config, &directions, &map, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimDataset {
        manifest: config.manifest()?,
        directions,
        queries,
    })
}

#[cfg(test)]
pub(crate) fn test_config() -> SimConfig {
    SimConfig {
        group_size: 16,
        embedding_dim: 8,
        grad_dim: 12,
        modes: 2,
        directions: Directions::Angle { degrees: 90.0 },
        masses: vec![0.5, 0.5],
        intra_noise: 0.0,
        grad_scale: 1.0,
        grad_noise: 0.0,
        rewards: RewardModel {
            cluster_means: vec![1.0, 0.0],
            noise: 0.0,
            range: [0.0, 1.0],
        },
        seed: 42,
        num_queries: 20,
        dirichlet_concentration: None,
    }
}
