//! File-level experiment definitions, as loaded from JSON configs.

use serde::{Deserialize, Serialize};

use super::training::{estimator_check, toy_training, Method, ToyTask};
use super::{
    alpha_ablation, anisotropic_experiment, calibration_experiment, AblationRow,
    AnisotropicOutcome, CalibrationOutcome, EstimatorCheck, SimConfig, TrainConfig, TrainOutcome,
};
use crate::diagnostics::AnalysisConfig;
use crate::seed::rng_for;
use crate::Result;

fn default_alpha() -> f64 {
    crate::DEFAULT_ALPHA_BASE
}

fn default_epsilon() -> f64 {
    crate::DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicSpec {
    pub near: SimConfig,
    pub far: SimConfig,
    /// Pooled sample size; half as many query seeds.
    pub queries: usize,
    pub seed: u64,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl AnisotropicSpec {
    pub fn run(&self) -> Result<AnisotropicOutcome> {
        anisotropic_experiment(
            &self.near,
            &self.far,
            self.queries,
            self.seed,
            &self.analysis,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub sim: SimConfig,
    pub queries: usize,
    pub filter_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha_base: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl CalibrationSpec {
    pub fn run(&self) -> Result<CalibrationOutcome> {
        calibration_experiment(
            &self.sim,
            self.queries,
            self.filter_fraction,
            self.seed,
            self.alpha_base,
            self.epsilon,
        )
    }
}

fn default_rollouts() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    #[serde(default)]
    pub train: TrainConfig,
    /// Rollouts for the gradient-estimator check.
    #[serde(default = "default_rollouts")]
    pub estimator_rollouts: usize,
    #[serde(default)]
    pub estimator_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub grpo_final_std: f64,
    pub gcpo_final_std: f64,
    /// `gcpo_final_std <= grpo_final_std`.
    pub gcpo_not_less_stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub grpo: TrainOutcome,
    pub gcpo: TrainOutcome,
    pub stability: StabilitySummary,
    pub estimator_logits: Vec<f64>,
    pub estimator: EstimatorCheck,
}

impl TrainingSpec {
    /// Replaces the training seeds by `seed, seed + 1, ...` (same count) and
    /// the estimator seed by `seed`.
    pub fn reseed(&mut self, seed: u64) {
        let n = self.train.seeds.len() as u64;
        self.train.seeds = (seed..seed + n).collect();
        self.estimator_seed = seed;
    }

    /// Trains plain and modulated policies on identical seeds, then checks
    /// the score-function estimator at seeded logits on the first query.
    pub fn run(&self) -> Result<TrainingReport> {
        let grpo = toy_training(&TrainConfig {
            method: Method::Grpo,
            ..self.train.clone()
        })?;
        let gcpo = toy_training(&TrainConfig {
            method: Method::Gcpo,
            ..self.train.clone()
        })?;
        let task = ToyTask::build(&self.train)?;
        let mut rng = rng_for(self.estimator_seed, &[0x10_9175]);
        let logits: Vec<f64> = (0..self.train.answers_per_query)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
            .collect();
        let estimator = estimator_check(
            &self.train,
            &task,
            0,
            &logits,
            self.estimator_rollouts,
            self.estimator_seed,
        )?;
        Ok(TrainingReport {
            stability: StabilitySummary {
                grpo_final_std: grpo.final_reward_std,
                gcpo_final_std: gcpo.final_reward_std,
                gcpo_not_less_stable: gcpo.final_reward_std <= grpo.final_reward_std,
            },
            grpo,
            gcpo,
            estimator_logits: logits,
            estimator,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    #[serde(default)]
    pub train: TrainConfig,
    pub alpha_grid: Vec<f64>,
}

impl AblationSpec {
    pub fn reseed(&mut self, seed: u64) {
        let n = self.train.seeds.len() as u64;
        self.train.seeds = (seed..seed + n).collect();
    }

    pub fn run(&self) -> Result<Vec<AblationRow>> {
        alpha_ablation(&self.train, &self.alpha_grid)
    }
}
