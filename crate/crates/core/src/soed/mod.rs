//! Actor-critic policy-gradient training of sequential design policies.
//!
//! A shared policy network maps `(k, I_k)` to a design and a Q-network maps
//! `(k, I_k, d_k)` to the expected remaining reward. Each iteration simulates
//! episodes with exploration noise, regresses the Q-network on one-step
//! lookahead targets and ascends the policy along `∇_w μ · ∇_d Q`.

mod evaluate;
mod learn;
mod networks;
mod simulate;
mod train;

pub use evaluate::{evaluate_policy, mean_and_se, Evaluation, Histogram, HISTOGRAM_BINS};
pub use learn::{
    fit_q, policy_gradient, q_loss_and_grads, q_target_breakdown, QBatch, TargetTerms,
};
pub use networks::{Critic, DesignPolicy, FnPolicy, Policy, QNetwork};
pub use simulate::{
    episode_rewards, simulate_episodes, stage_reward, terminal_reward, RewardFormulation,
    SimulationConfig, ThetaSampling,
};
pub use train::{train, train_with, IterationRecord, TrainOutcome, TrainTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    /// Full sequential design with one-step lookahead Q targets.
    #[default]
    Soed,
    /// Static designs: the policy sees the stage one-hot only.
    Batch,
    /// Myopic designs: Q targets keep only the immediate reward.
    Greedy,
}

impl std::str::FromStr for DesignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soed" => Ok(DesignMode::Soed),
            "batch" => Ok(DesignMode::Batch),
            "greedy" => Ok(DesignMode::Greedy),
            other => Err(Error::Config(format!("unknown design mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for DesignMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DesignMode::Soed => "soed",
            DesignMode::Batch => "batch",
            DesignMode::Greedy => "greedy",
        })
    }
}

/// Inner Q-regression schedule: Adam steps per outer iteration, warm-started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFitConfig {
    pub steps: usize,
    pub lr: f64,
    /// Episodes per step; `None` uses every episode.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for QFitConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            lr: 1e-3,
            batch_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Policy updates `L`.
    pub iterations: usize,
    /// Episodes per update `M`.
    pub episodes: usize,
    pub alpha: f64,
    pub optimizer: OptimizerKind,
    pub sigma_explore: f64,
    /// Multiplier applied to `sigma_explore` after every update.
    #[serde(default = "one")]
    pub explore_decay: f64,
    #[serde(default = "one")]
    pub alpha_decay: f64,
    #[serde(default)]
    pub q_fit: QFitConfig,
    pub seed: u64,
    #[serde(default)]
    pub mode: DesignMode,
    #[serde(default = "default_hidden")]
    pub policy_hidden: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub q_hidden: Vec<usize>,
    #[serde(default = "yes")]
    pub divergence_guard: bool,
    /// Rescales policy gradients whose norm exceeds this value.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Reward bookkeeping for sOED and batch training; greedy is always
    /// incremental.
    #[serde(default)]
    pub formulation: RewardFormulation,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_hidden() -> Vec<usize> {
    vec![80, 80]
}

impl TrainConfig {
    /// Linear-Gaussian benchmark settings.
    pub fn benchmark() -> Self {
        Self {
            iterations: 100,
            episodes: 1000,
            alpha: 0.15,
            optimizer: OptimizerKind::Sgd,
            sigma_explore: 0.2,
            explore_decay: 0.95,
            alpha_decay: 0.9,
            q_fit: QFitConfig {
                steps: 200,
                lr: 1e-3,
                batch_size: Some(100),
            },
            seed: 0,
            mode: DesignMode::Soed,
            policy_hidden: default_hidden(),
            q_hidden: default_hidden(),
            divergence_guard: true,
            max_grad_norm: Some(0.5),
            formulation: RewardFormulation::Terminal,
        }
    }

    /// Source-inversion settings.
    pub fn source() -> Self {
        Self {
            iterations: 300,
            episodes: 1000,
            alpha: 1e-3,
            optimizer: OptimizerKind::Adam,
            sigma_explore: 0.05,
            explore_decay: 1.0,
            alpha_decay: 1.0,
            max_grad_norm: None,
            ..Self::benchmark()
        }
    }

    pub fn with_mode(mut self, mode: DesignMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.sigma_explore >= 0.0 && self.sigma_explore.is_finite()) {
            return bad("sigma_explore must be nonnegative");
        }
        for (name, v) in [("explore_decay", self.explore_decay), ("alpha_decay", self.alpha_decay)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        if !(self.q_fit.lr > 0.0 && self.q_fit.lr.is_finite()) {
            return bad("q_fit.lr must be positive");
        }
        if matches!(self.max_grad_norm, Some(c) if !(c > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        if self.policy_hidden.is_empty() || self.q_hidden.is_empty() {
            return bad("networks need at least one hidden layer");
        }
        if self.policy_hidden.iter().chain(&self.q_hidden).any(|&h| h == 0) {
            return bad("hidden layers need at least one node");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::benchmark().validate().unwrap();
        TrainConfig::source().validate().unwrap();
    }

    #[test]
    fn bad_decay_rejected() {
        let mut c = TrainConfig::benchmark();
        c.explore_decay = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.explore_decay = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(TrainConfig::benchmark()).unwrap();
        let back: TrainConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, TrainConfig::benchmark());
        v["alpah"] = 0.1.into();
        assert!(serde_json::from_value::<TrainConfig>(v).is_err());
    }

    #[test]
    fn mode_parsing() {
        for m in [DesignMode::Soed, DesignMode::Batch, DesignMode::Greedy] {
            assert_eq!(m.to_string().parse::<DesignMode>().unwrap(), m);
        }
        assert!("myopic".parse::<DesignMode>().is_err());
    }
}
