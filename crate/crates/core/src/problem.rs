//! Problem definitions: forward-model handles, reward configuration and the
//! [`ProblemSpec`] bundle consumed by inference and training.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{BeliefGrid, NoiseModel, PriorSpec};
use crate::state::{DesignConstraint, History, PhysicalState, State};

/// Everything a forward model may depend on when predicting stage `k`.
#[derive(Debug, Clone, Copy)]
pub struct StageContext<'a> {
    pub stage: usize,
    pub design: &'a [f64],
    /// Physical state after applying `design` (the sensor location for
    /// source inversion; empty when the problem has no physical state).
    pub position: &'a [f64],
    pub history: &'a History,
}

/// A forward model with the parameter fixed for the duration of an episode.
pub trait BoundModel {
    fn predict(&mut self, ctx: &StageContext<'_>) -> Result<Vec<f64>>;
}

/// Noise-free observation map `G_k(θ, d_k; I_k)`.
pub trait ForwardModel: Send + Sync {
    fn obs_dim(&self) -> usize {
        1
    }

    /// Fixes θ; expensive per-θ work (a PDE solve) happens here at most once.
    fn bind<'a>(&'a self, theta: &[f64]) -> Result<Box<dyn BoundModel + 'a>>;

    /// Predictions at every grid node, node-major (`nodes × obs_dim`).
    fn predict_on_grid(&self, grid: &BeliefGrid, ctx: &StageContext<'_>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(grid.num_nodes() * self.obs_dim());
        let mut theta = vec![0.0; grid.dim()];
        for i in 0..grid.num_nodes() {
            grid.node_into(i, &mut theta);
            out.extend(self.bind(&theta)?.predict(ctx)?);
        }
        Ok(out)
    }

    /// Hook for precomputing per-grid tables before heavy use.
    fn prepare_grid(&self, _grid: &BeliefGrid) -> Result<()> {
        Ok(())
    }
}

/// Movement-cost function `f_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFunction {
    None,
    /// `‖d‖²`
    SquaredNorm,
    /// `‖d‖ − factor · d·u(t_k)`, with the wind `u(t_k)` tabulated per stage.
    WindAdjustedNorm {
        factor: f64,
        velocities: Vec<Vec<f64>>,
    },
}

impl CostFunction {
    pub fn eval(&self, stage: usize, design: &[f64]) -> f64 {
        let norm_sq: f64 = design.iter().map(|d| d * d).sum();
        match self {
            CostFunction::None => 0.0,
            CostFunction::SquaredNorm => norm_sq,
            CostFunction::WindAdjustedNorm { factor, velocities } => {
                let u = &velocities[stage];
                let dot: f64 = design.iter().zip(u).map(|(d, u)| d * u).sum();
                norm_sq.sqrt() - factor * dot
            }
        }
    }
}

/// What the terminal reward adds on top of the prior-to-posterior KL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReward {
    Kl,
    /// `KL − weight · (ln σ_N² − log_target)²` for a one-dimensional θ.
    KlWithVariancePenalty { weight: f64, log_target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub cost_coeff: f64,
    pub cost: CostFunction,
    pub terminal: TerminalReward,
}

/// Grid nodes per θ dimension: one count for all, or one per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeCounts {
    Uniform(usize),
    PerDim(Vec<usize>),
}

impl NodeCounts {
    pub fn resolve(&self, dim: usize) -> Result<Vec<usize>> {
        match self {
            NodeCounts::Uniform(n) => Ok(vec![*n; dim]),
            NodeCounts::PerDim(v) if v.len() == dim => Ok(v.clone()),
            NodeCounts::PerDim(v) => Err(Error::LengthMismatch {
                what: "grid node counts",
                expected: dim,
                actual: v.len(),
            }),
        }
    }
}

impl From<usize> for NodeCounts {
    fn from(n: usize) -> Self {
        NodeCounts::Uniform(n)
    }
}

/// Belief-grid resolutions used during training and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridResolution {
    pub train: NodeCounts,
    pub eval: NodeCounts,
}

impl GridResolution {
    pub fn uniform(train: usize, eval: usize) -> Self {
        Self {
            train: NodeCounts::Uniform(train),
            eval: NodeCounts::Uniform(eval),
        }
    }
}

/// A complete finite-horizon design problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub horizon: usize,
    pub prior: PriorSpec,
    pub design: DesignConstraint,
    pub initial_position: PhysicalState,
    pub noise: NoiseModel,
    pub reward: RewardSpec,
    pub experiment_times: Vec<f64>,
    pub grid: GridResolution,
    pub model: Arc<dyn ForwardModel>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("prior", &self.prior)
            .field("design", &self.design)
            .field("initial_position", &self.initial_position)
            .field("noise", &self.noise)
            .field("reward", &self.reward)
            .field("experiment_times", &self.experiment_times)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let (lo, hi) = match &self.design {
            DesignConstraint::Box { lo, hi } | DesignConstraint::PositionBox { lo, hi } => (lo, hi),
        };
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("design bounds are empty".into()));
        }
        if matches!(self.design, DesignConstraint::PositionBox { .. })
            && self.initial_position.0.len() != lo.len()
        {
            return Err(Error::InvalidArgument(
                "position constraint needs a physical state of the design dimension".into(),
            ));
        }
        if !self.experiment_times.is_empty() && self.experiment_times.len() != self.horizon {
            return Err(Error::InvalidArgument(
                "one experiment time per stage is required".into(),
            ));
        }
        if let CostFunction::WindAdjustedNorm { velocities, .. } = &self.reward.cost {
            if velocities.len() != self.horizon {
                return Err(Error::InvalidArgument("one wind vector per stage is required".into()));
            }
        }
        self.prior.validate()?;
        if !(self.noise.sigma > 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be positive".into()));
        }
        Ok(())
    }

    /// Prior belief grid at the training or evaluation resolution.
    pub fn belief_grid(&self, eval: bool) -> Result<BeliefGrid> {
        let counts = if eval { &self.grid.eval } else { &self.grid.train };
        BeliefGrid::from_prior_with_nodes(&self.prior, &counts.resolve(self.theta_dim())?)
    }

    pub fn theta_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn design_dim(&self) -> usize {
        self.design.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.model.obs_dim()
    }

    pub fn initial_state(&self) -> State {
        State::initial(self.horizon, self.initial_position.clone())
    }

    /// Physical states `x_{0,p} .. x_{k,p}` implied by a history.
    pub fn positions(&self, history: &History) -> Vec<PhysicalState> {
        let mut out = Vec::with_capacity(history.len() + 1);
        out.push(self.initial_position.clone());
        for d in history.designs() {
            let next = out.last().expect("non-empty").advance(d);
            out.push(next);
        }
        out
    }

    /// Immediate reward `g_k = −c_q f_c(d_k)`.
    pub fn stage_cost_reward(&self, stage: usize, design: &[f64]) -> f64 {
        if self.reward.cost_coeff == 0.0 {
            return 0.0;
        }
        -self.reward.cost_coeff * self.reward.cost.eval(stage, design)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_cost() {
        let c = CostFunction::SquaredNorm;
        let g = -0.5 * c.eval(0, &[0.2, 0.1]);
        assert!((g - -0.025).abs() < 1e-15);
    }

    #[test]
    fn wind_adjusted_cost() {
        let c = CostFunction::WindAdjustedNorm {
            factor: 2f64.sqrt() / 40.0,
            velocities: vec![vec![2.5, 2.5]],
        };
        let g = -0.2 * c.eval(0, &[0.1, 0.1]);
        let expected = -0.2 * (0.02f64.sqrt() - (2f64.sqrt() / 40.0) * 0.5);
        assert!((g - expected).abs() < 1e-15);
        assert!((g - -0.02475).abs() < 1e-5);
    }
}
