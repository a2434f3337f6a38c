//! Linear-Gaussian benchmark: `y_k = θ d_k + ε_k`, `θ ~ N(0, 3²)`,
//! `ε_k ~ N(0, 1)`, `d_k ∈ [0.1, 3]`, two experiments, and terminal reward
//! `KL − 2 (ln σ_N² − ln 2)²`.
//!
//! The conjugate structure gives closed-form posteriors; the posterior
//! variance depends only on the designs, which makes the optimal expected
//! utility a one-dimensional maximization.

use std::sync::Arc;

use crate::error::Result;
use crate::inference::{BeliefGrid, NoiseModel, PriorComponent, PriorSpec};
use crate::problem::{
    BoundModel, CostFunction, ForwardModel, GridResolution, ProblemSpec, RewardSpec, StageContext,
    TerminalReward,
};
use crate::state::{DesignConstraint, History, PhysicalState};

pub const PRIOR_STD: f64 = 3.0;
pub const NOISE_STD: f64 = 1.0;
pub const DESIGN_LO: f64 = 0.1;
pub const DESIGN_HI: f64 = 3.0;
pub const HORIZON: usize = 2;
pub const PENALTY_WEIGHT: f64 = 2.0;

pub fn penalty_log_target() -> f64 {
    2f64.ln()
}

pub fn linear_gaussian_forward(theta: f64, d: f64) -> f64 {
    theta * d
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LinearGaussianModel;

struct Bound(f64);

impl BoundModel for Bound {
    fn predict(&mut self, ctx: &StageContext<'_>) -> Result<Vec<f64>> {
        Ok(vec![linear_gaussian_forward(self.0, ctx.design[0])])
    }
}

impl ForwardModel for LinearGaussianModel {
    fn bind<'a>(&'a self, theta: &[f64]) -> Result<Box<dyn BoundModel + 'a>> {
        Ok(Box::new(Bound(theta[0])))
    }

    fn predict_on_grid(&self, grid: &BeliefGrid, ctx: &StageContext<'_>) -> Result<Vec<f64>> {
        let d = ctx.design[0];
        Ok(grid.axes()[0].iter().map(|&t| linear_gaussian_forward(t, d)).collect())
    }
}

/// The benchmark problem with 50-node grids.
pub fn benchmark() -> ProblemSpec {
    ProblemSpec {
        name: "linear_gaussian".into(),
        horizon: HORIZON,
        prior: PriorSpec::new(vec![PriorComponent::Gaussian {
            mean: 0.0,
            std: PRIOR_STD,
        }]),
        design: DesignConstraint::Box {
            lo: vec![DESIGN_LO],
            hi: vec![DESIGN_HI],
        },
        initial_position: PhysicalState::empty(),
        noise: NoiseModel::new(NOISE_STD, false),
        reward: RewardSpec {
            cost_coeff: 0.0,
            cost: CostFunction::None,
            terminal: TerminalReward::KlWithVariancePenalty {
                weight: PENALTY_WEIGHT,
                log_target: penalty_log_target(),
            },
        },
        experiment_times: Vec::new(),
        grid: GridResolution::uniform(50, 50),
        model: Arc::new(LinearGaussianModel),
    }
}

/// Conjugate posterior `(mean, variance)` after `history`.
pub fn lg_analytic_posterior(history: &History) -> (f64, f64) {
    let prior_prec = 1.0 / (PRIOR_STD * PRIOR_STD);
    let noise_prec = 1.0 / (NOISE_STD * NOISE_STD);
    let (mut sdd, mut sdy) = (0.0, 0.0);
    for s in history.stages() {
        sdd += s.design[0] * s.design[0];
        sdy += s.design[0] * s.observation[0];
    }
    let var = 1.0 / (prior_prec + noise_prec * sdd);
    (var * noise_prec * sdy, var)
}

/// Expected utility of fixed designs whose squares sum to `sum_sq`:
/// `½ ln(σ_0²/σ_N²) − 2 (ln σ_N² − ln 2)²`.
pub fn expected_utility_of_sum_sq(sum_sq: f64) -> f64 {
    let v = 1.0 / (1.0 / (PRIOR_STD * PRIOR_STD) + sum_sq / (NOISE_STD * NOISE_STD));
    0.5 * (PRIOR_STD * PRIOR_STD / v).ln() - PENALTY_WEIGHT * (v.ln() - penalty_log_target()).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalUtility {
    pub utility: f64,
    /// Optimal `Σ d_k²`.
    pub design_sum_sq: f64,
    /// Optimal final posterior variance `σ_N²`.
    pub posterior_variance: f64,
}

/// Closed-form optimum.
///
/// `E[KL] = ln(σ_0/σ_N)` for every adaptive policy here, so the expected
/// utility depends on `v = σ_N²` alone. Setting `dU/d ln v = −½ − 4(ln v − ln 2)`
/// to zero gives `v* = 2 e^{−1/8}`, clipped to the reachable range.
pub fn lg_optimal_utility() -> OptimalUtility {
    let prior_prec = 1.0 / (PRIOR_STD * PRIOR_STD);
    let s_lo = HORIZON as f64 * DESIGN_LO * DESIGN_LO;
    let s_hi = HORIZON as f64 * DESIGN_HI * DESIGN_HI;
    let v_star = 2.0 * (-1.0 / (4.0 * PENALTY_WEIGHT)).exp();
    let s_star = (NOISE_STD * NOISE_STD * (1.0 / v_star - prior_prec)).clamp(s_lo, s_hi);
    let v = 1.0 / (prior_prec + s_star / (NOISE_STD * NOISE_STD));
    OptimalUtility {
        utility: expected_utility_of_sum_sq(s_star),
        design_sum_sq: s_star,
        posterior_variance: v,
    }
}

/// Exhaustive search over an `n × n` grid of static `(d_0, d_1)`.
pub fn brute_force_optimum(n: usize) -> (f64, [f64; 2]) {
    let step = (DESIGN_HI - DESIGN_LO) / (n - 1) as f64;
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for i in 0..n {
        let d0 = DESIGN_LO + step * i as f64;
        for j in 0..n {
            let d1 = DESIGN_LO + step * j as f64;
            let u = expected_utility_of_sum_sq(d0 * d0 + d1 * d1);
            if u > best.0 {
                best = (u, [d0, d1]);
            }
        }
    }
    best
}
