use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::networks::DesignPolicy;
use crate::error::{Error, Result};
use crate::inference::{kl_divergence, posterior_from_history, posterior_sequence, sample_prior, BeliefGrid};
use crate::problem::{ProblemSpec, StageContext, TerminalReward};
use crate::rng::{substream, Stream};
use crate::state::{Episode, History, PhysicalState};

/// How information gain is credited across stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFormulation {
    /// One prior-to-posterior KL at the horizon.
    #[default]
    Terminal,
    /// `KL(p(·|I_{k+1}) ‖ p(·|I_k))` added to every stage reward.
    Incremental,
}

/// Where the parameter generating each observation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaSampling {
    /// One prior draw per episode.
    #[default]
    EpisodeFixed,
    /// A fresh draw from the current grid posterior before every stage.
    PerStagePosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub episodes: usize,
    pub sigma_explore: f64,
    pub seed: u64,
    /// Substream epoch; training uses the iteration number.
    pub epoch: u64,
    /// Use the evaluation grid resolution instead of the training one.
    pub eval_grid: bool,
    pub formulation: RewardFormulation,
    pub theta_sampling: ThetaSampling,
}

impl SimulationConfig {
    pub fn new(episodes: usize, sigma_explore: f64, seed: u64) -> Self {
        Self {
            episodes,
            sigma_explore,
            seed,
            epoch: 0,
            eval_grid: false,
            formulation: RewardFormulation::Terminal,
            theta_sampling: ThetaSampling::EpisodeFixed,
        }
    }
}

/// Immediate reward `g_k = −c_q f_c(d_k)`.
pub fn stage_reward(problem: &ProblemSpec, stage: usize, design: &[f64]) -> f64 {
    problem.stage_cost_reward(stage, design)
}

/// `g_N`: KL from the prior to the final posterior, plus the configured penalty.
pub fn terminal_reward(problem: &ProblemSpec, posterior: &BeliefGrid, prior: &BeliefGrid) -> Result<f64> {
    let kl = kl_divergence(posterior, prior)?;
    Ok(kl + terminal_penalty(problem, posterior))
}

fn terminal_penalty(problem: &ProblemSpec, posterior: &BeliefGrid) -> f64 {
    match problem.reward.terminal {
        TerminalReward::Kl => 0.0,
        TerminalReward::KlWithVariancePenalty { weight, log_target } => {
            let v = posterior.variance()[0];
            -weight * (v.ln() - log_target).powi(2)
        }
    }
}

/// Stage rewards and terminal reward of a complete history.
pub fn episode_rewards(
    problem: &ProblemSpec,
    prior: &BeliefGrid,
    history: &History,
    formulation: RewardFormulation,
) -> Result<(Vec<f64>, f64)> {
    let mut stage: Vec<f64> = history
        .designs()
        .enumerate()
        .map(|(k, d)| stage_reward(problem, k, d))
        .collect();
    match formulation {
        RewardFormulation::Terminal => {
            let post = posterior_from_history(prior, problem, history)?;
            Ok((stage, terminal_reward(problem, &post, prior)?))
        }
        RewardFormulation::Incremental => {
            let seq = posterior_sequence(prior, problem, history)?;
            for (k, g) in stage.iter_mut().enumerate() {
                *g += kl_divergence(&seq[k + 1], &seq[k])?;
            }
            Ok((stage, terminal_penalty(problem, seq.last().expect("non-empty"))))
        }
    }
}

/// Node draw from the grid masses, jittered uniformly within its cell.
fn sample_grid<R: Rng + ?Sized>(grid: &BeliefGrid, rng: &mut R) -> Vec<f64> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = grid.num_nodes() - 1;
    for (i, lm) in grid.log_mass().iter().enumerate() {
        acc += lm.exp();
        if u < acc {
            pick = i;
            break;
        }
    }
    let mut theta = grid.node(pick);
    for (t, axis) in theta.iter_mut().zip(grid.axes()) {
        let h = axis[1] - axis[0];
        *t += h * (rng.gen::<f64>() - 0.5);
    }
    theta
}

fn simulate_one(
    policy: &dyn DesignPolicy,
    problem: &ProblemSpec,
    prior: &BeliefGrid,
    cfg: &SimulationConfig,
    index: u64,
) -> Result<Episode> {
    let mut prior_rng = substream(cfg.seed, Stream::Prior, cfg.epoch, index);
    let mut noise_rng = substream(cfg.seed, Stream::Noise, cfg.epoch, index);
    let mut explore_rng = substream(cfg.seed, Stream::Explore, cfg.epoch, index);
    let theta_true = sample_prior(&problem.prior, &mut prior_rng);
    let mut bound = problem.model.bind(&theta_true)?;
    let mut history = History::new(problem.horizon);
    let mut positions = vec![problem.initial_position.clone()];
    for k in 0..problem.horizon {
        let d = policy.act(k, &history)?;
        if d.len() != problem.design_dim() {
            return Err(Error::LengthMismatch {
                what: "policy output",
                expected: problem.design_dim(),
                actual: d.len(),
            });
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePolicyOutput { stage: k });
        }
        let here: &PhysicalState = positions.last().expect("non-empty");
        // Exploration is centred on the feasible design so that the Q-network
        // sees both sides of a design pinned at a bound.
        let mut d = problem.design.clamp(&d, here);
        if cfg.sigma_explore > 0.0 {
            for v in d.iter_mut() {
                *v += cfg.sigma_explore * explore_rng.sample::<f64, _>(StandardNormal);
            }
            d = problem.design.clamp(&d, here);
        }
        let next = here.advance(&d);
        if cfg.theta_sampling == ThetaSampling::PerStagePosterior {
            let post = posterior_from_history(prior, problem, &history)?;
            let theta = sample_grid(&post, &mut prior_rng);
            bound = problem.model.bind(&theta)?;
        }
        let ctx = StageContext {
            stage: k,
            design: &d,
            position: next.as_slice(),
            history: &history,
        };
        let g = bound.predict(&ctx)?;
        let y = problem.noise.sample(&g, &mut noise_rng);
        history = history.append(&d, &y)?;
        positions.push(next);
    }
    let (stage_rewards, terminal_reward) = episode_rewards(problem, prior, &history, cfg.formulation)?;
    Ok(Episode {
        theta_true,
        history,
        positions,
        stage_rewards,
        terminal_reward,
    })
}

/// Simulates `cfg.episodes` episodes under `policy` plus Gaussian exploration.
///
/// Each episode draws from its own substreams, so the result does not depend
/// on the number of worker threads.
pub fn simulate_episodes(
    policy: &dyn DesignPolicy,
    problem: &ProblemSpec,
    cfg: &SimulationConfig,
) -> Result<Vec<Episode>> {
    let prior = problem.belief_grid(cfg.eval_grid)?;
    problem.model.prepare_grid(&prior)?;
    simulate_on_grid(policy, problem, &prior, cfg)
}

pub(crate) fn simulate_on_grid(
    policy: &dyn DesignPolicy,
    problem: &ProblemSpec,
    prior: &BeliefGrid,
    cfg: &SimulationConfig,
) -> Result<Vec<Episode>> {
    (0..cfg.episodes as u64)
        .into_par_iter()
        .map(|i| simulate_one(policy, problem, prior, cfg, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear_gaussian;
    use crate::soed::FnPolicy;

    fn constant(d: f64) -> FnPolicy<impl Fn(usize, &History) -> Vec<f64> + Sync> {
        FnPolicy(move |_, _: &History| vec![d])
    }

    #[test]
    fn deterministic_without_exploration() {
        let p = linear_gaussian::benchmark();
        let cfg = SimulationConfig::new(20, 0.0, 5);
        let a = simulate_episodes(&constant(1.0), &p, &cfg).unwrap();
        let b = simulate_episodes(&constant(1.0), &p, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|e| e.history.len() == 2 && e.stage_rewards.len() == 2));
    }

    #[test]
    fn designs_are_clamped() {
        let p = linear_gaussian::benchmark();
        let cfg = SimulationConfig::new(5, 0.0, 1);
        let eps = simulate_episodes(&constant(10.0), &p, &cfg).unwrap();
        assert!(eps.iter().all(|e| e.design(0) == [3.0] && e.design(1) == [3.0]));
    }

    #[test]
    fn exploration_perturbs_designs() {
        let p = linear_gaussian::benchmark();
        let cfg = SimulationConfig::new(50, 0.2, 1);
        let eps = simulate_episodes(&constant(1.0), &p, &cfg).unwrap();
        let mean: f64 = eps.iter().map(|e| e.design(0)[0]).sum::<f64>() / 50.0;
        assert!(eps.iter().any(|e| e.design(0)[0] != 1.0));
        assert!((mean - 1.0).abs() < 0.1);
    }

    #[test]
    fn terminal_penalty_vanishes_at_target_variance() {
        let p = linear_gaussian::benchmark();
        let prior = p.belief_grid(true).unwrap();
        let s: f64 = 0.5 - 1.0 / 9.0;
        let d = (s / 2.0).sqrt();
        let h = History::new(2).append(&[d], &[0.2]).unwrap().append(&[d], &[-0.4]).unwrap();
        let post = posterior_from_history(&prior, &p, &h).unwrap();
        let v = post.variance()[0];
        assert!((v - 2.0).abs() < 1e-3, "{v}");
        assert!(terminal_penalty(&p, &post).abs() < 1e-5);
    }

    #[test]
    fn uninformative_episode_has_zero_reward() {
        let mut p = linear_gaussian::benchmark();
        p.reward.terminal = TerminalReward::Kl;
        let prior = p.belief_grid(true).unwrap();
        let h = History::new(2).append(&[0.0], &[1.0]).unwrap().append(&[0.0], &[2.0]).unwrap();
        let (g, t) = episode_rewards(&p, &prior, &h, RewardFormulation::Terminal).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert!(t.abs() < 1e-12);
    }

    #[test]
    fn incremental_kls_sum_to_terminal_for_one_stage() {
        let p = linear_gaussian::benchmark();
        let prior = p.belief_grid(true).unwrap();
        let h = History::new(2).append(&[1.0], &[3.0]).unwrap();
        let (gi, ti) = episode_rewards(&p, &prior, &h, RewardFormulation::Incremental).unwrap();
        let (gt, tt) = episode_rewards(&p, &prior, &h, RewardFormulation::Terminal).unwrap();
        assert!((gi[0] + ti - (gt[0] + tt)).abs() < 1e-12);
    }
}
