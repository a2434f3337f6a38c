use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::learn::{fit_q, policy_gradient, QBatch};
use super::networks::{Policy, QNetwork};
use super::simulate::{simulate_on_grid, RewardFormulation, SimulationConfig, ThetaSampling};
use super::{DesignMode, TrainConfig};
use crate::error::{Error, Result};
use crate::nnet::{Direction, Optimizer};
use crate::problem::ProblemSpec;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    #[serde(rename = "U_hat")]
    pub u_hat: f64,
    pub q_loss: f64,
    pub grad_norm: f64,
    pub sigma_explore: f64,
    pub alpha: f64,
    pub wall_ms: f64,
    /// Set on the iteration where the divergence guard halved `alpha`.
    pub guard: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.records.is_empty() {
            w.write_record(["iter", "U_hat", "q_loss", "grad_norm", "sigma_explore", "alpha", "wall_ms", "guard"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub qnet: QNetwork,
    pub trace: TrainTrace,
}

pub fn train(config: &TrainConfig, problem: &ProblemSpec) -> Result<TrainOutcome> {
    train_with(config, problem, |_, _, _| {})
}

/// Training loop; `observer` sees each iteration's record together with the
/// policy that generated its episodes and the freshly fit Q-network, before
/// the policy is updated.
pub fn train_with<F>(config: &TrainConfig, problem: &ProblemSpec, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&IterationRecord, &Policy, &QNetwork),
{
    config.validate()?;
    problem.validate()?;
    let mut init_rng = substream(config.seed, Stream::Init, 0, 0);
    let mut policy = Policy::new(problem, config.mode, &config.policy_hidden, &mut init_rng)?;
    let mut qnet = QNetwork::new(problem, &config.q_hidden, &mut init_rng)?;
    let mut trace = TrainTrace::default();
    if config.iterations == 0 {
        return Ok(TrainOutcome { policy, qnet, trace });
    }

    let prior = problem.belief_grid(false)?;
    problem.model.prepare_grid(&prior)?;
    let formulation = match config.mode {
        DesignMode::Greedy => RewardFormulation::Incremental,
        DesignMode::Soed | DesignMode::Batch => config.formulation,
    };
    let mut policy_opt = Optimizer::new(config.optimizer);
    let mut q_opt = Optimizer::adam();
    let mut alpha = config.alpha;
    let mut sigma = config.sigma_explore;
    let mut u0 = None;
    let mut guard_used = false;

    for iter in 0..config.iterations {
        let t0 = Instant::now();
        let sim = SimulationConfig {
            episodes: config.episodes,
            sigma_explore: sigma,
            seed: config.seed,
            epoch: iter as u64,
            eval_grid: false,
            formulation,
            theta_sampling: ThetaSampling::EpisodeFixed,
        };
        let episodes = simulate_on_grid(&policy, problem, &prior, &sim)?;
        let u_hat = episodes.iter().map(|e| e.total_reward()).sum::<f64>() / episodes.len() as f64;
        if !u_hat.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: "mean episode reward".into(),
            });
        }

        let batch = QBatch::new(&qnet, &policy, problem, &episodes, config.mode)?;
        let mut shuffle = substream(config.seed, Stream::Shuffle, iter as u64, 0);
        let q_loss = fit_q(&mut qnet, &mut q_opt, &batch, &config.q_fit, &mut shuffle)?;
        if !q_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: "Q regression".into(),
            });
        }
        let mut grads = policy_gradient(&policy, &qnet, problem, &episodes)?;
        let grad_norm = grads.norm();
        if let Some(c) = config.max_grad_norm {
            if grad_norm > c {
                grads.scale(c / grad_norm);
            }
        }

        let base = *u0.get_or_insert(u_hat);
        let mut guard = false;
        if config.divergence_guard && !guard_used && u_hat < base - 10.0 * base.abs().max(0.1) {
            alpha *= 0.5;
            guard = true;
            guard_used = true;
        }
        let record = IterationRecord {
            iter,
            u_hat,
            q_loss,
            grad_norm,
            sigma_explore: sigma,
            alpha,
            wall_ms: 0.0,
            guard,
        };
        observer(&record, &policy, &qnet);
        policy_opt.step(&mut policy.net, &grads, alpha, Direction::Ascent)?;
        trace.records.push(IterationRecord {
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            ..record
        });
        sigma *= config.explore_decay;
        alpha *= config.alpha_decay;
    }
    Ok(TrainOutcome { policy, qnet, trace })
}
