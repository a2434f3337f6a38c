use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::networks::{Critic, DesignPolicy, Policy, QNetwork};
use super::{DesignMode, QFitConfig};
use crate::error::{Error, Result};
use crate::nnet::{Direction, Grads, Optimizer};
use crate::problem::ProblemSpec;
use crate::state::{Episode, History};

/// Components of one Q-regression target.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TargetTerms {
    /// `g_k`
    pub immediate: f64,
    /// `g_N`, present only at the last stage.
    pub terminal: f64,
    /// `Q_η(k+1, x_{k+1}, μ_w(k+1, x_{k+1}))`, held constant during the fit.
    pub future: f64,
}

impl TargetTerms {
    pub fn total(&self) -> f64 {
        self.immediate + self.terminal + self.future
    }
}

/// Regression data of one iteration, fixed while the Q-network is fit.
#[derive(Debug, Clone)]
pub struct QBatch {
    mode: DesignMode,
    episodes: usize,
    /// Per stage: encoded `(k, I_k, d_k)` with the simulated designs.
    inputs: Vec<Array2<f64>>,
    /// Per stage `k ≥ 1`: encoded `(k, I_k, clamp(μ_w(k, I_k)))`.
    next_inputs: Vec<Array2<f64>>,
    immediate: Vec<Vec<f64>>,
    terminal: Vec<f64>,
}

fn prefixes(episodes: &[Episode], k: usize) -> Vec<History> {
    episodes.iter().map(|e| e.history.prefix(k)).collect()
}

impl QBatch {
    pub fn new(
        qnet: &QNetwork,
        policy: &dyn DesignPolicy,
        problem: &ProblemSpec,
        episodes: &[Episode],
        mode: DesignMode,
    ) -> Result<Self> {
        let n = problem.horizon;
        let m = episodes.len();
        let nd = problem.design_dim();
        let mut inputs = Vec::with_capacity(n);
        let mut next_inputs = Vec::with_capacity(n);
        for k in 0..n {
            let hs = prefixes(episodes, k);
            let refs: Vec<&History> = hs.iter().collect();
            let mut d = Array2::zeros((m, nd));
            for (i, e) in episodes.iter().enumerate() {
                d.row_mut(i).as_slice_mut().expect("row").copy_from_slice(e.design(k));
            }
            inputs.push(qnet.encode(k, &refs, d.view())?);
            if k > 0 && mode != DesignMode::Greedy {
                let mut mu = Array2::zeros((m, nd));
                for (i, (e, h)) in episodes.iter().zip(&hs).enumerate() {
                    let a = problem.design.clamp(&policy.act(k, h)?, &e.positions[k]);
                    mu.row_mut(i).as_slice_mut().expect("row").copy_from_slice(&a);
                }
                next_inputs.push(qnet.encode(k, &refs, mu.view())?);
            }
        }
        let immediate = (0..n)
            .map(|k| episodes.iter().map(|e| e.stage_rewards[k]).collect())
            .collect();
        let terminal = episodes.iter().map(|e| e.terminal_reward).collect();
        Ok(Self {
            mode,
            episodes: m,
            inputs,
            next_inputs,
            immediate,
            terminal,
        })
    }

    pub fn mode(&self) -> DesignMode {
        self.mode
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// The rows of the listed episodes.
    pub fn select(&self, episodes: &[usize]) -> QBatch {
        let pick = |v: &Vec<f64>| episodes.iter().map(|&i| v[i]).collect::<Vec<_>>();
        QBatch {
            mode: self.mode,
            episodes: episodes.len(),
            inputs: self.inputs.iter().map(|x| x.select(Axis(0), episodes)).collect(),
            next_inputs: self.next_inputs.iter().map(|x| x.select(Axis(0), episodes)).collect(),
            immediate: self.immediate.iter().map(pick).collect(),
            terminal: pick(&self.terminal),
        }
    }
}

/// Target terms `[k][episode]` under the current Q-network.
pub fn q_target_breakdown(qnet: &QNetwork, batch: &QBatch) -> Result<Vec<Vec<TargetTerms>>> {
    let n = batch.horizon();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut terms: Vec<TargetTerms> = batch.immediate[k]
            .iter()
            .map(|&g| TargetTerms {
                immediate: g,
                ..TargetTerms::default()
            })
            .collect();
        if batch.mode != DesignMode::Greedy {
            if k + 1 < n {
                let q = qnet.net.forward_batch(batch.next_inputs[k].view())?;
                for (t, q) in terms.iter_mut().zip(q.column(0)) {
                    t.future = *q;
                }
            } else {
                for (t, &g) in terms.iter_mut().zip(&batch.terminal) {
                    t.terminal = g;
                }
            }
        }
        out.push(terms);
    }
    Ok(out)
}

/// `(1/M) Σ_i Σ_k (Q_η(k, x_k, d_k) − target)²` and its gradient in `η`,
/// with the targets treated as constants.
pub fn q_loss_and_grads(qnet: &QNetwork, batch: &QBatch) -> Result<(f64, Grads)> {
    let targets = q_target_breakdown(qnet, batch)?;
    let m = batch.episodes.max(1) as f64;
    let mut loss = 0.0;
    let mut grads = Grads::zeros_like(&qnet.net);
    for (x, t) in batch.inputs.iter().zip(&targets) {
        let q = qnet.net.forward_batch(x.view())?;
        let mut up = Array2::zeros((x.nrows(), 1));
        for ((u, q), t) in up.column_mut(0).iter_mut().zip(q.column(0)).zip(t) {
            let r = q - t.total();
            loss += r * r / m;
            *u = 2.0 * r / m;
        }
        let (_, g, _) = qnet.net.backward_batch(x.view(), up.view())?;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// Runs the inner regression and returns the full-batch loss afterwards.
///
/// Minibatches cycle through a shuffled episode order; without a batch size
/// every step uses all episodes.
pub fn fit_q<R: Rng + ?Sized>(
    qnet: &mut QNetwork,
    optimizer: &mut Optimizer,
    batch: &QBatch,
    cfg: &QFitConfig,
    rng: &mut R,
) -> Result<f64> {
    let m = batch.episodes();
    let size = cfg.batch_size.filter(|&b| b > 0 && b < m);
    let mut order: Vec<usize> = (0..m).collect();
    let mut cursor = m;
    for _ in 0..cfg.steps {
        let (l, g) = match size {
            None => q_loss_and_grads(qnet, batch)?,
            Some(b) => {
                if cursor + b > m {
                    order.shuffle(rng);
                    cursor = 0;
                }
                let sub = batch.select(&order[cursor..cursor + b]);
                cursor += b;
                q_loss_and_grads(qnet, &sub)?
            }
        };
        if !l.is_finite() {
            return Ok(l);
        }
        optimizer.step(&mut qnet.net, &g, cfg.lr, Direction::Descent)?;
    }
    Ok(q_loss_and_grads(qnet, batch)?.0)
}

/// `(1/M) Σ_i Σ_k ∇_w μ_w(k, x_k) · ∇_d Q(k, x_k, d)|_{d = clamp(μ_w(k, x_k))}`.
///
/// The clamp is treated as the identity when differentiating.
pub fn policy_gradient(
    policy: &Policy,
    critic: &dyn Critic,
    problem: &ProblemSpec,
    episodes: &[Episode],
) -> Result<Grads> {
    let mut grads = Grads::zeros_like(&policy.net);
    if episodes.is_empty() {
        return Ok(grads);
    }
    for k in 0..problem.horizon {
        let hs = prefixes(episodes, k);
        let refs: Vec<&History> = hs.iter().collect();
        let mut mu = policy.forward_batch(k, &refs)?;
        for (mut row, e) in mu.axis_iter_mut(Axis(0)).zip(episodes) {
            let c = problem.design.clamp(row.as_slice().expect("row"), &e.positions[k]);
            row.as_slice_mut().expect("row").copy_from_slice(&c);
        }
        let dq = critic.design_gradients(k, &refs, mu.view())?;
        grads.add_assign(&policy.backward(k, &refs, dq.view())?);
    }
    grads.scale(1.0 / episodes.len() as f64);
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear_gaussian;
    use crate::soed::{simulate_episodes, SimulationConfig};
    use ndarray::ArrayView2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(mode: DesignMode) -> (ProblemSpec, Policy, QNetwork, Vec<Episode>) {
        let p = linear_gaussian::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pol = Policy::new(&p, mode, &[6, 6], &mut rng).unwrap();
        let q = QNetwork::new(&p, &[6, 6], &mut rng).unwrap();
        let eps = simulate_episodes(&pol, &p, &SimulationConfig::new(8, 0.2, 3)).unwrap();
        (p, pol, q, eps)
    }

    #[test]
    fn q_grads_match_finite_differences() {
        let (p, pol, q, eps) = setup(DesignMode::Soed);
        let batch = QBatch::new(&q, &pol, &p, &eps, DesignMode::Soed).unwrap();
        let (_, g) = q_loss_and_grads(&q, &batch).unwrap();
        let flat = q.net.params_flat();
        let gf = g.to_flat();
        // Targets are frozen: differentiate with the future term held fixed.
        let frozen = q_target_breakdown(&q, &batch).unwrap();
        let loss_at = |w: &[f64]| {
            let mut qq = q.clone();
            qq.net.set_params_flat(w).unwrap();
            let mut l = 0.0;
            for (x, t) in batch.inputs.iter().zip(&frozen) {
                let out = qq.net.forward_batch(x.view()).unwrap();
                for (o, t) in out.column(0).iter().zip(t) {
                    l += (o - t.total()).powi(2) / batch.episodes as f64;
                }
            }
            l
        };
        for idx in (0..flat.len()).step_by(7) {
            let h = 1e-5;
            let mut a = flat.clone();
            a[idx] += h;
            let mut b = flat.clone();
            b[idx] -= h;
            let fd = (loss_at(&a) - loss_at(&b)) / (2.0 * h);
            assert!((fd - gf[idx]).abs() <= 1e-5 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", gf[idx]);
        }
    }

    #[test]
    fn single_stage_loss_unrolled() {
        let mut p = linear_gaussian::benchmark();
        p.horizon = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pol = Policy::new(&p, DesignMode::Soed, &[4], &mut rng).unwrap();
        let q = QNetwork::new(&p, &[4], &mut rng).unwrap();
        let eps = simulate_episodes(&pol, &p, &SimulationConfig::new(1, 0.0, 2)).unwrap();
        let batch = QBatch::new(&q, &pol, &p, &eps, DesignMode::Soed).unwrap();
        let (loss, _) = q_loss_and_grads(&q, &batch).unwrap();
        let e = &eps[0];
        let qv = q
            .values(0, &[&History::new(1)], ArrayView2::from_shape((1, 1), e.design(0)).unwrap())
            .unwrap()[0];
        let expected = (qv - (e.stage_rewards[0] + e.terminal_reward)).powi(2);
        assert!((loss - expected).abs() < 1e-12 * (1.0 + expected));
    }

    #[test]
    fn greedy_targets_have_only_immediate_terms() {
        let (p, pol, q, eps) = setup(DesignMode::Greedy);
        let batch = QBatch::new(&q, &pol, &p, &eps, DesignMode::Greedy).unwrap();
        for (k, row) in q_target_breakdown(&q, &batch).unwrap().iter().enumerate() {
            for (t, e) in row.iter().zip(&eps) {
                assert_eq!(t.future, 0.0);
                assert_eq!(t.terminal, 0.0);
                assert_eq!(t.immediate, e.stage_rewards[k]);
            }
        }
    }

    #[test]
    fn design_independent_critic_gives_zero_gradient() {
        let (p, pol, mut q, eps) = setup(DesignMode::Soed);
        let off = q.encoder.design_offset();
        q.net.layers_mut()[0].weight.column_mut(off).fill(0.0);
        let g = policy_gradient(&pol, &q, &p, &eps).unwrap();
        assert_eq!(g.norm(), 0.0);
    }
}
