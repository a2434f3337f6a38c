//! Grid-based Bayesian inference.
//!
//! The posterior lives on a tensor-product grid over θ and is carried as
//! normalized log-masses. Moments and KL divergences are node-mass sums, so a
//! grid behaves as a discrete distribution and KL stays exactly nonnegative.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ForwardModel, ProblemSpec, StageContext};
use crate::state::History;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Half-width, in standard deviations, of a Gaussian prior's grid.
pub const GAUSSIAN_GRID_HALF_WIDTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorComponent {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl PriorComponent {
    fn validate(&self) -> Result<()> {
        match *self {
            PriorComponent::Uniform { lo, hi } if lo < hi && lo.is_finite() && hi.is_finite() => {
                Ok(())
            }
            PriorComponent::Gaussian { mean, std } if std > 0.0 && mean.is_finite() && std.is_finite() => {
                Ok(())
            }
            other => Err(Error::UnsupportedPrior(format!("{other:?}"))),
        }
    }

    /// Interval covered by the grid axis.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            PriorComponent::Uniform { lo, hi } => (lo, hi),
            PriorComponent::Gaussian { mean, std } => (
                mean - GAUSSIAN_GRID_HALF_WIDTH * std,
                mean + GAUSSIAN_GRID_HALF_WIDTH * std,
            ),
        }
    }

    /// Log density up to a constant.
    fn log_density(&self, x: f64) -> f64 {
        match *self {
            PriorComponent::Uniform { .. } => 0.0,
            PriorComponent::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                -0.5 * z * z
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorComponent::Uniform { lo, hi } => Uniform::new_inclusive(lo, hi).sample(rng),
            PriorComponent::Gaussian { mean, std } => {
                Normal::new(mean, std).expect("validated std").sample(rng)
            }
        }
    }
}

/// Independent per-dimension prior on θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub components: Vec<PriorComponent>,
}

impl PriorSpec {
    pub fn new(components: Vec<PriorComponent>) -> Self {
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::UnsupportedPrior("zero-dimensional prior".into()));
        }
        self.components.iter().try_for_each(PriorComponent::validate)
    }
}

/// Additive Gaussian observation noise, optionally scaled by the signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    /// When set the standard deviation is `σ (1 + |G|)`.
    #[serde(default)]
    pub signal_scaled: bool,
}

impl NoiseModel {
    pub fn new(sigma: f64, signal_scaled: bool) -> Self {
        Self {
            sigma,
            signal_scaled,
        }
    }

    #[inline]
    pub fn std(&self, g: f64) -> f64 {
        if self.signal_scaled {
            self.sigma * (1.0 + g.abs())
        } else {
            self.sigma
        }
    }

    /// Gaussian log density of `y` given noise-free prediction `g`.
    #[inline]
    pub fn log_pdf(&self, y: f64, g: f64) -> f64 {
        let s = self.std(g);
        let z = (y - g) / s;
        -0.5 * z * z - s.ln() - LN_SQRT_2PI
    }

    pub fn sample<R: Rng + ?Sized>(&self, g: &[f64], rng: &mut R) -> Vec<f64> {
        g.iter()
            .map(|&g| {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                g + self.std(g) * e
            })
            .collect()
    }
}

/// Discretized belief over θ.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    axes: Vec<Vec<f64>>,
    log_mass: Vec<f64>,
    cell_volume: f64,
}

/// `n` evenly spaced points with both endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Log-sum-exp normalization in place; fails when every entry is `-inf`.
fn normalize_log(log_mass: &mut [f64]) -> Result<()> {
    let max = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegeneratePosterior);
    }
    let sum: f64 = log_mass.iter().map(|l| (l - max).exp()).sum();
    let shift = max + sum.ln();
    for l in log_mass.iter_mut() {
        *l -= shift;
    }
    Ok(())
}

impl BeliefGrid {
    /// Grid with masses proportional to the prior density at the nodes.
    pub fn from_prior(prior: &PriorSpec, nodes_per_dim: usize) -> Result<Self> {
        Self::from_prior_with_nodes(prior, &vec![nodes_per_dim; prior.dim()])
    }

    pub fn from_prior_with_nodes(prior: &PriorSpec, nodes: &[usize]) -> Result<Self> {
        prior.validate()?;
        if nodes.len() != prior.dim() {
            return Err(Error::LengthMismatch {
                what: "nodes per dimension",
                expected: prior.dim(),
                actual: nodes.len(),
            });
        }
        if let Some(&n) = nodes.iter().find(|&&n| n < 2) {
            return Err(Error::GridTooCoarse(n));
        }
        let axes: Vec<Vec<f64>> = prior
            .components
            .iter()
            .zip(nodes)
            .map(|(c, &n)| {
                let (lo, hi) = c.support();
                linspace(lo, hi, n)
            })
            .collect();
        let cell_volume = axes.iter().map(|a| a[1] - a[0]).product();
        let per_axis: Vec<Vec<f64>> = prior
            .components
            .iter()
            .zip(&axes)
            .map(|(c, a)| a.iter().map(|&x| c.log_density(x)).collect())
            .collect();
        let total: usize = nodes.iter().product();
        let mut log_mass = vec![0.0; total];
        let mut idx = vec![0usize; axes.len()];
        for lm in log_mass.iter_mut() {
            *lm = idx.iter().enumerate().map(|(d, &i)| per_axis[d][i]).sum();
            increment(&mut idx, nodes);
        }
        normalize_log(&mut log_mass)?;
        Ok(Self {
            axes,
            log_mass,
            cell_volume,
        })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.log_mass.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn log_mass(&self) -> &[f64] {
        &self.log_mass
    }

    pub fn masses(&self) -> Vec<f64> {
        self.log_mass.iter().map(|l| l.exp()).collect()
    }

    /// Multi-index of flat node `i` (last axis fastest).
    pub fn node_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            let n = self.axes[d].len();
            idx[d] = i % n;
            i /= n;
        }
        idx
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        self.node_into(i, &mut theta);
        theta
    }

    pub fn node_into(&self, mut i: usize, theta: &mut [f64]) {
        for d in (0..self.axes.len()).rev() {
            let n = self.axes[d].len();
            theta[d] = self.axes[d][i % n];
            i /= n;
        }
    }

    pub fn same_axes(&self, other: &BeliefGrid) -> bool {
        self.axes == other.axes
    }

    /// Replaces the masses, renormalizing in log space.
    pub fn with_log_mass(&self, mut log_mass: Vec<f64>) -> Result<Self> {
        if log_mass.len() != self.log_mass.len() {
            return Err(Error::LengthMismatch {
                what: "log mass",
                expected: self.log_mass.len(),
                actual: log_mass.len(),
            });
        }
        if log_mass.iter().any(|l| l.is_nan()) {
            return Err(Error::DegeneratePosterior);
        }
        normalize_log(&mut log_mass)?;
        Ok(Self {
            axes: self.axes.clone(),
            log_mass,
            cell_volume: self.cell_volume,
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        let mut theta = vec![0.0; self.dim()];
        for (i, lm) in self.log_mass.iter().enumerate() {
            let p = lm.exp();
            self.node_into(i, &mut theta);
            for (m, t) in mean.iter_mut().zip(&theta) {
                *m += p * t;
            }
        }
        mean
    }

    /// Per-dimension marginal variances.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut var = vec![0.0; self.dim()];
        let mut theta = vec![0.0; self.dim()];
        for (i, lm) in self.log_mass.iter().enumerate() {
            let p = lm.exp();
            self.node_into(i, &mut theta);
            for d in 0..self.dim() {
                let c = theta[d] - mean[d];
                var[d] += p * c * c;
            }
        }
        var
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}

/// `ln p(y | θ, d, I)` for a single parameter value.
pub fn log_likelihood(
    model: &dyn ForwardModel,
    theta: &[f64],
    ctx: &StageContext<'_>,
    y: &[f64],
    noise: &NoiseModel,
) -> Result<f64> {
    let g = model.bind(theta)?.predict(ctx)?;
    if g.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "observation",
            expected: g.len(),
            actual: y.len(),
        });
    }
    Ok(y.iter().zip(&g).map(|(&y, &g)| noise.log_pdf(y, g)).sum())
}

/// Adds stage `k`'s log-likelihood to every node.
fn accumulate_stage(
    log_mass: &mut [f64],
    grid: &BeliefGrid,
    problem: &ProblemSpec,
    history: &History,
    position: &[f64],
    k: usize,
) -> Result<()> {
    let stage = &history.stages()[k];
    let prefix = history.prefix(k);
    let ctx = StageContext {
        stage: k,
        design: &stage.design,
        position,
        history: &prefix,
    };
    let preds = problem.model.predict_on_grid(grid, &ctx)?;
    let ny = stage.observation.len();
    if preds.len() != grid.num_nodes() * ny {
        return Err(Error::LengthMismatch {
            what: "grid predictions",
            expected: grid.num_nodes() * ny,
            actual: preds.len(),
        });
    }
    let noise = problem.noise;
    for (lm, g) in log_mass.iter_mut().zip(preds.chunks_exact(ny)) {
        for (&y, &g) in stage.observation.iter().zip(g) {
            *lm += noise.log_pdf(y, g);
        }
    }
    Ok(())
}

/// Posterior after every stage of `history`, starting from `prior`.
pub fn posterior_from_history(
    prior: &BeliefGrid,
    problem: &ProblemSpec,
    history: &History,
) -> Result<BeliefGrid> {
    if history.is_empty() {
        return Ok(prior.clone());
    }
    let positions = problem.positions(history);
    let mut log_mass = prior.log_mass.clone();
    for k in 0..history.len() {
        accumulate_stage(&mut log_mass, prior, problem, history, positions[k + 1].as_slice(), k)?;
    }
    prior.with_log_mass(log_mass)
}

/// Beliefs `p(θ|I_0), …, p(θ|I_k)` for every prefix of `history`.
pub fn posterior_sequence(
    prior: &BeliefGrid,
    problem: &ProblemSpec,
    history: &History,
) -> Result<Vec<BeliefGrid>> {
    let positions = problem.positions(history);
    let mut out = Vec::with_capacity(history.len() + 1);
    out.push(prior.clone());
    let mut log_mass = prior.log_mass.clone();
    for k in 0..history.len() {
        accumulate_stage(&mut log_mass, prior, problem, history, positions[k + 1].as_slice(), k)?;
        out.push(prior.with_log_mass(log_mass.clone())?);
    }
    Ok(out)
}

/// `D_KL(post ‖ prior) = Σ p ln(p/q)` over nodes with `p > 0`.
pub fn kl_divergence(post: &BeliefGrid, prior: &BeliefGrid) -> Result<f64> {
    if !post.same_axes(prior) {
        return Err(Error::GridMismatch);
    }
    let mut kl = 0.0;
    for (&lp, &lq) in post.log_mass.iter().zip(&prior.log_mass) {
        let p = lp.exp();
        if p > 0.0 {
            kl += p * (lp - lq);
        }
    }
    Ok(kl.max(0.0))
}

/// Draw from the continuous prior.
pub fn sample_prior<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Vec<f64> {
    prior.components.iter().map(|c| c.sample(rng)).collect()
}

/// `y = G(θ, d; I) + ε`.
pub fn sample_observation<R: Rng + ?Sized>(
    model: &dyn ForwardModel,
    theta: &[f64],
    ctx: &StageContext<'_>,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let g = model.bind(theta)?.predict(ctx)?;
    Ok(noise.sample(&g, rng))
}
