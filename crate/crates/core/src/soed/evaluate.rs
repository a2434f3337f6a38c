use std::path::Path;

use serde::{Deserialize, Serialize};

use super::networks::DesignPolicy;
use super::simulate::{simulate_episodes, RewardFormulation, SimulationConfig, ThetaSampling};
use crate::error::Result;
use crate::problem::ProblemSpec;
use crate::state::Episode;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_lo: Vec<f64>,
    pub bin_hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Uniform bins over the observed range of `values`.
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        if values.is_empty() || bins == 0 {
            return Self {
                bin_lo: Vec::new(),
                bin_hi: Vec::new(),
                counts: Vec::new(),
            };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            hi = lo + 1e-9 * lo.abs().max(1.0);
        }
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / w) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self {
            bin_lo: (0..bins).map(|b| lo + w * b as f64).collect(),
            bin_hi: (0..bins).map(|b| if b + 1 == bins { hi } else { lo + w * (b + 1) as f64 }).collect(),
            counts,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for ((lo, hi), c) in self.bin_lo.iter().zip(&self.bin_hi).zip(&self.counts) {
            w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    pub standard_error: f64,
    pub histogram: Histogram,
    pub episodes: Vec<Episode>,
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl Evaluation {
    pub fn totals(&self) -> Vec<f64> {
        self.episodes.iter().map(Episode::total_reward).collect()
    }

    /// Rows `episode,k,d…,y…,g_k,total`; the row with `k = N` carries `g_N`.
    pub fn write_episodes_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let (nd, ny) = self
            .episodes
            .first()
            .map(|e| (e.design(0).len(), e.observation(0).len()))
            .unwrap_or((1, 1));
        let mut header = vec!["episode".to_string(), "k".to_string()];
        header.extend((0..nd).map(|i| format!("d{i}")));
        header.extend((0..ny).map(|i| format!("y{i}")));
        header.extend(["g_k".to_string(), "total".to_string()]);
        w.write_record(&header)?;
        for (i, e) in self.episodes.iter().enumerate() {
            let total = e.total_reward().to_string();
            for k in 0..=e.horizon() {
                let mut row = vec![i.to_string(), k.to_string()];
                if k < e.horizon() {
                    row.extend(e.design(k).iter().map(f64::to_string));
                    row.extend(e.observation(k).iter().map(f64::to_string));
                    row.push(e.stage_rewards[k].to_string());
                } else {
                    row.extend(std::iter::repeat(String::new()).take(nd + ny));
                    row.push(e.terminal_reward.to_string());
                }
                row.push(total.clone());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates `n_eval` episodes without exploration on the evaluation grid
/// with the terminal reward formulation.
pub fn evaluate_policy(
    policy: &dyn DesignPolicy,
    problem: &ProblemSpec,
    n_eval: usize,
    seed: u64,
) -> Result<Evaluation> {
    let cfg = SimulationConfig {
        episodes: n_eval,
        sigma_explore: 0.0,
        seed,
        epoch: u64::MAX,
        eval_grid: true,
        formulation: RewardFormulation::Terminal,
        theta_sampling: ThetaSampling::EpisodeFixed,
    };
    let episodes = if n_eval == 0 {
        Vec::new()
    } else {
        simulate_episodes(policy, problem, &cfg)?
    };
    let totals: Vec<f64> = episodes.iter().map(Episode::total_reward).collect();
    let (mean, standard_error) = mean_and_se(&totals);
    Ok(Evaluation {
        mean,
        standard_error,
        histogram: Histogram::from_values(&totals, HISTOGRAM_BINS),
        episodes,
    })
}
