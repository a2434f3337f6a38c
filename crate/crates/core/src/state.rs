//! Experiment histories, physical states and design feasibility.
//!
//! The belief state is never stored as a density: it is implied by the prior
//! together with the [`History`] of designs and observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One performed experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub design: Vec<f64>,
    pub observation: Vec<f64>,
}

/// The information set `I_k`: every design/observation pair so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    horizon: usize,
    stages: Vec<Stage>,
}

impl History {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            stages: Vec::with_capacity(horizon),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.stages.len() == self.horizon
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn designs(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.stages.iter().map(|s| s.design.as_slice())
    }

    pub fn observations(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.stages.iter().map(|s| s.observation.as_slice())
    }

    /// The first `k` stages as a history of the same horizon.
    pub fn prefix(&self, k: usize) -> History {
        History {
            horizon: self.horizon,
            stages: self.stages[..k.min(self.stages.len())].to_vec(),
        }
    }

    /// Returns a copy with `(design, observation)` appended.
    pub fn append(&self, design: &[f64], observation: &[f64]) -> Result<History> {
        if self.stages.len() >= self.horizon {
            return Err(Error::HorizonExceeded {
                horizon: self.horizon,
            });
        }
        let mut stages = self.stages.clone();
        stages.push(Stage {
            design: design.to_vec(),
            observation: observation.to_vec(),
        });
        Ok(History {
            horizon: self.horizon,
            stages,
        })
    }
}

/// Non-random, design-relevant variables such as a sensor position.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhysicalState(pub Vec<f64>);

impl PhysicalState {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Moves by `design`. Problems without a physical state stay empty.
    pub fn advance(&self, design: &[f64]) -> PhysicalState {
        if self.0.is_empty() {
            return self.clone();
        }
        PhysicalState(self.0.iter().zip(design).map(|(x, d)| x + d).collect())
    }
}

/// State `x_k` before the `k`-th experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub history: History,
    pub physical: PhysicalState,
}

impl State {
    pub fn initial(horizon: usize, physical: PhysicalState) -> Self {
        Self {
            history: History::new(horizon),
            physical,
        }
    }

    pub fn stage(&self) -> usize {
        self.history.len()
    }
}

/// Feasible set for the design at every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignConstraint {
    /// Each design component lies in `[lo[i], hi[i]]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// The design is a displacement; the resulting position must lie in the box.
    PositionBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl DesignConstraint {
    pub fn dim(&self) -> usize {
        match self {
            DesignConstraint::Box { lo, .. } | DesignConstraint::PositionBox { lo, .. } => lo.len(),
        }
    }

    /// Per-component feasible interval for a design issued from `position`.
    pub fn interval(&self, index: usize, position: &PhysicalState) -> (f64, f64) {
        match self {
            DesignConstraint::Box { lo, hi } => (lo[index], hi[index]),
            DesignConstraint::PositionBox { lo, hi } => {
                let x = position.0.get(index).copied().unwrap_or(0.0);
                (lo[index] - x, hi[index] - x)
            }
        }
    }

    /// Componentwise projection onto the feasible set.
    pub fn clamp(&self, design: &[f64], position: &PhysicalState) -> Vec<f64> {
        design
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let (lo, hi) = self.interval(i, position);
                d.clamp(lo, hi)
            })
            .collect()
    }

    pub fn check(&self, design: &[f64], position: &PhysicalState) -> Result<()> {
        if design.len() != self.dim() {
            return Err(Error::LengthMismatch {
                what: "design",
                expected: self.dim(),
                actual: design.len(),
            });
        }
        for (i, &d) in design.iter().enumerate() {
            let (lo, hi) = self.interval(i, position);
            let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            if !(d >= lo - tol && d <= hi + tol) {
                return Err(Error::BoundsViolation {
                    index: i,
                    value: d,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

/// Appends a stage after checking the horizon and design feasibility.
pub fn append_stage(
    history: &History,
    design: &[f64],
    observation: &[f64],
    constraint: &DesignConstraint,
    position: &PhysicalState,
) -> Result<History> {
    if history.is_complete() {
        return Err(Error::HorizonExceeded {
            horizon: history.horizon(),
        });
    }
    constraint.check(design, position)?;
    history.append(design, observation)
}

/// Projects `design` onto the feasible set of the state's stage.
pub fn clamp_design(design: &[f64], constraint: &DesignConstraint, state: &State) -> Vec<f64> {
    constraint.clamp(design, &state.physical)
}

/// One simulated trajectory with an episode-fixed parameter draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub theta_true: Vec<f64>,
    pub history: History,
    /// Physical states `x_{0,p} .. x_{N,p}`.
    pub positions: Vec<PhysicalState>,
    pub stage_rewards: Vec<f64>,
    pub terminal_reward: f64,
}

impl Episode {
    pub fn horizon(&self) -> usize {
        self.history.horizon()
    }

    pub fn design(&self, k: usize) -> &[f64] {
        &self.history.stages()[k].design
    }

    pub fn observation(&self, k: usize) -> &[f64] {
        &self.history.stages()[k].observation
    }

    /// State `x_k` for `k = 0..=N`.
    pub fn state(&self, k: usize) -> State {
        State {
            history: self.history.prefix(k),
            physical: self.positions[k].clone(),
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.stage_rewards.iter().sum::<f64>() + self.terminal_reward
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lg_bounds() -> DesignConstraint {
        DesignConstraint::Box {
            lo: vec![0.1],
            hi: vec![3.0],
        }
    }

    #[test]
    fn append_to_empty_history() {
        let h = History::new(2);
        let h1 = append_stage(&h, &[0.5], &[1.2], &lg_bounds(), &PhysicalState::empty()).unwrap();
        assert_eq!(h1.len(), 1);
        assert_eq!(h1.stages()[0].design, vec![0.5]);
        assert_eq!(h1.stages()[0].observation, vec![1.2]);
        assert!(h.is_empty());
    }

    #[test]
    fn append_past_horizon_fails() {
        let b = lg_bounds();
        let p = PhysicalState::empty();
        let h = History::new(2);
        let h = append_stage(&h, &[0.5], &[1.0], &b, &p).unwrap();
        let h = append_stage(&h, &[0.5], &[1.0], &b, &p).unwrap();
        assert!(matches!(
            append_stage(&h, &[0.5], &[1.0], &b, &p),
            Err(Error::HorizonExceeded { horizon: 2 })
        ));
    }

    #[test]
    fn append_out_of_bounds_fails() {
        let h = History::new(2).append(&[0.5], &[1.2]).unwrap();
        let r = append_stage(&h, &[3.5], &[0.0], &lg_bounds(), &PhysicalState::empty());
        assert!(matches!(r, Err(Error::BoundsViolation { index: 0, .. })));
    }

    #[test]
    fn clamp_box() {
        let b = DesignConstraint::Box {
            lo: vec![-0.25, -0.25],
            hi: vec![0.25, 0.25],
        };
        let s = State::initial(2, PhysicalState(vec![0.5, 0.5]));
        assert_eq!(clamp_design(&[0.4, 0.1], &b, &s), vec![0.25, 0.1]);
        assert_eq!(clamp_design(&[0.1, -0.2], &b, &s), vec![0.1, -0.2]);
    }

    #[test]
    fn clamp_position_box() {
        let b = DesignConstraint::PositionBox {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let s = State::initial(4, PhysicalState(vec![0.9, 0.9]));
        let d = clamp_design(&[0.3, 0.3], &b, &s);
        assert!((d[0] - 0.1).abs() < 1e-15 && (d[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn episode_total_is_sum_of_parts() {
        let e = Episode {
            theta_true: vec![1.0],
            history: History::new(2),
            positions: vec![PhysicalState::empty(); 3],
            stage_rewards: vec![-0.1, -0.2],
            terminal_reward: 1.5,
        };
        assert_eq!(e.total_reward(), -0.1 + -0.2 + 1.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clamp_is_idempotent(
                d in proptest::collection::vec(-2.0f64..2.0, 2),
                x in proptest::collection::vec(0.0f64..1.0, 2),
                position_box in any::<bool>(),
            ) {
                let c = if position_box {
                    DesignConstraint::PositionBox { lo: vec![0.0; 2], hi: vec![1.0; 2] }
                } else {
                    DesignConstraint::Box { lo: vec![-0.25; 2], hi: vec![0.25; 2] }
                };
                let p = PhysicalState(x);
                let once = c.clamp(&d, &p);
                prop_assert_eq!(c.clamp(&once, &p), once.clone());
                prop_assert!(c.check(&once, &p).is_ok());
            }
        }
    }
}
