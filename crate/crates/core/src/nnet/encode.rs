//! Fixed-length network inputs built from a stage index and a history.
//!
//! Layout: `[e_{k+1} | d_0 … d_{N−2} | y_0 … y_{N−2} | d?]`, where entries of
//! experiments not yet performed are zero and the trailing design block is
//! present only for Q-network inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::History;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub horizon: usize,
    pub design_dim: usize,
    pub obs_dim: usize,
    /// Append the candidate design (Q-network input).
    pub include_design: bool,
    /// Keep only the stage one-hot (batch-design policies).
    pub batch_mode: bool,
}

impl EncoderSpec {
    pub fn policy(horizon: usize, design_dim: usize, obs_dim: usize, batch_mode: bool) -> Self {
        Self {
            horizon,
            design_dim,
            obs_dim,
            include_design: false,
            batch_mode,
        }
    }

    pub fn q(horizon: usize, design_dim: usize, obs_dim: usize) -> Self {
        Self {
            horizon,
            design_dim,
            obs_dim,
            include_design: true,
            batch_mode: false,
        }
    }

    fn history_slots(&self) -> usize {
        if self.batch_mode {
            0
        } else {
            self.horizon - 1
        }
    }

    pub fn input_len(&self) -> usize {
        let base = self.horizon + self.history_slots() * (self.design_dim + self.obs_dim);
        base + if self.include_design { self.design_dim } else { 0 }
    }

    /// Offset of the candidate-design block in a Q input.
    pub fn design_offset(&self) -> usize {
        self.horizon + self.history_slots() * (self.design_dim + self.obs_dim)
    }

    /// Writes the encoding into `out` (length [`input_len`](Self::input_len)).
    pub fn encode_into(&self, k: usize, history: &History, design: Option<&[f64]>, out: &mut [f64]) -> Result<()> {
        if k >= self.horizon {
            return Err(Error::InvalidArgument(format!(
                "stage {k} outside horizon {}",
                self.horizon
            )));
        }
        if history.len() != k {
            return Err(Error::LengthMismatch {
                what: "history",
                expected: k,
                actual: history.len(),
            });
        }
        if out.len() != self.input_len() {
            return Err(Error::LengthMismatch {
                what: "encoding buffer",
                expected: self.input_len(),
                actual: out.len(),
            });
        }
        out.fill(0.0);
        out[k] = 1.0;
        if !self.batch_mode {
            let d_base = self.horizon;
            let y_base = d_base + self.history_slots() * self.design_dim;
            for (l, stage) in history.stages().iter().enumerate() {
                if stage.design.len() != self.design_dim || stage.observation.len() != self.obs_dim {
                    return Err(Error::ShapeMismatch(format!("stage {l} has wrong dimensions")));
                }
                let d0 = d_base + l * self.design_dim;
                out[d0..d0 + self.design_dim].copy_from_slice(&stage.design);
                let y0 = y_base + l * self.obs_dim;
                out[y0..y0 + self.obs_dim].copy_from_slice(&stage.observation);
            }
        }
        match (self.include_design, design) {
            (true, Some(d)) => {
                if d.len() != self.design_dim {
                    return Err(Error::LengthMismatch {
                        what: "design",
                        expected: self.design_dim,
                        actual: d.len(),
                    });
                }
                let off = self.design_offset();
                out[off..off + self.design_dim].copy_from_slice(d);
            }
            (false, None) => {}
            (true, None) => return Err(Error::InvalidArgument("Q input needs a design".into())),
            (false, Some(_)) => {
                return Err(Error::InvalidArgument("policy input takes no design".into()))
            }
        }
        Ok(())
    }

    /// Recovers `(k, history, design)` from an encoding.
    pub fn decode(&self, v: &[f64]) -> Result<(usize, History, Option<Vec<f64>>)> {
        if v.len() != self.input_len() {
            return Err(Error::LengthMismatch {
                what: "encoding",
                expected: self.input_len(),
                actual: v.len(),
            });
        }
        let k = v[..self.horizon]
            .iter()
            .position(|&x| x == 1.0)
            .ok_or_else(|| Error::InvalidArgument("missing stage one-hot".into()))?;
        let mut history = History::new(self.horizon);
        if !self.batch_mode {
            let d_base = self.horizon;
            let y_base = d_base + self.history_slots() * self.design_dim;
            for l in 0..k {
                let d = &v[d_base + l * self.design_dim..d_base + (l + 1) * self.design_dim];
                let y = &v[y_base + l * self.obs_dim..y_base + (l + 1) * self.obs_dim];
                history = history.append(d, y)?;
            }
        }
        let design = self.include_design.then(|| {
            let off = self.design_offset();
            v[off..off + self.design_dim].to_vec()
        });
        Ok((k, history, design))
    }
}

/// Policy-network input for stage `k`.
pub fn encode_policy_input(k: usize, history: &History, spec: &EncoderSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.input_len()];
    spec.encode_into(k, history, None, &mut out)?;
    Ok(out)
}

/// Q-network input for stage `k` and candidate design `d`.
pub fn encode_q_input(k: usize, history: &History, d: &[f64], spec: &EncoderSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.input_len()];
    spec.encode_into(k, history, Some(d), &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_history_is_zero_padded() {
        let spec = EncoderSpec::policy(2, 1, 1, false);
        let v = encode_policy_input(0, &History::new(2), &spec).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_stage_layout() {
        let spec = EncoderSpec::policy(2, 1, 1, false);
        let h = History::new(2).append(&[0.5], &[1.2]).unwrap();
        assert_eq!(encode_policy_input(1, &h, &spec).unwrap(), vec![0.0, 1.0, 0.5, 1.2]);
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(EncoderSpec::policy(4, 2, 1, false).input_len(), 13);
        assert_eq!(EncoderSpec::q(4, 2, 1).input_len(), 15);
        assert_eq!(EncoderSpec::policy(4, 2, 1, true).input_len(), 4);
    }

    #[test]
    fn q_input_appends_design() {
        let spec = EncoderSpec::q(2, 1, 1);
        let v = encode_q_input(0, &History::new(2), &[0.7], &spec).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 0.7]);
        assert!(encode_q_input(0, &History::new(2), &[], &spec).is_err());
    }

    #[test]
    fn history_length_must_match_stage() {
        let spec = EncoderSpec::policy(2, 1, 1, false);
        let r = encode_policy_input(1, &History::new(2), &spec);
        assert!(matches!(r, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn batch_mode_ignores_history() {
        let spec = EncoderSpec::policy(3, 2, 1, true);
        let a = History::new(3).append(&[0.1, 0.2], &[5.0]).unwrap();
        let b = History::new(3).append(&[-0.2, 0.0], &[-1.0]).unwrap();
        assert_eq!(
            encode_policy_input(1, &a, &spec).unwrap(),
            encode_policy_input(1, &b, &spec).unwrap()
        );
        assert_eq!(encode_policy_input(1, &a, &spec).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encoding_round_trips(
                k in 0usize..4,
                vals in proptest::collection::vec(-3.0f64..3.0, 12),
                d in proptest::collection::vec(-1.0f64..1.0, 2),
            ) {
                let spec = EncoderSpec::q(4, 2, 1);
                let mut h = History::new(4);
                for l in 0..k {
                    h = h.append(&vals[3 * l..3 * l + 2], &vals[3 * l + 2..3 * l + 3]).unwrap();
                }
                let v = encode_q_input(k, &h, &d, &spec).unwrap();
                let (k2, h2, d2) = spec.decode(&v).unwrap();
                prop_assert_eq!(k2, k);
                prop_assert_eq!(h2, h);
                prop_assert_eq!(d2, Some(d));
            }
        }
    }
}
