use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::DesignMode;
use crate::error::{Error, Result};
use crate::nnet::{Arch, Checkpoint, EncoderSpec, Grads, Mlp};
use crate::problem::ProblemSpec;
use crate::state::History;

/// Anything that proposes an unclamped design for `(k, I_k)`.
pub trait DesignPolicy: Sync {
    fn act(&self, k: usize, history: &History) -> Result<Vec<f64>>;
}

/// A design rule given by a closure, for fixed or hand-written policies.
pub struct FnPolicy<F>(pub F);

impl<F> DesignPolicy for FnPolicy<F>
where
    F: Fn(usize, &History) -> Vec<f64> + Sync,
{
    fn act(&self, k: usize, history: &History) -> Result<Vec<f64>> {
        Ok((self.0)(k, history))
    }
}

/// Supplies `∇_d Q(k, I_k, d)` for the policy gradient.
pub trait Critic: Sync {
    /// One row per history; `designs` is `rows × N_d`.
    fn design_gradients(
        &self,
        k: usize,
        histories: &[&History],
        designs: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>>;
}

fn encode_rows(
    encoder: &EncoderSpec,
    k: usize,
    histories: &[&History],
    designs: Option<ArrayView2<'_, f64>>,
) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((histories.len(), encoder.input_len()));
    for (i, (h, mut row)) in histories.iter().zip(x.axis_iter_mut(Axis(0))).enumerate() {
        let out = row.as_slice_mut().expect("standard layout");
        match &designs {
            Some(d) => {
                let d = d.row(i).to_vec();
                encoder.encode_into(k, h, Some(&d), out)?
            }
            None => encoder.encode_into(k, h, None, out)?,
        }
    }
    Ok(x)
}

fn check_arch(net: &Mlp, input: usize, output: usize) -> Result<()> {
    if net.input_size() != input || net.output_size() != output {
        return Err(Error::ArchMismatch {
            expected: vec![input, output],
            found: vec![net.input_size(), net.output_size()],
        });
    }
    Ok(())
}

/// Shared policy network `μ_w(k, x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    pub encoder: EncoderSpec,
}

impl Policy {
    pub fn encoder_for(problem: &ProblemSpec, mode: DesignMode) -> EncoderSpec {
        EncoderSpec::policy(
            problem.horizon,
            problem.design_dim(),
            problem.obs_dim(),
            mode == DesignMode::Batch,
        )
    }

    pub fn new<R: Rng + ?Sized>(
        problem: &ProblemSpec,
        mode: DesignMode,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = Self::encoder_for(problem, mode);
        let arch = Arch::with_hidden(encoder.input_len(), hidden, problem.design_dim())?;
        Ok(Self {
            net: Mlp::new(&arch, rng),
            encoder,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.encoder.include_design {
            return Err(Error::Config(format!("checkpoint role `{}` is not a policy", ck.role)));
        }
        let net = ck.to_mlp()?;
        check_arch(&net, ck.encoder.input_len(), ck.encoder.design_dim)?;
        Ok(Self {
            net,
            encoder: ck.encoder,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new("policy", self.encoder, &self.net)
    }

    /// Fails with `ArchMismatch` when the network cannot drive `problem`.
    pub fn check_problem(&self, problem: &ProblemSpec) -> Result<()> {
        let e = &self.encoder;
        if e.horizon != problem.horizon
            || e.design_dim != problem.design_dim()
            || e.obs_dim != problem.obs_dim()
        {
            let full = EncoderSpec { batch_mode: e.batch_mode, ..Self::encoder_for(problem, DesignMode::Soed) };
            return Err(Error::ArchMismatch {
                expected: vec![full.input_len(), problem.design_dim()],
                found: vec![self.net.input_size(), self.net.output_size()],
            });
        }
        check_arch(&self.net, e.input_len(), problem.design_dim())
    }

    pub fn is_batch(&self) -> bool {
        self.encoder.batch_mode
    }

    pub fn encode(&self, k: usize, histories: &[&History]) -> Result<Array2<f64>> {
        encode_rows(&self.encoder, k, histories, None)
    }

    /// Raw designs for stage `k`, one row per history.
    pub fn forward_batch(&self, k: usize, histories: &[&History]) -> Result<Array2<f64>> {
        self.net.forward_batch(self.encode(k, histories)?.view())
    }

    /// `Σ_rows upstreamᵀ μ_w(k, x)` differentiated with respect to `w`.
    pub fn backward(&self, k: usize, histories: &[&History], upstream: ArrayView2<'_, f64>) -> Result<Grads> {
        let x = self.encode(k, histories)?;
        Ok(self.net.backward_batch(x.view(), upstream)?.1)
    }
}

impl DesignPolicy for Policy {
    fn act(&self, k: usize, history: &History) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.encoder.input_len()];
        self.encoder.encode_into(k, history, None, &mut x)?;
        let d = self.net.forward(&x)?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePolicyOutput { stage: k });
        }
        Ok(d)
    }
}

/// Q-network `Q_η(k, x_k, d_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub net: Mlp,
    pub encoder: EncoderSpec,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(problem: &ProblemSpec, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let encoder = EncoderSpec::q(problem.horizon, problem.design_dim(), problem.obs_dim());
        let arch = Arch::with_hidden(encoder.input_len(), hidden, 1)?;
        Ok(Self {
            net: Mlp::new(&arch, rng),
            encoder,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if !ck.encoder.include_design {
            return Err(Error::Config(format!("checkpoint role `{}` is not a Q-network", ck.role)));
        }
        let net = ck.to_mlp()?;
        check_arch(&net, ck.encoder.input_len(), 1)?;
        Ok(Self {
            net,
            encoder: ck.encoder,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new("q", self.encoder, &self.net)
    }

    pub fn encode(&self, k: usize, histories: &[&History], designs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        encode_rows(&self.encoder, k, histories, Some(designs))
    }

    pub fn values(&self, k: usize, histories: &[&History], designs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let x = self.encode(k, histories, designs)?;
        Ok(self.net.forward_batch(x.view())?.into_raw_vec())
    }
}

impl Critic for QNetwork {
    fn design_gradients(
        &self,
        k: usize,
        histories: &[&History],
        designs: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        let x = self.encode(k, histories, designs)?;
        let up = Array2::ones((histories.len(), 1));
        let (_, _, dx) = self.net.backward_batch(x.view(), up.view())?;
        let off = self.encoder.design_offset();
        Ok(dx.slice(ndarray::s![.., off..off + self.encoder.design_dim]).to_owned())
    }
}
