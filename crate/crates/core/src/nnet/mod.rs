//! Dense networks with reverse-mode gradients, optimizers and the stage/history
//! input encoders shared by the policy and Q networks.

pub mod checkpoint;
pub mod encode;
pub mod mlp;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use encode::{encode_policy_input, encode_q_input, EncoderSpec};
pub use mlp::{Arch, Dense, Grads, Mlp};
pub use optim::{adam_step, Direction, Optimizer, OptimizerKind};
