//! Differentiable building blocks with hand-written backward passes.

pub mod affine;
pub mod attention;
pub mod embedding;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod tensor;

pub use affine::{affine_forward, Affine};
pub use attention::{attention_pool, AttentionPool};
pub use embedding::Embedding;
pub use gradcheck::{grad_check, GradCheckReport, GradFragment};
pub use loss::{softmax_cross_entropy, ClassWeights};
pub use lstm::{blstm_forward, Blstm, LstmDirection};
pub use optim::sgd_step;
pub use tensor::{softmax, Param, Tensor};
