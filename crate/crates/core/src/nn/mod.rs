//! Dense feed-forward networks with exact reverse-mode gradients.

mod adam;
mod gradcheck;
mod loss;
mod mlp;
mod scaler;

pub use adam::{AdamState, ParamSet, ScalarParam};
pub(crate) use gradcheck::residual_signature;
pub use gradcheck::{compare_gradients, gradient_check, GradCheckReport};
pub use loss::{loss, loss_grad, LossKind};
pub use mlp::{backward, forward, forward_vec, init_mlp, Activation, ForwardCache, Layer, MlpParams, MlpSpec};
pub use scaler::Scaler;
