//! Minimal differentiable function approximators and optimizers.
//!
//! Analytic gradients only, checked against central finite differences; no
//! autodiff graph. Models store their parameters as one flat vector so
//! optimizers and gradient checks stay uniform across model kinds.

mod encoder;
mod model;
mod optim;

pub use encoder::{train_encoder, EncoderConfig, EncoderDecoder, EncoderTrainResult};
pub use model::{
    finite_diff_max_rel_err, mse_loss_and_upstream, Activation, InitScheme, LinearModel, Mlp,
    OutputActivation,
};
pub use optim::{Optimizer, OptimizerSpec};
