//! LSTM-ANN regression head.
//!
//! Loadings `cᵗ` run through a two layer LSTM. Two small ReLU networks read
//! the top hidden state at every step: the predictor emits per-step score
//! estimates `ŷᵗ`, the attention network a scalar logit. A softmax over time
//! turns the logits into weights `aᵗ` and the prediction is `Σₜ aᵗ ŷᵗ`.
//!
//! Forward and backward passes are written out by hand. Gradients flow to
//! every weight and to the input sequence, the latter being what couples the
//! head to the loading updates.

mod adam;
mod network;
mod weights;

pub use adam::AdamState;
pub use network::{
    backward, backward_targets, forward, masked_mse, masked_mse_targets, softmax, ForwardTrace,
    Gradients,
};
pub use weights::{NetworkShape, NetworkWeights, TensorSpec};
