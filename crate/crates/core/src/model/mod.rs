//! LSTM regressor, optimizer, training loop and checkpoints.

mod adam;
mod checkpoint;
mod lstm;
mod train;

pub use adam::{Adam, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON, DEFAULT_LR};
pub use checkpoint::{read_checkpoint, write_checkpoint, write_loss_trace};
pub use lstm::{mse, n_params, squared_error, Cache, Lstm, ReluPlacement, DEFAULT_HIDDEN};
pub use train::{evaluate_loss, train, TrainConfig, TrainExample, Trained};
