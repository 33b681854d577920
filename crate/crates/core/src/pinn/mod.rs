//! Per-component physics-informed networks: evaluation with exact
//! derivatives, dataset generation, training and persistence.

mod dataset;
mod io;
mod loss;
mod network;
mod optim;
mod train;

pub use dataset::{
    default_oracle, generate_dataset, generate_dataset_with, input_profile, sample_input, Dataset, LabeledPoint,
    Oracle, SamplingRanges, TrainingConfig,
};
pub use io::{load_network_set, load_weights, save_weights, weights_from_json, weights_to_json};
pub use loss::{loss, LossValue};
pub use network::{
    init_layers, wrap_angle, Activation, Evaluation, InputLayout, Layer, Norms, PinnInput, PinnMetadata, PinnWeights,
};
pub use optim::{strong_wolfe, Adam, IterStatus, Lbfgs};
pub use train::{
    build_norms, init_weights, train, train_on, train_with_progress, write_loss_history, LossRecord, TrainingOutcome,
    LOSS_HISTORY_SCHEMA,
};

#[cfg(test)]
pub(crate) mod testutil;

#[cfg(test)]
mod tests;
