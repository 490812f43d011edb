//! The trainable proposal network: a temporal base, start/end boundary heads
//! and proposal-confidence heads over the masked dense proposal tensor.

mod config;
mod io;
mod layers;
mod loss;
mod network;
mod params;
mod train;

pub use config::ModelConfig;
pub use io::{
    load_model, load_outputs, model_from_bytes, model_to_bytes, outputs_from_bytes, outputs_to_bytes, save_model,
    save_outputs, MODEL_MAGIC, OUTPUTS_MAGIC,
};
pub use loss::{boundary_labels, pem_loss, tem_loss, BoundaryLabels, PemLoss, PemLossConfig};
pub use network::{Network, NetworkOutputs};
pub use params::{ModelParams, Tensor};
pub use train::{
    batch_loss, compute_gradients, epoch_list, example_rng, train, train_from, EpochLog, Example, TrainLog,
};
