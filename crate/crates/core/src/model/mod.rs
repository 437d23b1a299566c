//! Row and column GCNs with ordinal heads for logical-location prediction.

pub mod net;
pub mod ordinal;
pub mod params;
pub mod train;

pub use net::{forward, loss_and_grad, HeadProbs, Objective};
pub use ordinal::{
    class_priors, decode, decode_slice, encode, focal_gamma, gamma_for_prior, ordinal_ce_loss, ordinal_focal_loss,
    ClassPrior, FocalVariant, LossKind, OrdinalTarget,
};
pub use params::{Dense, Head, Model, ModelParams, MODEL_FORMAT};
pub use train::{inverted_count, predict, predict_probs, train, train_with, TrainConfig, DEFAULT_EPOCHS};
