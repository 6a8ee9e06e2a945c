//! Toy-scale EP predictor: autodiff tape, layers, polynomial reconstruction,
//! encoder/decoder network, variant losses, and the trainer.

pub mod layers;
pub mod loss;
pub mod net;
pub mod reconstruct;
pub mod tape;
pub mod train;

pub use loss::{variant_loss, AgentPredictions, LossBreakdown};
pub use net::{EPConfig, EpModel, ModePrediction, PredictionSet, Variant};
pub use reconstruct::{
    build_observation_matrix, reconstruct_trajectory, ObservationMatrix, StateVector14,
};
pub use tape::{Matrix, Tape};
pub use train::{train, TrainLogRow, TrainOutcome};
