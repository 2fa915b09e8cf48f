//! Minimal dense-network engine: hashed embeddings, MLP blocks, losses, Adam and
//! finite-difference gradient verification.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport, Parameters};
pub use layers::{Activation, BlockGrads, BlockSpec, Dense, EmbeddingTable, NetworkParams, Trace};
pub use loss::{bce_loss, log_mae_loss, mae_loss};
