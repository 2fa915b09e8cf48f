//! Laboratory for delayed-feedback post-click GMV prediction.

pub mod config;
pub mod dataset;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod nn;
pub mod reader;
pub mod sample;
pub mod scalar;
pub mod stream;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ReaderModelF32 = reader::ReaderModel<f32>;
pub type ReaderModelF64 = reader::ReaderModel<f64>;
pub type ReaderOptimizerF32 = reader::ReaderOptimizer<f32>;
pub type ReaderOptimizerF64 = reader::ReaderOptimizer<f64>;
