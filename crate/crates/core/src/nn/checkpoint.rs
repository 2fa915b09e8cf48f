//! Versioned JSON checkpoints with a shape manifest.
//!
//! Values are stored as `f64`, which round-trips `f32` and `f64` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Activation, Dense, EmbeddingTable, NetworkParams};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "gmvlab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub fields: usize,
    pub buckets: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub name: String,
    pub embedding: Option<EmbeddingRecord>,
    pub extra_inputs: usize,
    pub layers: Vec<LayerRecord>,
}

fn to_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

impl BlockRecord {
    pub fn from_params<S: Scalar>(name: &str, p: &NetworkParams<S>) -> Self {
        BlockRecord {
            name: name.to_string(),
            embedding: p.embedding.as_ref().map(|e| EmbeddingRecord {
                fields: e.fields,
                buckets: e.buckets,
                dim: e.dim,
                weights: to_f64(&e.weights),
            }),
            extra_inputs: p.extra_inputs,
            layers: p
                .layers
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    activation: l.activation,
                    weights: to_f64(&l.weights),
                    bias: to_f64(&l.bias),
                })
                .collect(),
        }
    }

    pub fn to_params<S: Scalar>(&self) -> Result<NetworkParams<S>> {
        let embedding = self.embedding.as_ref().map(|e| EmbeddingTable {
            fields: e.fields,
            buckets: e.buckets,
            dim: e.dim,
            weights: from_f64(&e.weights),
        });
        let layers = self
            .layers
            .iter()
            .map(|l| Dense {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: from_f64(&l.weights),
                bias: from_f64(&l.bias),
                activation: l.activation,
            })
            .collect();
        NetworkParams::from_parts(embedding, self.extra_inputs, layers)
            .map_err(|e| Error::Config(format!("checkpoint block {}: {e}", self.name)))
    }
}
