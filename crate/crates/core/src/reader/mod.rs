//! The repurchase-aware predictor: dual towers, router, calibrator, and the
//! losses that tie them together.

pub mod check;
pub mod labels;
pub mod losses;
pub mod model;


use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{BlockRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
use crate::scalar::Scalar;

pub use check::{gradient_suite, GradSuiteReport, GRAD_TOLERANCE};
pub use labels::{online_target, overall_online_loss, pseudo_label, true_gap, PSEUDO_LABEL_CEILING};
pub use losses::{gra_loss, plu_loss, ClosedSample, PluLoss};
pub use model::{
    route_hard, route_three_zone, three_zone_weights, BlockId, BranchMode, ModelGrads, ReaderConfig, ReaderModel,
    ReaderOptimizer, RoutedPrediction, Routing, Zone,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: ReaderConfig,
    pub blocks: Vec<BlockRecord>,
}

impl ReaderCheckpoint {
    pub fn from_model<S: Scalar>(model: &ReaderModel<S>) -> Self {
        ReaderCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            blocks: model
                .blocks()
                .map(|(id, b)| BlockRecord::from_params(id.name(), b))
                .collect(),
        }
    }

    pub fn to_model<S: Scalar>(&self) -> Result<ReaderModel<S>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut blocks: [Option<_>; model::BLOCK_COUNT] = Default::default();
        for rec in &self.blocks {
            let id = BlockId::parse(&rec.name)
                .ok_or_else(|| Error::Config(format!("unknown checkpoint block {}", rec.name)))?;
            if blocks[id.index()].is_some() {
                return Err(Error::Config(format!("duplicate checkpoint block {}", rec.name)));
            }
            blocks[id.index()] = Some(rec.to_params::<S>()?);
        }
        ReaderModel::from_blocks(self.config.clone(), blocks)
    }
}

pub fn save_checkpoint<S: Scalar>(model: &ReaderModel<S>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&ReaderCheckpoint::from_model(model))?;
    write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ReaderModel<S>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: ReaderCheckpoint = serde_json::from_str(&text)?;
    ckpt.to_model()
}
