//! Deterministic event replay: pretraining, the online regimes, and the
//! click-time inference log.

pub mod events;
pub mod log;
pub mod online;
pub mod pretrain;
pub mod regime;


pub use events::{build_stream, EventKind, ExperimentSplit, StreamEvent};
pub use log::{read_inference_log, render_inference_log, snapshot_eval, write_inference_log, InferenceRecord};
pub use online::{run_online, OnlineConfig, OnlineOutcome, StreamStats};
pub use pretrain::{calibrator_pairs, pretrain, GapPair, PretrainConfig, PretrainReport};
pub use regime::{DebiasFlags, RegimeKind, RoutingMode, TrainingRegime};
