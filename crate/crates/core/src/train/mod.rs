//! Adam and the seeded few-shot training protocol.

pub mod adam;
pub mod protocol;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use protocol::{
    evaluate, generalization_gap, run_protocol, run_protocol_with, EvalMetrics, RunRecord, TrainProtocol,
    PROTOCOL_SEEDS, RUN_SCHEMA_VERSION,
};
