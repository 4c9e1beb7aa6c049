//! Detection of two-step laundering flows in transaction logs.
//!
//! Transfers are modeled as two coupled sparse tensors, `P` for
//! source -> middle transfers and `Q` for middle -> destination transfers,
//! sharing the middle-account and attribute modes. [`detector::detect`]
//! peels the pair down to the coupled block with the highest flow score.
//! The remaining modules cover ingestion, synthetic injection and
//! evaluation.

pub mod detector;
pub mod error;
pub mod eval;
pub mod gp;
pub mod ingest;
pub mod metric;
pub mod pq;
pub mod synth;
pub mod tensor;

pub use detector::{detect, detect_with, peel_trace, DetectOptions, DetectionResult, Node, PeelStep};
pub use error::{Error, ErrorClass, Result};
pub use metric::{g_algorithmic, g_exact, MetricParams};
pub use tensor::{
    fiber_masses, total_block_mass, CoupledTensors, FiberKey, FlowBlock, ModeSchema, Role, RoleSets, TransferRecord,
};
