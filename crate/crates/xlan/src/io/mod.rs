//! Persistence: checkpoint container and attention-trace export.

pub mod checkpoint;
pub mod trace;
