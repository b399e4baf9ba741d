//! X-Linear attention captioning: bilinear-pooled spatial/channel
//! attention blocks, an encoder-decoder caption model built from them,
//! two-phase training (cross-entropy, then self-critical reward),
//! decoding, and a synthetic task plus file formats for desk-scale
//! verification.

pub mod ablate;
pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
