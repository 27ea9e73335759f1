//! Hierarchical contrastive learning of skeleton action representations.
//!
//! A skeleton clip is encoded by a temporal branch (frames merged into ever
//! longer clips) and a spatial branch (joints merged into ever larger body
//! parts). Each branch stacks downsampling modules into a granularity
//! pyramid, encodes every level with one shared sequence encoder and
//! max-pools it into a vector. The per-level vectors are fused into domain
//! and instance features, and all four levels are trained jointly with
//! momentum-contrast InfoNCE losses.

pub mod augment;
mod binio;
pub mod config;
pub mod contrast;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
