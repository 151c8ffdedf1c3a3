//! Language-specific attention-head subnetworks in a micro multilingual
//! transformer: identification by iterative head pruning, sparse
//! fine-tuning through the subnetworks, and cross-language training-data
//! attribution with sketched TracIn.

pub mod error;
pub mod hashing;
pub mod linalg;
pub mod data;
pub mod model;
pub mod train;
pub mod prune;
pub mod influence;
pub mod analysis;
pub mod experiment;

pub use error::{Error, Result};
