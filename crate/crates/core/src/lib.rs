//! Isotropic networks for masked-pixel pretraining.
//!
//! The crate covers a small reverse-mode tensor engine, the three pixel
//! encodings, the convolutional / mixer / transformer blocks, the masked-pixel
//! objective with Adam and a warmup-cosine schedule, per-layer linear probes,
//! and CIFAR-10 ingestion.

pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod encodings;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod imageio;
pub mod nn;
pub mod param;
pub mod probing;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use param::{ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
