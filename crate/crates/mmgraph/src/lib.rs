//! Graph-based analysis of unaligned multimodal sequences: per-modality
//! graph convolutional encoders over constructed or learned adjacency
//! matrices, a graph pooling fusion network, and a scalar regression head,
//! trained with Adam on a reverse-mode autodiff tape.

pub mod adjacency;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod gpfn;
pub mod graphconv;
pub mod model;
pub mod parallel;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
