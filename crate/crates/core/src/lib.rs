//! Lesion segmentation engine: an FC-DenseNet backbone with squeeze-and-attention
//! blocks on both paths and a convolutional LSTM bottleneck that fuses a
//! (previous, center, next) slice triplet into a center-slice mask.
//!
//! The crate is self-contained. [`tensor`] is a small 64-bit reverse-mode
//! autodiff engine, [`nn`] holds the composite blocks, [`model`] wires them
//! into the network, [`data`] covers volume I/O and preprocessing,
//! [`metrics`] the overlap scores, and [`train`] the Dice-loss SGD loop with
//! checkpointing.
//!
//! Kernels run data-parallel on rayon when the `parallel` feature is on (the
//! default). Every parallel kernel partitions its output so each element is
//! produced by exactly one sequential loop, so results are bit-identical with
//! and without the feature.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod overlay;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
