//! Differentiable k-means tokenization jointly trained with two CTC heads.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core can be embedded
//! anywhere; file formats, the command line and threading live in the
//! companion `isib` crate.
//!
//! Pipeline, per utterance:
//!
//! ```text
//! features ──encoder──▶ H ──DiffKM(M)──▶ centroid embeddings ──head(L1|L2)──▶ logits ──CTC
//! ```
//!
//! Both heads share the encoder and the codebook `M`. Training is two-staged
//! (heads only, then everything) under the weighted loss
//! `(1 - alpha) * loss_l2 + alpha * loss_l1`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod math;

pub mod ctc;
pub mod diffkm;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod kmeans;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synthlang;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
