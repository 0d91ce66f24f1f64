//! Neural networks whose linear maps are matrix product operators (MPOs).
//!
//! A weight matrix `W` of shape `N_y × N_x` is reindexed as a `2n`-index tensor
//! and stored as a chain of `n` local cores `w^(k)[j_k, i_k]`, each a
//! `D_{k-1} × D_k` matrix per index pair. The cores are trained directly by
//! backpropagation; the dense `W` is never formed on the training path.
//!
//! Batches are stored feature-major: the sample index is always the last
//! (fastest varying) axis of an activation tensor, so a batch of `B` flat
//! vectors of length `N` is a `[N, B]` tensor and a batch of images is
//! `[C, H, W, B]`.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature only enables
//! runtime CPU feature detection in the matrix kernels and `std::error::Error`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod data;
pub mod error;
pub mod linalg;
pub mod mpo;
pub mod network;
pub mod tensor;

pub use analysis::{bond_entropy, run_stats, EntropyReport, RunStatistics};
pub use data::{rank_truncate, Batch, DatasetSplit, TruncationSpec};
pub use error::{Error, Result};
pub use linalg::{svd, Svd};
pub use mpo::{compression_ratio, BondDims, MpoGradients, MpoLayer, MpoStructure};
pub use network::{
    build_fc2, build_lenet5, evaluate, train, Layer, LossValue, Network, RunReport,
    TrainingConfig, Variant,
};
pub use tensor::Tensor;
