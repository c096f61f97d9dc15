//! Higher-order attention for multivariate time series.
//!
//! This crate implements attention over third-order inputs `(variables,
//! timesteps, features)` in three interchangeable forms: an exact
//! fourth-order reference, a Kronecker-factored approximation built from
//! stock-wise and time-wise attention matrices, and a kernelized linear
//! variant. Around them sits the machinery needed to use them end to end:
//!
//! - [`tensor`]: dense tensor algebra (matricization, mode-n products,
//!   Kronecker products, slices, reshapes);
//! - [`autodiff`]: a small tape-based reverse-mode engine over the op set,
//!   with Adam and finite-difference gradient checking;
//! - [`attention`]: the attention variants under one configuration type;
//! - [`kron`]: nearest Kronecker-product decomposition of attention
//!   matrices via rearrangement and an in-repo Jacobi SVD;
//! - [`model`]: a multimodal encoder-decoder classifier (RMSNorm pre-norm,
//!   rotary time embeddings, per-stock CLS tokens, cross-attention);
//! - [`data`] / [`synth`] / [`metrics`]: windowed dataset handling, a
//!   planted-signal synthetic generator, and classification metrics;
//! - [`train`] / [`ablate`] / [`verify`] / [`mod@bench`]: training with
//!   early stopping and manifests, ablation tables, invariant suites, and
//!   a complexity-scaling harness;
//! - [`cli`]: the `hoformer` command-line surface over all of the above.

pub mod ablate;
pub mod attention;
pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod kron;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;
