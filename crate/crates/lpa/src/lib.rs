//! Desk-scale laboratory for low-dimensional projected attention (LPA).
//!
//! LPA replaces each dense weight matrix inside attention with a pair of
//! low-dimensional factors `W_A (d_in x r)` and `W_B (r x d_out)`, cutting
//! parameters and projection flops whenever `r < d_in*d_out/(d_in+d_out)`.
//! This crate provides everything needed to study that family on a CPU:
//!
//! * [`tensor`] — dense tensors with reverse-mode autodiff and a
//!   multiply-accumulate counter for flop accounting,
//! * [`layers`] — dense/factored linear modules, the four-sublayer causal
//!   attention layer, both feed-forward variants, and residual blocks in
//!   both normalization orders,
//! * [`model`] — full decoder-only language models assembled from a
//!   [`model::ModelConfig`], with binary checkpoints,
//! * [`accounting`] — closed-form parameter/flop arithmetic, savings
//!   thresholds, and the surplus-parameter reallocation solver,
//! * [`training`] — byte-level corpus pipeline, AdamW, warmup+cosine
//!   schedule, deterministic training loop, perplexity evaluation, and the
//!   multi-seed experiment runner,
//! * [`expconfig`]/[`presets`] — `key=value` experiment files and the
//!   compiled-in architecture presets,
//! * [`verify`] — the property suites behind `lpa verify`.
//!
//! All numerics are generic over the scalar type via [`scalar::Scalar`];
//! use the `*32`/`*64` aliases below for concrete precisions. Verification
//! runs in f64, training typically in f32.

pub mod accounting;
pub mod error;
pub mod expconfig;
pub mod layers;
pub mod model;
pub mod presets;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

/// 32-bit tensor, the training-mode element type.
pub type Tensor32 = tensor::Tensor<f32>;
/// 64-bit tensor, the verification-mode element type.
pub type Tensor64 = tensor::Tensor<f64>;

/// 32-bit model, the training-mode element type.
pub type Model32 = model::Model<f32>;
/// 64-bit model, the verification-mode element type.
pub type Model64 = model::Model<f64>;
