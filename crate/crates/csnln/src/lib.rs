//! Cross-scale non-local attention and a recurrent super-resolution network,
//! implemented from scratch on a small NCHW tensor core with reverse-mode
//! autodiff.
//!
//! Layered bottom-up:
//!
//! * [`tensor`] / [`ops`] / [`tape`]: 4-D tensors, the differentiable
//!   operation set (convolution, transposed convolution, patch
//!   extraction/folding, bilinear resize, softmax, PReLU, ...), and the
//!   gradient tape that records executed ops for reverse replay.
//! * [`gradcheck`]: central finite-difference verification of every
//!   differentiable op and of full networks.
//! * [`attention`]: the non-local attention family. In-scale attention matches
//!   every query pixel against all pixels of its region; the cross-scale
//!   variants match queries against a bilinearly downscaled mirror of the
//!   feature map and paste back full-resolution evidence patches. A
//!   brute-force quadruple-loop oracle ships alongside the fast paths.
//! * [`sem`]: the self-exemplar mining cell that fuses the local, in-scale,
//!   and cross-scale branches with mutual projections and a back-projection
//!   residual.
//! * [`network`]: the recurrent super-resolution model built from a shared
//!   cell, plus parameter counting and presets.
//! * [`adam`] / [`config`] / [`synth`] / [`train`]: optimizer, flat key=value
//!   run configuration, the synthetic periodic-texture dataset, and the
//!   deterministic, resumable training loop.
//! * [`imgio`] / [`resample`] / [`metrics`] / [`checkpoint`]: PNG I/O,
//!   BT.601 luma conversion, bicubic resampling, Y-channel PSNR/SSIM, and the
//!   binary checkpoint format.
//!
//! Determinism is a contract throughout: fixed reduction orders in every
//! kernel, a documented PCG32 stream scheme for all randomness, and
//! byte-stable checkpoints, so identical seeds give bit-identical runs.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod imgio;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod resample;
pub mod rng;
pub mod sem;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use attention::{AttentionParams, PsiMode};
pub use config::{Preset, TrainConfig};
pub use error::{Error, Result};
pub use network::{CsnlnParams, ModelConfig};
pub use sem::{SemBranches, SemParams};
pub use tape::{GradStore, GradTape};
pub use tensor::{Element, Shape, Tensor, TensorId};
