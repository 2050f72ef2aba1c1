//! Multi-objective robust representation learning.
//!
//! The crate trains image classifiers whose encoder features stay aligned
//! between natural inputs and their adversarial counterparts. Training runs
//! inside a temporary embedding space (linear projection plus class-adaptive
//! multi-head attention) that is dropped on export, so the deployed model keeps
//! its original architecture.
//!
//! Module map:
//!
//! - [`data`]: dataset loading (CIFAR binaries, seeded synthetic sets), batching,
//!   augmentation and the `[0, 1]` pixel-domain contract.
//! - [`nn`]: a small CPU network stack with explicit backward passes, the
//!   encoder/classifier split and the SGD optimizer.
//! - [`attacks`]: FGSM, PGD and an ℓ∞-bounded Carlini-Wagner margin attack.
//! - [`embedding`]: linear projection, class grouping, class-adaptive attention
//!   and reassembly with ℓ2 normalization.
//! - [`losses`]: cosine alignment, multi-positive contrastive, KL, TRADES, MART.
//! - [`scalarization`]: conic scalarization of the two objectives.
//! - [`training`]: the training step, `fit`, LR schedule and checkpoints.
//! - [`evaluation`]: clean/white-box/black-box accuracy and reports.
//! - [`config`] and [`cli`]: declarative run configuration, presets and the
//!   command implementations behind the `morel` binary.

pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod nn;
pub mod scalarization;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
