//! Contrastive fine-tuning with hardness-directed pair generation for small
//! dense networks.
//!
//! A batch is encoded to features `z`; hard positives and hard negatives are
//! synthesized in `z`-space by mixup; a projection head maps originals and
//! generated features to unit vectors `v` for a focal supervised contrastive
//! loss, while the classifier is trained with cross-entropy on originals and
//! soft-labelled generated samples. All gradients are written out by hand and
//! checked against finite differences.

// Negated comparisons reject NaN; index loops keep summation order explicit.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numkernel;
pub mod pairing;
pub mod rng;

pub use error::{Error, Result};
