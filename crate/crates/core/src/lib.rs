//! Vision-transformer detector: a ViT encoder whose patch tokens are laid
//! back out as a feature map, a residual neck, and a two-stage
//! region-proposal detector, plus the data, training and evaluation tooling
//! around it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod neck;
pub mod nn;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
