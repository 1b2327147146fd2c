//! Conditional GAN engine and pipeline for synthetic polyp image generation.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod genpipe;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
