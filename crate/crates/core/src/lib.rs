//! Conditional GAN augmentation with feature-based filtering of the
//! synthetic pool, on a procedural four-class image corpus.

pub mod classify;
pub mod datapipe;
pub mod error;
pub mod expcli;
pub mod featfilter;
pub mod gan;
pub mod layers;
pub mod rng;

pub use error::{Error, Result};
