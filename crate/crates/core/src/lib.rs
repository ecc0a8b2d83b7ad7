//! Cold-start active learning for binary image segmentation.
//!
//! The pipeline pretrains a U-Net by reconstructing deformed images, clusters
//! pooled bottleneck features to pick a representative annotation set, then
//! trains a warm-started segmentation model with a cross-entropy + Dice loss
//! and grows the labeled set over a fixed number of query rounds.

pub mod cluster;
pub mod deform;
pub mod error;
pub mod experiment;
pub mod features;
pub mod imaging;
pub mod net;
pub mod rng;
pub mod select;
pub mod seg;
pub mod ssl;

pub use error::{Error, Result};
