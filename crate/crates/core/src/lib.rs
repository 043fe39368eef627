//! Local-domain image translation: geometric priors, patch extraction, a patch
//! GAN, a mask VAE for latent interpolation, full-image stitching and metrics.

pub mod archive;
pub mod error;
pub mod eval;
pub mod filters;
pub mod gan;
pub mod image;
pub mod inference;
pub mod patches;
pub mod priors;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
pub use image::{Grid, Image, Mask};
