//! Mask VAE: ELBO training, latent interpolation and blending.

mod interp;
mod model;

pub use interp::{blend, interpolate_latent, interpolated_mask, BlendRecipe, MaskEncoder, Sampling, ZGamma};
pub(crate) use interp::{check_unit, mix, reparametrize};
pub use model::{
    elbo_loss, gaussian_kl, mask_iou, resize_mask, train_vae, Elbo, MaskVae, VaeConfig, VaeLossRecord, VaeReport,
    EPS_BERNOULLI,
};
