use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::MaskVae;
use crate::image::{Image, Mask};
use crate::{rng, Error, Result};

/// Anything that maps a mask patch to a latent code.
pub trait MaskEncoder {
    /// Posterior mean.
    fn encode_mean(&self, mask: &Mask) -> Result<Vec<f64>>;
    /// Reparametrised posterior sample.
    fn encode_sample(&self, mask: &Mask, rng: &mut rng::Rng) -> Result<Vec<f64>>;
}

impl MaskEncoder for MaskVae {
    fn encode_mean(&self, mask: &Mask) -> Result<Vec<f64>> {
        Ok(self.posterior(&[mask])?.remove(0).0)
    }

    fn encode_sample(&self, mask: &Mask, rng: &mut rng::Rng) -> Result<Vec<f64>> {
        let (mu, lv) = self.posterior(&[mask])?.remove(0);
        Ok(reparametrize(&mu, &lv, rng))
    }
}

pub(crate) fn reparametrize(mu: &[f64], logvar: &[f64], rng: &mut rng::Rng) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| {
            let e: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv).exp() * e
        })
        .collect()
}

/// Posterior means or samples.
pub enum Sampling<'a> {
    Deterministic,
    Stochastic(&'a mut rng::Rng),
}

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange { name, value })
    }
}

/// `h = z·E(p_α) + (1 − z)·E(p_β)`, elementwise.
pub fn interpolate_latent<E: MaskEncoder + ?Sized>(
    encoder: &E,
    p_alpha: &Mask,
    p_beta: &Mask,
    z: f64,
    mode: Sampling<'_>,
) -> Result<Vec<f64>> {
    check_unit("z", z)?;
    let (a, b) = match mode {
        Sampling::Deterministic => (encoder.encode_mean(p_alpha)?, encoder.encode_mean(p_beta)?),
        Sampling::Stochastic(r) => (encoder.encode_sample(p_alpha, r)?, encoder.encode_sample(p_beta, r)?),
    };
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("latents of length {} and {}", a.len(), b.len())));
    }
    Ok(mix(&a, &b, z))
}

pub(crate) fn mix(a: &[f64], b: &[f64], z: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a * z + b * (1.0 - z)).collect()
}

/// Decoded interpolation `p_z = D(h_z)`.
pub fn interpolated_mask(vae: &MaskVae, p_alpha: &Mask, p_beta: &Mask, z: f64, mode: Sampling<'_>) -> Result<Mask> {
    let h = interpolate_latent(vae, p_alpha, p_beta, z, mode)?;
    Ok(vae.decode(&[h])?.remove(0))
}

/// Blend parameters and the decoded mask they act on.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendRecipe {
    pub z: f64,
    pub gamma: f64,
    pub p_z: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZGamma {
    pub z: f64,
    pub gamma: f64,
}

impl BlendRecipe {
    pub fn new(z: f64, gamma: f64, p_z: Mask) -> Result<Self> {
        check_unit("z", z)?;
        check_unit("gamma", gamma)?;
        Ok(Self { z, gamma, p_z })
    }

    pub fn apply(&self, x_alpha: &Image, x_beta: &Image) -> Result<Image> {
        blend(x_alpha, x_beta, &self.p_z, self.gamma)
    }
}

/// `x_z = x_α·m + x_β·(1 − m)` with `m = γ·p_z`, per pixel.
pub fn blend(x_alpha: &Image, x_beta: &Image, p_z: &Mask, gamma: f64) -> Result<Image> {
    check_unit("gamma", gamma)?;
    if !x_alpha.same_shape(x_beta) || p_z.dims() != x_alpha.dims() {
        return Err(Error::ShapeMismatch(format!(
            "blend of {:?}x{} and {:?}x{} with mask {:?}",
            x_alpha.dims(),
            x_alpha.channels(),
            x_beta.dims(),
            x_beta.channels(),
            p_z.dims()
        )));
    }
    let c = x_alpha.channels();
    let g = gamma as f32;
    let mut out = x_beta.clone();
    for (i, (o, &a)) in out.data_mut().iter_mut().zip(x_alpha.data()).enumerate() {
        let m = g * p_z.data()[i / c];
        let b = *o;
        *o = (a * m + b * (1.0 - m)).clamp(a.min(b), a.max(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Stub;

    impl MaskEncoder for Stub {
        fn encode_mean(&self, m: &Mask) -> Result<Vec<f64>> {
            Ok(if m.get(0, 0) > 0.5 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        }
        fn encode_sample(&self, m: &Mask, _: &mut rng::Rng) -> Result<Vec<f64>> {
            self.encode_mean(m)
        }
    }

    #[test]
    fn stub_midpoint() {
        let (a, b) = (Mask::new(2, 2, 1.0), Mask::new(2, 2, 0.0));
        assert_eq!(interpolate_latent(&Stub, &a, &b, 0.5, Sampling::Deterministic).unwrap(), vec![0.5, 0.5]);
        assert_eq!(interpolate_latent(&Stub, &a, &b, 1.0, Sampling::Deterministic).unwrap(), vec![1.0, 0.0]);
        assert_eq!(interpolate_latent(&Stub, &a, &b, 0.0, Sampling::Deterministic).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(
            interpolate_latent(&Stub, &a, &b, 1.5, Sampling::Deterministic),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn blend_examples() {
        let a = Image::filled(3, 3, 3, 1.0);
        let b = Image::filled(3, 3, 3, 0.0);
        let ones = Mask::new(3, 3, 1.0);
        assert_eq!(blend(&a, &b, &ones, 0.0).unwrap(), b);
        assert_eq!(blend(&a, &b, &ones, 1.0).unwrap(), a);
        assert!(blend(&a, &b, &ones, 0.75).unwrap().data().iter().all(|&v| v == 0.75));
        let small = Image::filled(2, 3, 3, 0.0);
        assert!(matches!(blend(&a, &small, &ones, 0.5), Err(Error::ShapeMismatch(_))));
    }
}
