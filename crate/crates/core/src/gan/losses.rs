//! Scalar objectives of the patch GAN, computed in `f64` with analytic gradients.
//!
//! Each `*_grad` function returns the derivative of its scalar with respect to the
//! generated input, in the same layout as that input.

use crate::filters::{log_response, log_response_adjoint, Plane};
use crate::image::{Grid, Image};

/// Floor applied to the generated histogram before the logarithm.
pub const EPS_HIST: f64 = 1e-8;
/// Floor added to the LoG variance before inversion.
pub const EPS_FOCUS: f64 = 1e-6;
/// Standard deviation of the Gaussian in the LoG focus measure.
pub const SIGMA_LOG: f64 = 1.0;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// `E[(s - 1)²]`.
pub fn generator_loss(scores_fake: &[f64]) -> f64 {
    mean(scores_fake.iter().map(|s| (s - 1.0).powi(2)))
}

pub fn generator_loss_grad(scores_fake: &[f64]) -> Vec<f64> {
    let n = scores_fake.len().max(1) as f64;
    scores_fake.iter().map(|s| 2.0 * (s - 1.0) / n).collect()
}

/// `E[s_f²] + E[(s_r - 1)²]`.
pub fn discriminator_loss(scores_fake: &[f64], scores_real: &[f64]) -> f64 {
    mean(scores_fake.iter().map(|s| s * s)) + mean(scores_real.iter().map(|s| (s - 1.0).powi(2)))
}

/// Gradients with respect to `(scores_fake, scores_real)`.
pub fn discriminator_loss_grad(scores_fake: &[f64], scores_real: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nf = scores_fake.len().max(1) as f64;
    let nr = scores_real.len().max(1) as f64;
    (
        scores_fake.iter().map(|s| 2.0 * s / nf).collect(),
        scores_real.iter().map(|s| 2.0 * (s - 1.0) / nr).collect(),
    )
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Hard per-channel histogram over `[0, 1]`; bin `k` holds `[k/bins, (k+1)/bins)`,
/// with 1.0 falling into the last bin.
pub fn histogram(image: &Image, bins: usize) -> Vec<Vec<f64>> {
    assert!(bins >= 2, "histogram needs at least two bins");
    let c = image.channels();
    let n = (image.height() * image.width()).max(1) as f64;
    let mut h = vec![vec![0.0; bins]; c];
    for px in image.data().chunks(c) {
        for (ch, &v) in px.iter().enumerate() {
            let k = ((v.clamp(0.0, 1.0) as f64 * bins as f64) as usize).min(bins - 1);
            h[ch][k] += 1.0;
        }
    }
    for hc in &mut h {
        for v in hc.iter_mut() {
            *v /= n;
        }
    }
    h
}

/// Kernel-weighted histogram: each value spreads a unit mass over all bins with
/// normalised Gaussian weights centred on the bin centres (bandwidth half a bin).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftHistogram {
    pub bins: usize,
}

impl SoftHistogram {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 2, "histogram needs at least two bins");
        Self { bins }
    }

    fn bandwidth(&self) -> f64 {
        0.5 / self.bins as f64
    }

    fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.bins as f64
    }

    /// Unnormalised weights and their derivatives for one value.
    fn weights(&self, v: f64, w: &mut [f64], dw: &mut [f64]) {
        let s2 = self.bandwidth().powi(2);
        // Shift exponents by the nearest centre to avoid underflow of every weight.
        let nearest = (0..self.bins)
            .map(|k| (v - self.center(k)).powi(2))
            .fold(f64::INFINITY, f64::min);
        for k in 0..self.bins {
            let d = v - self.center(k);
            w[k] = (-(d * d - nearest) / (2.0 * s2)).exp();
            dw[k] = -d / s2 * w[k];
        }
    }

    /// Normalised histogram of `values`.
    pub fn compute(&self, values: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.bins];
        let (mut w, mut dw) = (vec![0.0; self.bins], vec![0.0; self.bins]);
        for &v in values {
            self.weights(v, &mut w, &mut dw);
            let s: f64 = w.iter().sum();
            for k in 0..self.bins {
                h[k] += w[k] / s;
            }
        }
        let n = values.len().max(1) as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    /// Pull back `upstream = dL/dh` to `dL/dvalues`.
    pub fn backward(&self, values: &[f64], upstream: &[f64]) -> Vec<f64> {
        let n = values.len().max(1) as f64;
        let (mut w, mut dw) = (vec![0.0; self.bins], vec![0.0; self.bins]);
        values
            .iter()
            .map(|&v| {
                self.weights(v, &mut w, &mut dw);
                let s: f64 = w.iter().sum();
                let ds: f64 = dw.iter().sum();
                let uw: f64 = upstream.iter().zip(&w).map(|(u, w)| u * w).sum();
                let udw: f64 = upstream.iter().zip(&dw).map(|(u, d)| u * d).sum();
                (udw / s - uw * ds / (s * s)) / n
            })
            .collect()
    }

    pub fn per_channel(&self, image: &Image) -> Vec<Vec<f64>> {
        (0..image.channels())
            .map(|ch| self.compute(&channel_values(image, ch)))
            .collect()
    }
}

fn channel_values(image: &Image, ch: usize) -> Vec<f64> {
    image
        .data()
        .iter()
        .skip(ch)
        .step_by(image.channels())
        .map(|&v| v as f64)
        .collect()
}

/// `Σ h_ref · log(h_ref / max(h_gen, ε))` with `0 · log 0 = 0`.
pub fn histogram_kl(h_ref: &[f64], h_gen: &[f64]) -> f64 {
    assert_eq!(h_ref.len(), h_gen.len(), "histograms must share a bin count");
    h_ref
        .iter()
        .zip(h_gen)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, g)| r * (r / g.max(EPS_HIST)).ln())
        .sum()
}

/// `d KL / d h_gen`; zero where the floor is active.
pub fn histogram_kl_grad(h_ref: &[f64], h_gen: &[f64]) -> Vec<f64> {
    h_ref
        .iter()
        .zip(h_gen)
        .map(|(r, g)| if *g > EPS_HIST { -r / g } else { 0.0 })
        .collect()
}

/// Channel-averaged KL between soft histograms of `reference` and `generated`,
/// with the gradient with respect to `generated`.
pub fn color_consistency(reference: &Image, generated: &Image, hist: SoftHistogram) -> (f64, Image) {
    assert!(reference.same_shape(generated), "color consistency on mismatched shapes");
    let c = generated.channels();
    let mut grad = Image::new(generated.height(), generated.width(), c);
    let mut total = 0.0;
    for ch in 0..c {
        let hr = hist.compute(&channel_values(reference, ch));
        let vals = channel_values(generated, ch);
        let hg = hist.compute(&vals);
        total += histogram_kl(&hr, &hg) / c as f64;
        let up: Vec<f64> = histogram_kl_grad(&hr, &hg).iter().map(|g| g / c as f64).collect();
        for (i, g) in hist.backward(&vals, &up).into_iter().enumerate() {
            grad.data_mut()[i * c + ch] = g as f32;
        }
    }
    (total, grad)
}

fn luminance_plane(image: &Image) -> Plane {
    let c = image.channels();
    let data = image
        .data()
        .chunks(c)
        .map(|p| match c {
            3 => p.iter().zip(LUMA).map(|(&v, w)| v as f64 * w).sum(),
            _ => p.iter().map(|&v| v as f64).sum::<f64>() / c as f64,
        })
        .collect();
    Grid::from_vec(image.height(), image.width(), data).expect("sized plane")
}

fn luminance_adjoint(d: &Plane, channels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.data().len() * channels);
    for &g in d.data() {
        for ch in 0..channels {
            out.push(match channels {
                3 => g * LUMA[ch],
                _ => g / channels as f64,
            });
        }
    }
    out
}

/// Variance of the LoG-filtered luminance.
pub fn log_variance_focus(image: &Image) -> f64 {
    let r = log_response(&luminance_plane(image), SIGMA_LOG);
    variance(r.data())
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// `d σ²_LoG / d pixels`, channel-interleaved like the image.
pub fn log_variance_focus_grad(image: &Image) -> Vec<f64> {
    let r = log_response(&luminance_plane(image), SIGMA_LOG);
    let n = r.data().len().max(1) as f64;
    let m = r.data().iter().sum::<f64>() / n;
    let d = r.map(|x| 2.0 * (x - m) / n);
    luminance_adjoint(&log_response_adjoint(&d, SIGMA_LOG), image.channels())
}

/// In-focus penalty `1 / (σ²_LoG + ε_f)`.
pub fn focus_penalty(image: &Image) -> f64 {
    1.0 / (log_variance_focus(image) + EPS_FOCUS)
}

pub fn focus_penalty_grad(image: &Image) -> Vec<f64> {
    let v = log_variance_focus(image) + EPS_FOCUS;
    let k = -1.0 / (v * v);
    log_variance_focus_grad(image).into_iter().map(|g| k * g).collect()
}

/// Colour-consistency plus in-focus objective for deblurring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeblurLoss {
    pub hist: SoftHistogram,
}

impl Default for DeblurLoss {
    fn default() -> Self {
        Self {
            hist: SoftHistogram::new(32),
        }
    }
}

impl DeblurLoss {
    pub fn value(&self, x: &Image, g_x: &Image) -> f64 {
        self.terms(x, g_x).0 + focus_penalty(g_x)
    }

    /// `(kl, focus)` components.
    pub fn terms(&self, x: &Image, g_x: &Image) -> (f64, f64) {
        let kl: f64 = (0..x.channels())
            .map(|ch| {
                histogram_kl(
                    &self.hist.compute(&channel_values(x, ch)),
                    &self.hist.compute(&channel_values(g_x, ch)),
                )
            })
            .sum::<f64>()
            / x.channels() as f64;
        (kl, focus_penalty(g_x))
    }

    /// Loss value and gradient with respect to `g_x`.
    pub fn value_and_grad(&self, x: &Image, g_x: &Image) -> (f64, Vec<f64>) {
        let (kl, kl_grad) = color_consistency(x, g_x, self.hist);
        let focus = focus_penalty(g_x);
        let grad = kl_grad
            .data()
            .iter()
            .zip(focus_penalty_grad(g_x))
            .map(|(&a, b)| a as f64 + b)
            .collect();
        (kl + focus, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lsgan_examples() {
        assert_eq!(generator_loss(&[1.0; 4]), 0.0);
        assert_eq!(generator_loss(&[0.5; 4]), 0.25);
        assert_eq!(generator_loss(&[0.0, 2.0]), 1.0);
        assert_eq!(discriminator_loss(&[0.0], &[1.0]), 0.0);
        assert_eq!(discriminator_loss(&[1.0], &[1.0]), 1.0);
        assert_eq!(discriminator_loss(&[1.0, -1.0], &[0.0]), 2.0);
    }

    #[test]
    fn hard_histogram_examples() {
        let zero = Image::new(4, 4, 3);
        for h in histogram(&zero, 4) {
            assert_eq!(h, vec![1.0, 0.0, 0.0, 0.0]);
        }
        let half = Image::from_fn(2, 4, 1, |_, x, _| if x < 2 { 0.0 } else { 1.0 });
        assert_eq!(histogram(&half, 2)[0], vec![0.5, 0.5]);
    }

    #[test]
    fn ramp_histogram_is_near_uniform() {
        // Direct-count oracle: 256·16 evenly spaced values in [0, 1].
        let n = 256 * 16;
        let ramp = Image::from_fn(1, n, 1, |_, x, _| x as f32 / (n - 1) as f32);
        let h = &histogram(&ramp, 256)[0];
        let max = h.iter().cloned().fold(f64::MIN, f64::max);
        let min = h.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min < 2.0 / 256.0, "spread {}", max - min);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_histogram_sums_to_one() {
        let h = SoftHistogram::new(8).compute(&[0.0, 0.13, 0.5, 0.99, 1.0]);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(histogram_kl(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let kl = histogram_kl(&[0.5, 0.5], &[0.25, 0.75]);
        assert!((kl - oracle).abs() < 1e-15);
        assert!((kl - 0.1438).abs() < 1e-4);
        let disjoint = histogram_kl(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((disjoint - (1e8f64).ln()).abs() < 1e-12);
        assert!((disjoint - 18.42).abs() < 1e-2);
    }

    #[test]
    fn focus_measure_orders_sharp_above_blurred() {
        let checker = Image::from_fn(16, 16, 1, |y, x, _| ((y / 2 + x / 2) % 2) as f32);
        let blurred = crate::filters::gaussian_blur(&checker, 1.5);
        assert_eq!(log_variance_focus(&Image::filled(8, 8, 3, 0.4)), 0.0);
        assert!(log_variance_focus(&checker) > log_variance_focus(&blurred));
    }

    #[test]
    fn deblur_loss_identity_and_constant_cases() {
        let loss = DeblurLoss::default();
        let noise = Image::from_fn(12, 12, 3, |y, x, c| (((y * 31 + x * 17 + c * 7) * 2654435761usize) % 1000) as f32 / 999.0);
        let (kl, focus) = loss.terms(&noise, &noise);
        assert!(kl.abs() < 1e-12);
        assert!((loss.value(&noise, &noise) - 1.0 / (log_variance_focus(&noise) + EPS_FOCUS)).abs() < 1e-9);
        assert!(focus > 0.0);
        let flat = Image::filled(12, 12, 3, 0.5);
        assert!((loss.terms(&noise, &flat).1 - 1.0 / EPS_FOCUS).abs() < 1e-6);
        let blurred = crate::filters::gaussian_blur(&noise, 1.0);
        assert!(loss.value(&noise, &blurred) > loss.value(&noise, &noise));
    }
}
