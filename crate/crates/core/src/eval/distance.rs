use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::inference::{Prepared, TranslatorBundle};
use crate::priors::GeometricPrior;
use crate::vae::{Sampling, ZGamma};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Perceptual,
    Pixel,
}

/// Image distance used for pairing and grid search.
pub trait DistanceBackend {
    fn name(&self) -> &str;
    fn kind(&self) -> BackendKind;
    /// Non-negative, zero for identical inputs.
    fn distance(&self, a: &Image, b: &Image) -> Result<f64>;
}

fn check(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "distance between {:?}x{} and {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )))
    }
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    s / a.len().max(1) as f64
}

/// Root-mean-square pixel difference.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelL2;

impl DistanceBackend for PixelL2 {
    fn name(&self) -> &str {
        "pixel_l2"
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Pixel
    }

    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        check(a, b)?;
        Ok(mse(a.data(), b.data()).sqrt())
    }
}

/// Offline stand-in for a learned perceptual distance: per-channel
/// standardised images compared at several 2× box-downsampled scales.
#[derive(Clone, Copy, Debug)]
pub struct MultiscaleL2 {
    pub scales: usize,
}

impl Default for MultiscaleL2 {
    fn default() -> Self {
        Self { scales: 3 }
    }
}

fn standardize(img: &Image) -> Vec<f32> {
    let c = img.channels();
    let n = (img.data().len() / c).max(1) as f64;
    let mut out = img.data().to_vec();
    for ch in 0..c {
        let vals = || img.data().iter().skip(ch).step_by(c).map(|&v| v as f64);
        let mean = vals().sum::<f64>() / n;
        let var = vals().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt() + 1e-3;
        for v in out.iter_mut().skip(ch).step_by(c) {
            *v = ((*v as f64 - mean) / sd) as f32;
        }
    }
    out
}

fn downsample(img: &Image) -> Image {
    let (h, w, c) = (img.height() / 2, img.width() / 2, img.channels());
    Image::from_fn(h, w, c, |y, x, ch| {
        0.25 * (img.get(2 * y, 2 * x, ch)
            + img.get(2 * y + 1, 2 * x, ch)
            + img.get(2 * y, 2 * x + 1, ch)
            + img.get(2 * y + 1, 2 * x + 1, ch))
    })
}

impl DistanceBackend for MultiscaleL2 {
    fn name(&self) -> &str {
        "multiscale_l2"
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Perceptual
    }

    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        check(a, b)?;
        let (mut a, mut b) = (a.clone(), b.clone());
        let mut total = 0.0;
        let mut used = 0;
        for s in 0..self.scales.max(1) {
            if s > 0 {
                if a.height() < 2 || a.width() < 2 {
                    break;
                }
                a = downsample(&a);
                b = downsample(&b);
            }
            total += mse(&standardize(&a), &standardize(&b));
            used += 1;
        }
        Ok(total / used as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub clear: usize,
    pub degraded: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    pub pairs: Vec<Pair>,
    /// Degraded indices no clear item was paired with.
    pub unmatched: Vec<usize>,
}

/// Pair every clear item with its nearest degraded item (lowest index on ties).
/// Degraded items may be reused.
pub fn pair_by_distance(
    clear: &[&Image],
    degraded: &[&Image],
    backend: &(impl DistanceBackend + ?Sized),
) -> Result<PairingResult> {
    if clear.is_empty() || degraded.is_empty() {
        return Err(Error::EmptySet("pairing inputs"));
    }
    let mut used = vec![false; degraded.len()];
    let mut pairs = Vec::with_capacity(clear.len());
    for (i, c) in clear.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, d) in degraded.iter().enumerate() {
            let dist = backend.distance(c, d)?;
            if !dist.is_finite() {
                return Err(Error::Config(format!("backend {} returned {dist}", backend.name())));
            }
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((j, dist));
            }
        }
        let (j, distance) = best.expect("non-empty degraded set");
        used[j] = true;
        pairs.push(Pair {
            clear: i,
            degraded: j,
            distance,
        });
    }
    let unmatched = (0..degraded.len()).filter(|&j| !used[j]).collect();
    Ok(PairingResult { pairs, unmatched })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub z: f64,
    pub gamma: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: GridPoint,
    pub second: Option<GridPoint>,
    /// Every evaluated point in `z`-major order.
    pub points: Vec<GridPoint>,
}

/// Evaluate the deterministic hallucination of `clear` on every `(z, γ)` and
/// rank by distance to `reference`. Earlier grid points win ties.
pub fn grid_search_edit(
    clear: &Image,
    prior: &GeometricPrior,
    reference: &Image,
    bundle: &TranslatorBundle,
    z_grid: &[f64],
    gamma_grid: &[f64],
    backend: &(impl DistanceBackend + ?Sized),
) -> Result<GridSearchResult> {
    if z_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::EmptySet("z/γ grid"));
    }
    for (name, &v) in z_grid.iter().map(|v| ("z", v)).chain(gamma_grid.iter().map(|v| ("gamma", v))) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { name, value: v });
        }
    }
    if bundle.vae.is_none() {
        return Err(Error::MissingVae);
    }
    let prep = Prepared::new(bundle, clear, prior)?;
    let mut points = Vec::with_capacity(z_grid.len() * gamma_grid.len());
    for &z in z_grid {
        for &gamma in gamma_grid {
            let out = prep.render(Some(ZGamma { z, gamma }), Sampling::Deterministic)?;
            points.push(GridPoint {
                z,
                gamma,
                distance: backend.distance(&out.image, reference)?,
            });
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].distance.total_cmp(&points[b].distance).then(a.cmp(&b)));
    Ok(GridSearchResult {
        best: points[order[0]],
        second: order.get(1).map(|&i| points[i]),
        points,
    })
}
