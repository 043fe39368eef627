use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::distance::DistanceBackend;
use crate::gan::{histogram, histogram_kl};
use crate::image::Image;
use crate::{Error, Result};

/// Per-channel hard histograms pooled over a whole set.
pub fn pooled_histogram(images: &[&Image], bins: usize) -> Result<Vec<Vec<f64>>> {
    let first = images.first().ok_or(Error::EmptySet("images for histogram"))?;
    let c = first.channels();
    let mut acc = vec![vec![0.0; bins]; c];
    let mut total = 0.0;
    for img in images {
        if img.channels() != c {
            return Err(Error::ShapeMismatch("images differ in channel count".into()));
        }
        let n = (img.height() * img.width()) as f64;
        for (a, h) in acc.iter_mut().zip(histogram(img, bins)) {
            for (x, v) in a.iter_mut().zip(h) {
                *x += v * n;
            }
        }
        total += n;
    }
    for a in &mut acc {
        a.iter_mut().for_each(|v| *v /= total);
    }
    Ok(acc)
}

/// Symmetrised histogram KL between two image sets, averaged over channels.
pub fn domain_gap_estimate(a: &[&Image], b: &[&Image], bins: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet("image sets for domain gap"));
    }
    let (ha, hb) = (pooled_histogram(a, bins)?, pooled_histogram(b, bins)?);
    if ha.len() != hb.len() {
        return Err(Error::ShapeMismatch("sets differ in channel count".into()));
    }
    let c = ha.len() as f64;
    Ok(ha
        .iter()
        .zip(&hb)
        .map(|(x, y)| histogram_kl(x, y) + histogram_kl(y, x))
        .sum::<f64>()
        / c)
}

/// Maps an image to a fixed-length feature vector for Fréchet distances.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn features(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Per-channel mean and standard deviation at three scales. A cheap extractor
/// for wiring tests; its values are not comparable to Inception-based FID.
#[derive(Clone, Copy, Debug, Default)]
pub struct ColorStatsFeatures;

impl FeatureExtractor for ColorStatsFeatures {
    fn name(&self) -> &str {
        "color_stats"
    }

    fn features(&self, image: &Image) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        let mut img = image.clone();
        for s in 0..3 {
            if s > 0 && img.height() >= 2 && img.width() >= 2 {
                let (h, w) = (img.height() / 2, img.width() / 2);
                let prev = img;
                img = Image::from_fn(h, w, prev.channels(), |y, x, c| prev.get(2 * y, 2 * x, c));
            }
            let c = img.channels();
            for ch in 0..c {
                let v: Vec<f64> = img.data().iter().skip(ch).step_by(c).map(|&x| x as f64).collect();
                let n = v.len().max(1) as f64;
                let m = v.iter().sum::<f64>() / n;
                out.push(m);
                out.push((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt());
            }
        }
        Ok(out)
    }
}

fn moments(feats: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = feats.len();
    let d = feats.first().map_or(0, Vec::len);
    if n == 0 || d == 0 || feats.iter().any(|f| f.len() != d) {
        return Err(Error::ShapeMismatch("feature vectors must be non-empty and equally long".into()));
    }
    let mut mean = DVector::zeros(d);
    for f in feats {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        let c = DVector::from_column_slice(f) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let vals = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    if ma.len() != mb.len() {
        return Err(Error::ShapeMismatch("feature dimensions differ".into()));
    }
    let sa = psd_sqrt(&ca);
    let inner = &sa * &cb * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Externally supplied metric back-ends. Empty by default.
#[derive(Default)]
pub struct MetricRegistry {
    fid: Option<Box<dyn FeatureExtractor>>,
    lpips: Option<Box<dyn DistanceBackend>>,
}

impl MetricRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_fid(&mut self, f: Box<dyn FeatureExtractor>) {
        self.fid = Some(f);
    }

    pub fn register_lpips(&mut self, d: Box<dyn DistanceBackend>) {
        self.lpips = Some(d);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: String,
    pub backend: String,
    pub value: f64,
}

/// FID between two sets, or mean paired LPIPS-style distance, via the
/// registered back-end.
pub fn external_metric(registry: &MetricRegistry, name: &str, a: &[&Image], b: &[&Image]) -> Result<MetricValue> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet("metric inputs"));
    }
    let (backend, value) = match name {
        "fid" => {
            let f = registry.fid.as_ref().ok_or_else(|| Error::BackendMissing(name.into()))?;
            let fa = a.iter().map(|i| f.features(i)).collect::<Result<Vec<_>>>()?;
            let fb = b.iter().map(|i| f.features(i)).collect::<Result<Vec<_>>>()?;
            (f.name().to_string(), frechet_distance(&fa, &fb)?)
        }
        "lpips" => {
            let d = registry.lpips.as_ref().ok_or_else(|| Error::BackendMissing(name.into()))?;
            if a.len() != b.len() {
                return Err(Error::ShapeMismatch("paired distance needs equally long sets".into()));
            }
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b) {
                s += d.distance(x, y)?;
            }
            (d.name().to_string(), s / a.len() as f64)
        }
        other => return Err(Error::BackendMissing(other.into())),
    };
    Ok(MetricValue {
        metric: name.into(),
        backend,
        value,
    })
}

/// One line of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub metric: String,
    pub backend: String,
    pub value: f64,
    pub inputs_hash: String,
}

/// Named metric entries, serialised in key order.
pub type Report = BTreeMap<String, ReportEntry>;
