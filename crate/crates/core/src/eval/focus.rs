use crate::filters::{box_mean, log_response, Plane};
use crate::gan::SIGMA_LOG;
use crate::image::{Grid, Image, Mask};
use crate::{Error, Result};

/// Half-width of the pooling window of [`focus_map`].
pub const FOCUS_WINDOW: usize = 3;

fn luminance_plane(image: &Image) -> Plane {
    let l = image.luminance();
    Grid::from_vec(l.height(), l.width(), l.data().iter().map(|&v| v as f64).collect()).expect("sized")
}

/// Local sharpness: `|LoG|` of the luminance, box-averaged over a
/// `(2·FOCUS_WINDOW + 1)²` window.
pub fn focus_map(image: &Image) -> Plane {
    let r = log_response(&luminance_plane(image), SIGMA_LOG).map(f64::abs);
    box_mean(&r, FOCUS_WINDOW)
}

pub fn mean_focus(image: &Image) -> f64 {
    let m = focus_map(image);
    m.data().iter().sum::<f64>() / m.data().len().max(1) as f64
}

/// Mean over images of the per-image mean focus score.
pub fn in_focus_average(images: &[&Image]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptySet("images for in-focus average"));
    }
    Ok(images.iter().map(|i| mean_focus(i)).sum::<f64>() / images.len() as f64)
}

/// Mean luminance over `region`, or `None` when the region is empty.
pub fn region_mean_luminance(image: &Image, region: &Mask) -> Option<f64> {
    let l = image.luminance();
    let (mut s, mut n) = (0.0, 0usize);
    for (&v, &m) in l.data().iter().zip(region.data()) {
        if m > 0.5 {
            s += v as f64;
            n += 1;
        }
    }
    (n > 0).then(|| s / n as f64)
}

/// Mean `|lum − background|` over the `band` pixels.
pub fn band_energy(image: &Image, band: &Mask, background: f64) -> Result<f64> {
    if band.dims() != image.dims() {
        return Err(Error::ShapeMismatch(format!("band {:?} vs image {:?}", band.dims(), image.dims())));
    }
    let l = image.luminance();
    let (mut s, mut n) = (0.0, 0usize);
    for (&v, &m) in l.data().iter().zip(band.data()) {
        if m > 0.5 {
            s += (v as f64 - background).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySet("band pixels"));
    }
    Ok(s / n as f64)
}
