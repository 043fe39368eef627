//! Replicate-padded linear filters on `f64` planes, with explicit adjoints so that
//! losses built on them can be differentiated analytically.

use crate::image::{Grid, Image, Mask};

pub type Plane = Grid<f64>;

/// Normalised 1-D Gaussian taps with radius `ceil(3σ)`; `[1.0]` for `σ <= 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / s).collect()
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn conv1d(p: &Plane, taps: &[f64], horizontal: bool) -> Plane {
    let (h, w) = p.dims();
    let r = (taps.len() / 2) as isize;
    Grid::from_fn(h, w, |y, x| {
        taps.iter()
            .enumerate()
            .map(|(t, k)| {
                let o = t as isize - r;
                if horizontal {
                    k * p.get(y, clamp_idx(x as isize + o, w))
                } else {
                    k * p.get(clamp_idx(y as isize + o, h), x)
                }
            })
            .sum()
    })
}

fn conv1d_adjoint(d: &Plane, taps: &[f64], horizontal: bool) -> Plane {
    let (h, w) = d.dims();
    let r = (taps.len() / 2) as isize;
    let mut out = Grid::new(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let g = d.get(y, x);
            for (t, k) in taps.iter().enumerate() {
                let o = t as isize - r;
                let (yy, xx) = if horizontal {
                    (y, clamp_idx(x as isize + o, w))
                } else {
                    (clamp_idx(y as isize + o, h), x)
                };
                let cur = out.get(yy, xx);
                out.set(yy, xx, cur + k * g);
            }
        }
    }
    out
}

pub fn gaussian_blur_plane(p: &Plane, sigma: f64) -> Plane {
    let taps = gaussian_kernel(sigma);
    conv1d(&conv1d(p, &taps, true), &taps, false)
}

fn gaussian_blur_adjoint(d: &Plane, sigma: f64) -> Plane {
    let taps = gaussian_kernel(sigma);
    conv1d_adjoint(&conv1d_adjoint(d, &taps, false), &taps, true)
}

/// 4-neighbour discrete Laplacian with replicated borders.
pub fn laplacian(p: &Plane) -> Plane {
    let (h, w) = p.dims();
    Grid::from_fn(h, w, |y, x| {
        let (yi, xi) = (y as isize, x as isize);
        p.get(clamp_idx(yi - 1, h), x) + p.get(clamp_idx(yi + 1, h), x) + p.get(y, clamp_idx(xi - 1, w))
            + p.get(y, clamp_idx(xi + 1, w))
            - 4.0 * p.get(y, x)
    })
}

fn laplacian_adjoint(d: &Plane) -> Plane {
    let (h, w) = d.dims();
    let mut out = Grid::new(h, w, 0.0);
    let mut add = |y: usize, x: usize, v: f64| {
        let cur = out.get(y, x);
        out.set(y, x, cur + v);
    };
    for y in 0..h {
        for x in 0..w {
            let g = d.get(y, x);
            let (yi, xi) = (y as isize, x as isize);
            add(clamp_idx(yi - 1, h), x, g);
            add(clamp_idx(yi + 1, h), x, g);
            add(y, clamp_idx(xi - 1, w), g);
            add(y, clamp_idx(xi + 1, w), g);
            add(y, x, -4.0 * g);
        }
    }
    out
}

/// Laplacian of the Gaussian-smoothed plane.
pub fn log_response(p: &Plane, sigma: f64) -> Plane {
    laplacian(&gaussian_blur_plane(p, sigma))
}

/// Adjoint of [`log_response`]: maps d/d(response) to d/d(input).
pub fn log_response_adjoint(d: &Plane, sigma: f64) -> Plane {
    gaussian_blur_adjoint(&laplacian_adjoint(d), sigma)
}

/// Per-channel Gaussian blur of an image.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let mut out = img.clone();
    for ch in 0..img.channels() {
        let plane = img.channel(ch).map(|v| v as f64);
        let blurred = gaussian_blur_plane(&plane, sigma);
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.set(y, x, ch, blurred.get(y, x) as f32);
            }
        }
    }
    out
}

/// Mean over a `(2r+1)²` window with replicated borders, via a summed-area table.
pub fn box_mean(p: &Plane, radius: usize) -> Plane {
    let (h, w) = p.dims();
    let k = 2 * radius + 1;
    let taps = vec![1.0 / k as f64; k];
    if h == 0 || w == 0 {
        return p.clone();
    }
    conv1d(&conv1d(p, &taps, true), &taps, false)
}

pub fn to_plane(m: &Mask) -> Plane {
    m.map(|v| v as f64)
}
