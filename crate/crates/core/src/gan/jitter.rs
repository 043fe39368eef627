use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Symmetric jitter ranges: brightness offset in `[-b, b]`, contrast factor in
/// `[1-c, 1+c]`, hue rotation (radians, YIQ chroma plane) in `[-h, h]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JitterRanges {
    #[serde(default)]
    pub brightness: f32,
    #[serde(default)]
    pub contrast: f32,
    #[serde(default)]
    pub hue: f32,
}

/// One concrete draw of jitter parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterParams {
    pub brightness: f32,
    pub contrast: f32,
    pub hue: f32,
}

impl JitterParams {
    pub const IDENTITY: JitterParams = JitterParams {
        brightness: 0.0,
        contrast: 1.0,
        hue: 0.0,
    };
}

fn symmetric(rng: &mut impl Rng, r: f32) -> f32 {
    if r > 0.0 {
        rng.random_range(-r..=r)
    } else {
        0.0
    }
}

impl JitterRanges {
    pub fn is_zero(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 0.0 && self.hue == 0.0
    }

    pub fn sample(&self, rng: &mut impl Rng) -> JitterParams {
        JitterParams {
            brightness: symmetric(rng, self.brightness),
            contrast: 1.0 + symmetric(rng, self.contrast),
            hue: symmetric(rng, self.hue),
        }
    }
}

/// Apply brightness, then contrast about the patch mean, then hue rotation; clamp to `[0, 1]`.
pub fn apply_jitter(patch: &Image, p: &JitterParams) -> Image {
    let mut out = patch.clone();
    if p.brightness != 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v += p.brightness);
    }
    if p.contrast != 1.0 {
        let n = out.data().len().max(1) as f64;
        let mean = (out.data().iter().map(|&v| v as f64).sum::<f64>() / n) as f32;
        out.data_mut().iter_mut().for_each(|v| *v = mean + p.contrast * (*v - mean));
    }
    if p.hue != 0.0 && out.channels() == 3 {
        let (s, c) = p.hue.sin_cos();
        for px in out.data_mut().chunks_mut(3) {
            let y = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            let i = 0.596 * px[0] - 0.274 * px[1] - 0.322 * px[2];
            let q = 0.211 * px[0] - 0.523 * px[1] + 0.312 * px[2];
            let (i, q) = (c * i - s * q, s * i + c * q);
            px[0] = y + 0.956 * i + 0.621 * q;
            px[1] = y - 0.272 * i - 0.647 * q;
            px[2] = y - 1.106 * i + 1.703 * q;
        }
    }
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

pub fn color_jitter(patch: &Image, rng: &mut impl Rng, ranges: &JitterRanges) -> Image {
    apply_jitter(patch, &ranges.sample(rng))
}
