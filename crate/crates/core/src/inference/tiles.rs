use serde::{Deserialize, Serialize};

use crate::image::{Grid, Image, Mask};
use crate::{Error, Result};

/// Square tiles covering an image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub overlap: usize,
    /// Top-left corners, row-major.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        if o + size >= len {
            out.push(len - size);
            break;
        }
        out.push(o);
        o += stride;
    }
    out.dedup();
    out
}

/// Regular grid with stride `size - overlap`; the last row and column are moved
/// inward so every tile stays in-bounds.
pub fn make_tile_plan(height: usize, width: usize, size: usize, overlap: usize) -> Result<TilePlan> {
    if overlap >= size {
        return Err(Error::BadOverlap { overlap, size });
    }
    if size > height.min(width) {
        return Err(Error::Config(format!("tile size {size} exceeds image {height}x{width}")));
    }
    let stride = size - overlap;
    let rows = axis_origins(height, size, stride);
    let cols = axis_origins(width, size, stride);
    let origins = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(TilePlan {
        height,
        width,
        size,
        overlap,
        origins,
    })
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Number of tiles covering each pixel.
    pub fn coverage(&self) -> Grid<u32> {
        let mut cov = Grid::new(self.height, self.width, 0u32);
        for &(r, c) in &self.origins {
            for y in r..r + self.size {
                for x in c..c + self.size {
                    cov.set(y, x, cov.get(y, x) + 1);
                }
            }
        }
        cov
    }

    pub fn split_mask(&self, m: &Mask) -> Vec<Mask> {
        self.origins.iter().map(|&(r, c)| m.crop(r, c, self.size, self.size)).collect()
    }

    pub fn split_image(&self, img: &Image) -> Vec<Image> {
        self.origins.iter().map(|&(r, c)| img.crop(r, c, self.size, self.size)).collect()
    }

    fn check(&self, n: usize, dims: impl Iterator<Item = (usize, usize)>) -> Result<()> {
        if n != self.origins.len() {
            return Err(Error::PlanMismatch(format!("{n} tiles for a plan of {}", self.origins.len())));
        }
        for d in dims {
            if d != (self.size, self.size) {
                return Err(Error::PlanMismatch(format!("tile {d:?} in a plan of size {}", self.size)));
            }
        }
        Ok(())
    }

    /// Uniform average of the tiles over each pixel, channel-interleaved.
    fn average(&self, tiles: &[&[f32]], channels: usize) -> Vec<f32> {
        let (w, s) = (self.width, self.size);
        let mut sum = vec![0.0f64; self.height * w * channels];
        let mut count = vec![0u32; self.height * w];
        for (&(r, c), t) in self.origins.iter().zip(tiles) {
            for y in 0..s {
                for x in 0..s {
                    let p = (r + y) * w + c + x;
                    count[p] += 1;
                    for ch in 0..channels {
                        sum[p * channels + ch] += t[(y * s + x) * channels + ch] as f64;
                    }
                }
            }
        }
        sum.iter()
            .enumerate()
            .map(|(i, &v)| (v / count[i / channels] as f64) as f32)
            .collect()
    }
}

/// Reassemble mask tiles, averaging where they overlap.
pub fn stitch_masks(tiles: &[Mask], plan: &TilePlan) -> Result<Mask> {
    plan.check(tiles.len(), tiles.iter().map(Grid::dims))?;
    let refs: Vec<&[f32]> = tiles.iter().map(Grid::data).collect();
    Mask::from_vec(plan.height, plan.width, plan.average(&refs, 1))
}

/// Image counterpart of [`stitch_masks`].
pub fn stitch_images(tiles: &[Image], plan: &TilePlan) -> Result<Image> {
    plan.check(tiles.len(), tiles.iter().map(Image::dims))?;
    let channels = tiles.first().map_or(1, Image::channels);
    if tiles.iter().any(|t| t.channels() != channels) {
        return Err(Error::PlanMismatch("tiles differ in channel count".into()));
    }
    let refs: Vec<&[f32]> = tiles.iter().map(Image::data).collect();
    Image::from_vec(plan.height, plan.width, channels, plan.average(&refs, channels))
}
