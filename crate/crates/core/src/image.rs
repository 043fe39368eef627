//! Image and grid containers.
//!
//! Pixel values are `f32` in `[0, 1]`, stored row-major with interleaved channels
//! (HWC). 8-bit conversion is `round(255 * v)` in both directions' inverse, so a
//! PNG round-trip of an 8-bit-derived image is lossless.

use std::path::Path;

use localdom_nn::Tensor;

use crate::{Error, Result};

/// Single-plane 2-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Real-valued single-channel mask; binary masks hold exactly 0.0 or 1.0.
pub type Mask = Grid<f32>;

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, fill: T) -> Self {
        Self {
            height,
            width,
            data: vec![fill; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "grid {height}x{width} needs {} cells, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.width + col] = v;
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        assert!(top + height <= self.height && left + width <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            data.extend_from_slice(&self.data[r * self.width + left..r * self.width + left + width]);
        }
        Self { height, width, data }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid<u8> {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::from_vec(h as usize, w as usize, gray.into_raw())
    }
}

impl Mask {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.map(to_u8).save_png(path)
    }
}

pub fn to_u8(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Multi-channel image, HWC layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Broadcast a single-channel grid to `channels` identical planes.
    pub fn from_grid(grid: &Mask, channels: usize) -> Self {
        Self::from_fn(grid.height(), grid.width(), channels, |r, c, _| grid.get(r, c))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        assert!(top + height <= self.height && left + width <= self.width, "crop out of bounds");
        let row_len = width * self.channels;
        let mut data = Vec::with_capacity(height * row_len);
        for r in top..top + height {
            let start = (r * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Image {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Copy `patch` into this image with its top-left corner at `(top, left)`.
    pub fn paste(&mut self, patch: &Image, top: usize, left: usize) {
        assert_eq!(patch.channels, self.channels);
        assert!(top + patch.height <= self.height && left + patch.width <= self.width);
        let row_len = patch.width * self.channels;
        for r in 0..patch.height {
            let dst = ((top + r) * self.width + left) * self.channels;
            self.data[dst..dst + row_len].copy_from_slice(&patch.data[r * row_len..(r + 1) * row_len]);
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`; single-channel images are returned as-is.
    pub fn luminance(&self) -> Mask {
        match self.channels {
            1 => Grid {
                height: self.height,
                width: self.width,
                data: self.data.clone(),
            },
            3 => Grid {
                height: self.height,
                width: self.width,
                data: self
                    .data
                    .chunks(3)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect(),
            },
            c => Grid {
                height: self.height,
                width: self.width,
                data: self.data.chunks(c).map(|p| p.iter().sum::<f32>() / c as f32).collect(),
            },
        }
    }

    pub fn channel(&self, ch: usize) -> Mask {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(ch).step_by(self.channels).copied().collect(),
        }
    }

    /// Stack same-shaped images into an NCHW tensor.
    pub fn batch_to_tensor(images: &[&Image]) -> Tensor {
        let first = images.first().expect("non-empty batch");
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            assert!(img.same_shape(first), "batch images must share a shape");
            for ch in 0..c {
                data.extend(img.data.iter().skip(ch).step_by(c));
            }
        }
        Tensor::from_vec(&[images.len(), c, h, w], data)
    }

    /// Item `index` of an NCHW tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Image {
        let (_, c, h, w) = t.dims4();
        let plane = h * w;
        let base = index * c * plane;
        let src = &t.data()[base..base + c * plane];
        let mut data = vec![0.0; c * plane];
        for ch in 0..c {
            for p in 0..plane {
                data[p * c + ch] = src[ch * plane + p];
            }
        }
        Image {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (channels, raw, w, h) = if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            (3, rgb.into_raw(), w, h)
        } else {
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            (1, gray.into_raw(), w, h)
        };
        Image::from_vec(h as usize, w as usize, channels, raw.into_iter().map(from_u8).collect())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => image::GrayImage::from_raw(w, h, raw).expect("sized buffer").save(path),
            3 => image::RgbImage::from_raw(w, h, raw).expect("sized buffer").save(path),
            c => {
                return Err(Error::ShapeMismatch(format!("cannot write {c}-channel image as PNG")));
            }
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Encode as PNG bytes (same encoding as [`Image::save_png`]).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        let raw = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::ShapeMismatch(format!("cannot write {c}-channel image as PNG"))),
        };
        image::write_buffer_with_format(&mut out, &raw, w, h, color, image::ImageFormat::Png).map_err(|source| {
            Error::Image {
                path: "<memory>".into(),
                source,
            }
        })?;
        Ok(out.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_preserves_layout() {
        let img = Image::from_fn(3, 4, 3, |r, c, ch| (r * 12 + c * 3 + ch) as f32 / 36.0);
        let t = Image::batch_to_tensor(&[&img, &img]);
        assert_eq!(t.shape(), &[2, 3, 3, 4]);
        assert_eq!(t.data()[12], img.get(0, 0, 1));
        assert_eq!(Image::from_tensor(&t, 1), img);
    }

    #[test]
    fn png_round_trip_is_lossless_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 7, 3, |r, c, ch| from_u8(((r * 31 + c * 7 + ch * 50) % 256) as u8));
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
        let gray = Image::from_fn(4, 4, 1, |r, c, _| from_u8((r * 60 + c) as u8));
        gray.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), gray);
    }

    #[test]
    fn crop_and_paste_are_inverse() {
        let img = Image::from_fn(6, 6, 1, |r, c, _| (r * 6 + c) as f32);
        let patch = img.crop(1, 2, 3, 2);
        assert_eq!(patch.get(0, 0, 0), 8.0);
        let mut blank = Image::new(6, 6, 1);
        blank.paste(&patch, 1, 2);
        assert_eq!(blank.get(3, 3, 0), img.get(3, 3, 0));
        assert_eq!(blank.get(0, 0, 0), 0.0);
    }
}
