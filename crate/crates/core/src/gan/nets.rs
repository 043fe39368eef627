//! Generator and discriminator backbones.

use localdom_nn::{Bind, Conv2d, ConvGeom, GatedConv2d, Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};
use crate::{rng, Error, Result};

/// Smallest spatial side the generators accept.
pub const MIN_INPUT: usize = 8;

fn default_res_width() -> usize {
    16
}
fn default_res_blocks() -> usize {
    2
}
fn default_gated_width() -> usize {
    12
}
fn default_gated_dilations() -> Vec<usize> {
    vec![1, 2, 4, 8, 1]
}
fn default_disc_width() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorArch {
    /// Residual image-to-image network; block `i` uses dilation `2^i`. The output
    /// convolution starts at zero, so a fresh generator is the identity map.
    Residual {
        #[serde(default = "default_res_width")]
        width: usize,
        #[serde(default = "default_res_blocks")]
        blocks: usize,
    },
    /// Gated-convolution inpainting network fed with the holed image and the hole mask.
    GatedInpaint {
        #[serde(default = "default_gated_width")]
        width: usize,
        #[serde(default = "default_gated_dilations")]
        dilations: Vec<usize>,
    },
}

impl Default for GeneratorArch {
    fn default() -> Self {
        GeneratorArch::Residual {
            width: default_res_width(),
            blocks: default_res_blocks(),
        }
    }
}

impl GeneratorArch {
    pub fn is_inpainting(&self) -> bool {
        matches!(self, GeneratorArch::GatedInpaint { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum GenLayers {
    Residual {
        input: Conv2d,
        blocks: Vec<(Conv2d, Conv2d)>,
        output: Conv2d,
    },
    Gated {
        layers: Vec<GatedConv2d>,
        output: Conv2d,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    arch: GeneratorArch,
    channels: usize,
    store: ParamStore,
    layers: GenLayers,
}

impl Generator {
    pub fn new(arch: &GeneratorArch, channels: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "generator-init");
        let mut store = ParamStore::new();
        let layers = match *arch {
            GeneratorArch::Residual { width, blocks } => {
                let input = Conv2d::new(&mut store, "in", channels, width, 3, ConvGeom::same(3, 1), &mut r);
                let blocks = (0..blocks)
                    .map(|i| {
                        let d = 1 << i;
                        (
                            Conv2d::new(&mut store, &format!("block{i}.a"), width, width, 3, ConvGeom::same(3, d), &mut r),
                            Conv2d::new(&mut store, &format!("block{i}.b"), width, width, 3, ConvGeom::same(3, 1), &mut r),
                        )
                    })
                    .collect();
                let output = Conv2d::zeroed(&mut store, "out", width, channels, 3, ConvGeom::same(3, 1));
                GenLayers::Residual { input, blocks, output }
            }
            GeneratorArch::GatedInpaint { width, ref dilations } => {
                let mut cin = channels + 1;
                let layers = dilations
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        let l = GatedConv2d::new(&mut store, &format!("gated{i}"), cin, width, 3, ConvGeom::same(3, d), &mut r);
                        cin = width;
                        l
                    })
                    .collect();
                let output = Conv2d::new(&mut store, "out", cin, channels, 3, ConvGeom::same(3, 1), &mut r);
                GenLayers::Gated { layers, output }
            }
        };
        Self {
            arch: arch.clone(),
            channels,
            store,
            layers,
        }
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn is_inpainting(&self) -> bool {
        self.arch.is_inpainting()
    }

    /// Receptive-field radius in pixels.
    pub fn radius(&self) -> usize {
        match &self.layers {
            GenLayers::Residual { input, blocks, output } => {
                input.radius() + blocks.iter().map(|(a, b)| a.radius() + b.radius()).sum::<usize>() + output.radius()
            }
            GenLayers::Gated { layers, output } => layers.iter().map(GatedConv2d::radius).sum::<usize>() + output.radius(),
        }
    }

    /// Forward pass on an NCHW batch. `hole` (N×1×H×W, 1 = fill) is required by the
    /// inpainting backbone and ignored by the residual one.
    pub fn forward(&self, g: &mut Graph, trainable: bool, x: Var, hole: Option<Var>) -> Var {
        let p = Bind {
            store: &self.store,
            trainable,
        };
        match &self.layers {
            GenLayers::Residual { input, blocks, output } => {
                let h = input.forward(g, p, x);
                let mut h = g.leaky_relu(h, 0.2);
                for (a, b) in blocks {
                    let r = a.forward(g, p, h);
                    let r = g.leaky_relu(r, 0.2);
                    let r = b.forward(g, p, r);
                    h = g.add(h, r);
                }
                let out = output.forward(g, p, h);
                let y = g.add(x, out);
                g.clamp01(y)
            }
            GenLayers::Gated { layers, output } => {
                let hole = hole.expect("inpainting generator needs a hole mask");
                let hole_c = broadcast_channels(g, hole, self.channels);
                let keep = g.one_minus(hole_c);
                let holed = g.mul(x, keep);
                let mut h = g.concat_channels(holed, hole);
                for l in layers {
                    h = l.forward(g, p, h);
                }
                let out = output.forward(g, p, h);
                let fill = g.sigmoid(out);
                let fill = g.mul(fill, hole_c);
                g.add(holed, fill)
            }
        }
    }

    /// Evaluation-mode translation of a full image.
    ///
    /// The frame is mirror-padded by the receptive-field radius and processed in
    /// tiles, which gives the same result as one pass over the padded frame with
    /// bounded memory.
    pub fn translate(&self, image: &Image, hole: Option<&Mask>) -> Result<Image> {
        let (h, w) = image.dims();
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(Error::TooSmall {
                height: h,
                width: w,
                min: MIN_INPUT,
            });
        }
        if image.channels() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {} channels, image has {}",
                self.channels,
                image.channels()
            )));
        }
        if let Some(m) = hole {
            if m.dims() != (h, w) {
                return Err(Error::ShapeMismatch(format!("hole {:?} vs image {:?}", m.dims(), (h, w))));
            }
        }
        let empty;
        let hole = match (self.is_inpainting(), hole) {
            (true, Some(m)) => Some(m),
            (true, None) => {
                empty = Mask::new(h, w, 0.0);
                Some(&empty)
            }
            (false, _) => None,
        };
        const TILE: usize = 96;
        let halo = self.radius();
        let padded = mirror_pad(image, halo);
        let hole = hole.map(|m| mirror_pad(&Image::from_grid(m, 1), halo));
        let mut out = image.clone();
        for top in (0..h).step_by(TILE) {
            for left in (0..w).step_by(TILE) {
                let (th, tw) = (TILE.min(h - top), TILE.min(w - left));
                let (ph, pw) = (th + 2 * halo, tw + 2 * halo);
                let region = padded.crop(top, left, ph, pw);
                let mut g = Graph::new();
                let xv = g.input(Image::batch_to_tensor(&[&region]));
                let hv = hole
                    .as_ref()
                    .map(|m| g.input(Tensor::from_vec(&[1, 1, ph, pw], m.crop(top, left, ph, pw).data().to_vec())));
                let yv = self.forward(&mut g, false, xv, hv);
                let res = Image::from_tensor(g.value(yv), 0);
                out.paste(&res.crop(halo, halo, th, tw), top, left);
            }
        }
        Ok(out)
    }
}

/// Mirror index into `0..n` for any integer position (period `2n`, edge pixel repeated).
fn mirror(i: isize, n: usize) -> usize {
    let n2 = 2 * n as isize;
    let m = i.rem_euclid(n2);
    if m < n as isize {
        m as usize
    } else {
        (n2 - 1 - m) as usize
    }
}

/// `image` extended by `pad` mirrored pixels on every side, so the frame border
/// looks like interior content to the network.
pub fn mirror_pad(image: &Image, pad: usize) -> Image {
    let (h, w) = image.dims();
    let p = pad as isize;
    Image::from_fn(h + 2 * pad, w + 2 * pad, image.channels(), |y, x, c| {
        image.get(mirror(y as isize - p, h), mirror(x as isize - p, w), c)
    })
}

/// Repeat a 1-channel NCHW node `c` times along channels.
pub fn broadcast_channels(g: &mut Graph, m: Var, c: usize) -> Var {
    let mut out = m;
    for _ in 1..c {
        out = g.concat_channels(out, m);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    #[serde(default = "default_disc_width")]
    pub width: usize,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        Self {
            width: default_disc_width(),
        }
    }
}

/// Patch discriminator: two stride-2 convolutions and a 1-channel score map.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    store: ParamStore,
    layers: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(arch: &DiscriminatorArch, channels: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "discriminator-init");
        let mut store = ParamStore::new();
        let w = arch.width;
        let layers = vec![
            Conv2d::new(&mut store, "d0", channels, w, 3, ConvGeom::strided(3, 2), &mut r),
            Conv2d::new(&mut store, "d1", w, 2 * w, 3, ConvGeom::strided(3, 2), &mut r),
            Conv2d::new(&mut store, "score", 2 * w, 1, 3, ConvGeom::same(3, 1), &mut r),
        ];
        Self { store, layers }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward(&self, g: &mut Graph, trainable: bool, x: Var) -> Var {
        let p = Bind {
            store: &self.store,
            trainable,
        };
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, p, h);
            if i < last {
                h = g.leaky_relu(h, 0.2);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |y, x, c| (((y * 7 + x * 13 + c * 5) % 17) as f32) / 16.0)
    }

    #[test]
    fn fresh_residual_generator_is_identity() {
        let g = Generator::new(&GeneratorArch::default(), 3, 1);
        let img = textured(20, 24);
        let out = g.translate(&img, None).unwrap();
        let max = img.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(max < 1e-6);
    }

    #[test]
    fn generator_sizes_and_param_budget() {
        let res = Generator::new(&GeneratorArch::default(), 3, 1);
        assert!((8_000..14_000).contains(&res.store().num_scalars()), "{}", res.store().num_scalars());
        let gated = Generator::new(
            &GeneratorArch::GatedInpaint {
                width: 12,
                dilations: vec![1, 2, 4, 8, 1],
            },
            3,
            1,
        );
        assert!((8_000..14_000).contains(&gated.store().num_scalars()));
        assert_eq!(gated.radius(), 1 + 2 + 4 + 8 + 1 + 1);
    }

    #[test]
    fn mirror_padding_reflects_with_edge_repeat() {
        let img = Image::from_fn(1, 3, 1, |_, x, _| x as f32);
        let p = mirror_pad(&img, 4);
        let row: Vec<f32> = (0..11).map(|x| p.get(4, x, 0)).collect();
        assert_eq!(row, vec![2.0, 2.0, 1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 1.0, 0.0, 0.0]);
        assert_eq!(p.crop(4, 4, 1, 3), img);
    }

    #[test]
    fn tiled_translation_matches_single_pass() {
        let mut gen = Generator::new(
            &GeneratorArch::GatedInpaint {
                width: 4,
                dilations: vec![1, 2],
            },
            3,
            3,
        );
        // Give the (otherwise random) network some structure; any weights work.
        gen.store_mut().value_mut(0).data_mut()[0] = 0.7;
        let img = textured(130, 101);
        let hole = Mask::from_fn(130, 101, |y, x| if (x + y) % 9 < 3 { 1.0 } else { 0.0 });
        let tiled = gen.translate(&img, Some(&hole)).unwrap();
        let r = gen.radius();
        let (pi, ph) = (mirror_pad(&img, r), mirror_pad(&Image::from_grid(&hole, 1), r));
        let mut g = Graph::new();
        let xv = g.input(Image::batch_to_tensor(&[&pi]));
        let hv = g.input(Image::batch_to_tensor(&[&ph]));
        let yv = gen.forward(&mut g, false, xv, Some(hv));
        let full = Image::from_tensor(g.value(yv), 0).crop(r, r, 130, 101);
        let max = tiled.data().iter().zip(full.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(max < 1e-5, "max diff {max}");
        for (i, (&a, &b)) in img.data().iter().zip(tiled.data()).enumerate() {
            if hole.data()[i / 3] == 0.0 {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn too_small_input_is_rejected() {
        let g = Generator::new(&GeneratorArch::default(), 3, 1);
        assert!(matches!(g.translate(&textured(4, 40), None), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn large_frames_keep_their_shape() {
        let g = Generator::new(&GeneratorArch::default(), 3, 1);
        let img = Image::filled(720, 1280, 3, 0.25);
        let out = g.translate(&img, None).unwrap();
        assert_eq!(out.dims(), (720, 1280));
    }

    #[test]
    fn discriminator_scores_are_finite() {
        let d = Discriminator::new(&DiscriminatorArch::default(), 3, 2);
        let mut g = Graph::new();
        let x = g.input(Image::batch_to_tensor(&[&textured(16, 16)]));
        let s = d.forward(&mut g, false, x);
        assert_eq!(g.value(s).shape(), &[1, 1, 4, 4]);
        assert!(g.value(s).all_finite());
    }
}
