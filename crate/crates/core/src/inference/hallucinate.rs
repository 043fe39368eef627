use serde::{Deserialize, Serialize};

use super::tiles::{make_tile_plan, stitch_masks, TilePlan};
use crate::gan::Generator;
use crate::image::{Image, Mask};
use crate::priors::{indicator_mask, GeometricPrior, LocalDomainId};
use crate::vae::{check_unit, mix, reparametrize, MaskVae, Sampling, ZGamma};
use crate::{Error, Result};

/// Where the translated pixels are allowed to land.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CompositeMode {
    /// Only on the β indicator.
    #[default]
    BetaRegion,
    /// Everywhere except the given foreground domain.
    ExcludeForeground { foreground: LocalDomainId },
}

fn d_threshold() -> f32 {
    0.1
}

/// Which mask is encoded as the `z = 1` end of the interpolation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSource {
    /// `|lum(y) − lum(x)| > threshold`, restricted to the edit region.
    Difference {
        #[serde(default = "d_threshold")]
        threshold: f32,
    },
    /// The edit region itself.
    Indicator,
}

impl Default for MaskSource {
    fn default() -> Self {
        MaskSource::Difference {
            threshold: d_threshold(),
        }
    }
}

fn d_z() -> f64 {
    0.65
}
fn d_gamma() -> f64 {
    0.75
}
fn d_z_range() -> [f64; 2] {
    [0.35, 0.95]
}
fn d_gamma_range() -> [f64; 2] {
    [0.2, 1.0]
}
fn d_overlap() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub alpha: LocalDomainId,
    pub beta: LocalDomainId,
    #[serde(default)]
    pub composite: CompositeMode,
    #[serde(default)]
    pub mask_source: MaskSource,
    #[serde(default = "d_z")]
    pub z: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_z_range")]
    pub z_range: [f64; 2],
    #[serde(default = "d_gamma_range")]
    pub gamma_range: [f64; 2],
    /// Overlap between VAE tiles when building the full-resolution mask.
    #[serde(default = "d_overlap")]
    pub tile_overlap: usize,
}

impl InferenceConfig {
    pub fn new(alpha: LocalDomainId, beta: LocalDomainId) -> Self {
        serde_json::from_value(serde_json::json!({ "alpha": alpha, "beta": beta })).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("z", self.z)?;
        check_unit("gamma", self.gamma)?;
        for (name, [lo, hi]) in [("z_range", self.z_range), ("gamma_range", self.gamma_range)] {
            check_unit(name, lo)?;
            check_unit(name, hi)?;
            if lo > hi {
                return Err(Error::Config(format!("{name} [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

/// Deployed translator: generator, optional mask VAE and inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorBundle {
    pub generator: Generator,
    pub vae: Option<MaskVae>,
    pub config: InferenceConfig,
}

impl TranslatorBundle {
    pub fn new(generator: Generator, vae: Option<MaskVae>, config: InferenceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            generator,
            vae,
            config,
        })
    }

    pub fn translate(&self, image: &Image, prior: &GeometricPrior) -> Result<Image> {
        let hole = indicator_mask(prior, self.config.beta)?;
        self.generator.translate(image, Some(&hole))
    }
}

/// `image` on the foreground, `y` elsewhere.
pub fn exclude_foreground(image: &Image, y: &Image, fg_mask: &Mask) -> Result<Image> {
    if !image.same_shape(y) || fg_mask.dims() != image.dims() {
        return Err(Error::ShapeMismatch(format!(
            "exclude_foreground on {:?}, {:?} and mask {:?}",
            image.dims(),
            y.dims(),
            fg_mask.dims()
        )));
    }
    let c = image.channels();
    let mut out = y.clone();
    for (i, (o, &x)) in out.data_mut().iter_mut().zip(image.data()).enumerate() {
        if fg_mask.data()[i / c] > 0.5 {
            *o = x;
        }
    }
    Ok(out)
}

/// Result of [`hallucinate`]: the composite and, for interpolating bundles, the
/// stitched `p_z` mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Hallucination {
    pub image: Image,
    pub p_z: Option<Mask>,
}

struct LatentTiles {
    plan: TilePlan,
    /// Per tile: `(μ, logvar)` of the `z = 1` mask, or `None` when the tile has
    /// no edit pixels.
    alpha: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    beta: (Vec<f64>, Vec<f64>),
}

/// Per-image work shared by every `(z, γ)` rendering: the translated frame, the
/// edit region and the tile encodings.
pub struct Prepared<'a> {
    bundle: &'a TranslatorBundle,
    input: Image,
    translated: Image,
    region: Mask,
    latents: Option<LatentTiles>,
}

impl<'a> Prepared<'a> {
    pub fn new(bundle: &'a TranslatorBundle, image: &Image, prior: &GeometricPrior) -> Result<Self> {
        if image.dims() != prior.dims() {
            return Err(Error::ShapeMismatch(format!("image {:?} vs prior {:?}", image.dims(), prior.dims())));
        }
        let cfg = &bundle.config;
        let translated = bundle.translate(image, prior)?;
        let region = match cfg.composite {
            CompositeMode::BetaRegion => indicator_mask(prior, cfg.beta)?,
            CompositeMode::ExcludeForeground { foreground } => indicator_mask(prior, foreground)?.map(|v| 1.0 - v),
        };
        let latents = match &bundle.vae {
            Some(vae) => Some(encode_tiles(vae, cfg, image, &translated, &region)?),
            None => None,
        };
        Ok(Self {
            bundle,
            input: image.clone(),
            translated,
            region,
            latents,
        })
    }

    pub fn translated(&self) -> &Image {
        &self.translated
    }

    pub fn region(&self) -> &Mask {
        &self.region
    }

    /// Composite for one `(z, γ)`; `None` uses the bundle defaults.
    pub fn render(&self, params: Option<ZGamma>, mode: Sampling<'_>) -> Result<Hallucination> {
        let (Some(vae), Some(lat)) = (&self.bundle.vae, &self.latents) else {
            if params.is_some() {
                return Err(Error::MissingVae);
            }
            let image = composite(&self.input, &self.translated, &self.region, None, 1.0);
            return Ok(Hallucination { image, p_z: None });
        };
        let p = params.unwrap_or(ZGamma {
            z: self.bundle.config.z,
            gamma: self.bundle.config.gamma,
        });
        check_unit("z", p.z)?;
        check_unit("gamma", p.gamma)?;
        let s = vae.size();
        let mut rng = match mode {
            Sampling::Deterministic => None,
            Sampling::Stochastic(r) => Some(r),
        };
        let mut draw = |(mu, lv): &(Vec<f64>, Vec<f64>)| match rng.as_deref_mut() {
            Some(r) => reparametrize(mu, lv, r),
            None => mu.clone(),
        };
        let mut codes = Vec::new();
        let mut slots = Vec::with_capacity(lat.alpha.len());
        for a in &lat.alpha {
            slots.push(a.as_ref().map(|a| {
                let (ea, eb) = (draw(a), draw(&lat.beta));
                codes.push(mix(&ea, &eb, p.z));
                codes.len() - 1
            }));
        }
        let decoded = vae.decode(&codes)?;
        let tiles: Vec<Mask> = slots
            .iter()
            .map(|s_| s_.map_or_else(|| Mask::new(s, s, 0.0), |i| decoded[i].clone()))
            .collect();
        let p_z = stitch_masks(&tiles, &lat.plan)?;
        let image = composite(&self.input, &self.translated, &self.region, Some(&p_z), p.gamma);
        Ok(Hallucination { image, p_z: Some(p_z) })
    }
}

fn encode_tiles(vae: &MaskVae, cfg: &InferenceConfig, x: &Image, y: &Image, region: &Mask) -> Result<LatentTiles> {
    let (h, w) = x.dims();
    let s = vae.size();
    if h < s || w < s {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            min: s,
        });
    }
    let target = match cfg.mask_source {
        MaskSource::Indicator => region.clone(),
        MaskSource::Difference { threshold } => {
            let (lx, ly) = (x.luminance(), y.luminance());
            Mask::from_fn(h, w, |r, c| {
                let diff = (ly.get(r, c) - lx.get(r, c)).abs() > threshold;
                if diff && region.get(r, c) > 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
        }
    };
    let plan = make_tile_plan(h, w, s, cfg.tile_overlap.min(s - 1))?;
    let tiles = plan.split_mask(&target);
    let zero = Mask::new(s, s, 0.0);
    let active: Vec<&Mask> = tiles.iter().filter(|t| t.data().iter().any(|&v| v > 0.5)).collect();
    let mut batch = active.clone();
    batch.push(&zero);
    let mut post = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(64) {
        post.extend(vae.posterior(chunk)?);
    }
    let beta = post.pop().expect("zero mask encoded");
    let mut it = post.into_iter();
    let alpha = tiles
        .iter()
        .map(|t| t.data().iter().any(|&v| v > 0.5).then(|| it.next().expect("one posterior per active tile")))
        .collect();
    Ok(LatentTiles { plan, alpha, beta })
}

/// `y·m + x·(1 − m)` inside `region` with `m = γ·p_z` (or `m = 1` without a
/// mask); `x` elsewhere.
fn composite(x: &Image, y: &Image, region: &Mask, p_z: Option<&Mask>, gamma: f64) -> Image {
    let c = x.channels();
    let g = gamma as f32;
    let mut out = x.clone();
    for (i, (o, &t)) in out.data_mut().iter_mut().zip(y.data()).enumerate() {
        let p = i / c;
        if region.data()[p] <= 0.5 {
            continue;
        }
        let m = p_z.map_or(1.0, |pz| g * pz.data()[p]);
        let b = *o;
        *o = (t * m + b * (1.0 - m)).clamp(t.min(b), t.max(b));
    }
    out
}

/// Translate, interpolate the edit mask at `z`, blend with `γ` and stitch.
///
/// `params` of `None` falls back to the bundle defaults; asking for explicit
/// `(z, γ)` from a bundle without a mask VAE is [`Error::MissingVae`].
pub fn hallucinate(
    bundle: &TranslatorBundle,
    image: &Image,
    prior: &GeometricPrior,
    params: Option<ZGamma>,
    mode: Sampling<'_>,
) -> Result<Hallucination> {
    Prepared::new(bundle, image, prior)?.render(params, mode)
}
