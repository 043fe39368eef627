//! Small deterministic stand-in datasets.

use std::f64::consts::PI;
use std::path::Path;

use localdom_core::filters::gaussian_blur;
use localdom_core::priors::{build_prior, DomainTable, LaneLabels, Labels, PriorRule};
use localdom_core::{rng, Grid, Image};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fsutil::{sha256_hex, write_atomic};
use crate::manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_SCHEMA};
use crate::Result;

/// Side of a `stripes` / `plain` image.
pub const STRIPES_SIZE: usize = 128;
/// Side of a `snowtex` image.
pub const SNOWTEX_SIZE: usize = 96;
/// Side of a `dof_flowers` image.
pub const FLOWERS_SIZE: usize = 64;
/// Semantic class ids written by `snowtex`.
pub const ROAD_CLASS: u8 = 7;
pub const SIDEWALK_CLASS: u8 = 8;

/// Half-width of the painted stripes; slightly inside the default lane band.
const STRIPE_HALF_WIDTH: f64 = 3.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum SynthKind {
    /// Noisy gray ground with bright polyline stripes and lane labels.
    Stripes,
    /// The same ground without stripes; a target-like reference set.
    Plain,
    /// Two-texture street scenes with semantic maps.
    Snowtex,
    /// Sharp central object over a blurred background.
    DofFlowers,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Stripes => "stripes",
            SynthKind::Plain => "plain",
            SynthKind::Snowtex => "snowtex",
            SynthKind::DofFlowers => "dof_flowers",
        }
    }

    fn prior_rule(self) -> Option<&'static str> {
        match self {
            SynthKind::Stripes => Some("lane"),
            SynthKind::Snowtex => Some("semantic"),
            SynthKind::DofFlowers => Some("fixed"),
            SynthKind::Plain => None,
        }
    }
}

/// Number of images per split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn split_of(&self, i: usize) -> Split {
        if i < self.train {
            Split::Train
        } else if i < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// `n` training images of `kind` under `out_dir`, plus `manifest.json`.
pub fn make_synthetic_dataset(kind: SynthKind, n: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    make_synthetic_splits(
        kind,
        SplitCounts {
            train: n,
            ..Default::default()
        },
        seed,
        out_dir,
    )
}

pub fn make_synthetic_splits(kind: SynthKind, counts: SplitCounts, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if counts.total() == 0 {
        return Err(crate::PipelineError::BadSchema("synthetic dataset needs n ≥ 1".into()));
    }
    let mut entries = Vec::with_capacity(counts.total());
    for i in 0..counts.total() {
        let id = format!("{}_{i:04}", kind.name());
        let mut r = rng::stream(seed, &format!("synth/{}/{i}", kind.name()));
        let (image, label): (Image, Option<(String, Vec<u8>)>) = match kind {
            SynthKind::Stripes => {
                let (img, lanes) = stripes(&mut r, true);
                let json = serde_json::to_vec_pretty(&lanes).expect("serializable");
                (img, Some((format!("labels/{id}.json"), json)))
            }
            SynthKind::Plain => (stripes(&mut r, false).0, None),
            SynthKind::Snowtex => {
                let (img, sem) = snowtex(&mut r);
                let png = encode_gray(&sem)?;
                (img, Some((format!("labels/{id}.png"), png)))
            }
            SynthKind::DofFlowers => (dof_flower(&mut r), None),
        };
        let rel = format!("images/{id}.png");
        let bytes = image.encode_png()?;
        write_atomic(&out_dir.join(&rel), &bytes)?;
        let (label, label_sha256) = match label {
            Some((path, data)) => {
                write_atomic(&out_dir.join(&path), &data)?;
                (Some(path), Some(sha256_hex(&data)))
            }
            None => (None, None),
        };
        entries.push(ManifestEntry {
            id,
            image: rel,
            label,
            split: counts.split_of(i),
            sha256: sha256_hex(&bytes),
            label_sha256,
            provenance: None,
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA,
        prior_rule: kind.prior_rule().map(str::to_string),
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn encode_gray(g: &Grid<u8>) -> Result<Vec<u8>> {
    let img = Image::from_fn(g.height(), g.width(), 1, |y, x, _| g.get(y, x) as f32 / 255.0);
    Ok(img.encode_png()?)
}

fn noisy_ground(r: &mut rng::Rng, size: usize) -> Image {
    let base = r.random_range(0.26..0.36);
    let (fy, fx) = (r.random_range(0.5..1.5), r.random_range(0.5..1.5));
    let (py, px) = (r.random_range(0.0..2.0 * PI), r.random_range(0.0..2.0 * PI));
    let noise: Vec<f64> = (0..size * size * 3).map(|_| r.random_range(-0.05..0.05)).collect();
    let tint = [0.01, 0.0, -0.01];
    Image::from_fn(size, size, 3, |y, x, c| {
        let (u, v) = (y as f64 / size as f64, x as f64 / size as f64);
        let smooth = 0.04 * ((2.0 * PI * fy * u + py).sin() + (2.0 * PI * fx * v + px).sin());
        (base + smooth + tint[c] + noise[(y * size + x) * 3 + c]).clamp(0.0, 1.0) as f32
    })
}

/// Ground plus (optionally) two to three near-vertical bright stripes.
fn stripes(r: &mut rng::Rng, with_lanes: bool) -> (Image, LaneLabels) {
    let s = STRIPES_SIZE;
    let mut img = noisy_ground(r, s);
    let n = r.random_range(2..=3usize);
    let mut lanes = Vec::new();
    for k in 0..n {
        let slot = s as f64 / n as f64;
        let x_top = slot * (k as f64 + 0.5) + r.random_range(-0.15..0.15) * slot;
        let x_bot = x_top + r.random_range(-0.2..0.2) * slot;
        let x_mid = 0.5 * (x_top + x_bot) + r.random_range(-4.0..4.0);
        lanes.push(vec![[x_top, 0.0], [x_mid, s as f64 / 2.0], [x_bot, s as f64]]);
    }
    let labels = LaneLabels { lanes };
    if with_lanes {
        let domains = DomainTable::from_pairs(&[(1, "band"), (2, "ring")]).expect("static table");
        let rule = PriorRule::Lane {
            lane: "band".into(),
            asphalt: "ring".into(),
            lane_half_width: STRIPE_HALF_WIDTH,
            asphalt_width: Some(0.0),
        };
        let band = build_prior(&rule, Labels::Lanes(&labels), &domains, s, s).expect("valid stripe geometry");
        let level = r.random_range(0.8..0.9);
        for y in 0..s {
            for x in 0..s {
                if band.mask().get(y, x) == 1 {
                    for c in 0..3 {
                        let v: f64 = level + r.random_range(-0.03..0.03);
                        img.set(y, x, c, v as f32);
                    }
                }
            }
        }
    }
    (img, labels)
}

/// Sky band on top, road in the middle, snowy sidewalks at the sides.
fn snowtex(r: &mut rng::Rng) -> (Image, Grid<u8>) {
    let s = SNOWTEX_SIZE;
    let horizon = s / 3 + r.random_range(0..6);
    let half_top = r.random_range(4.0..10.0);
    let half_bot = r.random_range(26.0..36.0);
    let cx = s as f64 / 2.0 + r.random_range(-6.0..6.0);
    let sem = Grid::from_fn(s, s, |y, x| {
        if y < horizon {
            return 0;
        }
        let t = (y - horizon) as f64 / (s - horizon) as f64;
        let half = half_top + t * (half_bot - half_top);
        if (x as f64 + 0.5 - cx).abs() <= half {
            ROAD_CLASS
        } else {
            SIDEWALK_CLASS
        }
    });
    let noise: Vec<f64> = (0..s * s).map(|_| r.random_range(-1.0..1.0)).collect();
    let flakes: Vec<bool> = (0..s * s).map(|_| r.random_bool(0.15)).collect();
    let img = Image::from_fn(s, s, 3, |y, x, c| {
        let n = noise[y * s + x];
        let v = match sem.get(y, x) {
            0 => [0.55, 0.65, 0.8][c] + 0.1 * (1.0 - y as f64 / horizon as f64),
            ROAD_CLASS => 0.25 + 0.05 * n,
            _ => {
                if flakes[y * s + x] {
                    0.95
                } else {
                    0.7 + 0.06 * n + [0.0, 0.01, 0.03][c]
                }
            }
        };
        v.clamp(0.0, 1.0) as f32
    });
    (img, sem)
}

/// Petalled object over leafy texture. The texture is sharp inside a disc
/// around the object and blurred outside it.
fn dof_flower(r: &mut rng::Rng) -> Image {
    let s = FLOWERS_SIZE;
    let cells = s / 4;
    let leaf: Vec<[f64; 3]> = (0..cells * cells)
        .map(|_| {
            let g = r.random_range(0.25..0.75);
            [g * r.random_range(0.3..0.7), g, g * r.random_range(0.2..0.5)]
        })
        .collect();
    let fine: Vec<f64> = (0..s * s).map(|_| r.random_range(-0.12..0.12)).collect();
    let sharp = Image::from_fn(s, s, 3, |y, x, c| {
        (leaf[(y / 4) * cells + x / 4][c] + fine[y * s + x]).clamp(0.0, 1.0) as f32
    });
    let blurred = gaussian_blur(&sharp, 2.5);
    let c0 = s as f64 / 2.0;
    let sharp_radius = r.random_range(17.0..20.0);
    let mut img = Image::from_fn(s, s, 3, |y, x, c| {
        let (dy, dx) = (y as f64 + 0.5 - c0, x as f64 + 0.5 - c0);
        // Two-pixel ramp between the sharp disc and the blurred surround.
        let t = (((dx * dx + dy * dy).sqrt() - sharp_radius) / 2.0).clamp(0.0, 1.0) as f32;
        sharp.get(y, x, c) * (1.0 - t) + blurred.get(y, x, c) * t
    });
    let petals = r.random_range(5..=8) as f64;
    let radius = r.random_range(9.0..12.0);
    let phase = r.random_range(0.0..2.0 * PI);
    let hue = [r.random_range(0.6..1.0), r.random_range(0.1..0.6), r.random_range(0.2..0.9)];
    let stripes = r.random_range(0.8..1.6);
    for y in 0..s {
        for x in 0..s {
            let (dy, dx) = (y as f64 + 0.5 - c0, x as f64 + 0.5 - c0);
            let (rho, theta) = ((dx * dx + dy * dy).sqrt(), dy.atan2(dx));
            let edge = radius * (0.55 + 0.45 * (0.5 * petals * (theta + phase)).cos().abs());
            if rho > edge {
                continue;
            }
            let centre = rho < 0.3 * radius;
            let ridge = 0.5 + 0.5 * (stripes * rho * 2.0 + 3.0 * theta).sin();
            for c in 0..3 {
                let v = if centre {
                    [0.95, 0.8, 0.1][c] * (0.6 + 0.4 * ((x + y) % 2) as f64)
                } else {
                    hue[c] * (0.55 + 0.45 * ridge) + fine[y * s + x]
                };
                img.set(y, x, c, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}
