#![allow(dead_code)]

use std::path::{Path, PathBuf};

use localdom_pipeline::synth::{make_synthetic_dataset, make_synthetic_splits, SplitCounts, SynthKind};

pub fn recipes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

pub fn recipe(name: &str) -> serde_json::Value {
    let bytes = std::fs::read(recipes_dir().join(name)).unwrap();
    serde_json::from_slice(&bytes).unwrap()
}

/// Tiny stripes recipe (few steps) with its datasets under `dir`.
pub fn tiny_stripes(dir: &Path) -> PathBuf {
    make_synthetic_splits(SynthKind::Stripes, SplitCounts { train: 4, val: 0, test: 2 }, 7, &dir.join("data/stripes"))
        .unwrap();
    make_synthetic_dataset(SynthKind::Plain, 3, 8, &dir.join("data/plain")).unwrap();
    let mut cfg = recipe("stripes.json");
    cfg["gan"]["steps"] = 4.into();
    cfg["interpolation"]["vae"]["steps"] = 4.into();
    cfg["patches"][0]["per_image"] = 3.into();
    write_config(dir, "stripes.json", &cfg)
}

pub fn write_config(dir: &Path, name: &str, cfg: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

use localdom_core::gan::{Generator, GeneratorArch};
use localdom_core::inference::{InferenceConfig, TranslatorBundle};
use localdom_core::priors::{build_prior, DomainTable, GeometricPrior, Labels, PriorRule};
use localdom_core::vae::{MaskVae, VaeConfig};
use localdom_core::{rng, Image};
use localdom_pipeline::fsutil::sha256_hex;
use localdom_pipeline::manifest::{load_manifest, DatasetManifest};
use rand::Rng;

pub const TINY: usize = 8;

/// `n` random 8×8 images, ids `t{i:04}`; every `test_every`-th entry goes to the test split.
pub fn tiny_dataset(dir: &Path, n: usize, test_every: Option<usize>) -> DatasetManifest {
    let mut r = rng::stream(11, "tiny");
    let mut entries = Vec::with_capacity(n);
    std::fs::create_dir_all(dir.join("images")).unwrap();
    for i in 0..n {
        let px: Vec<f32> = (0..TINY * TINY * 3).map(|_| r.random::<u8>() as f32 / 255.0).collect();
        let img = Image::from_fn(TINY, TINY, 3, |y, x, c| px[(y * TINY + x) * 3 + c]);
        let rel = format!("images/t{i:04}.png");
        img.save_png(&dir.join(&rel)).unwrap();
        let split = match test_every {
            Some(k) if i % k == k - 1 => "test",
            _ => "train",
        };
        let sha = sha256_hex(&std::fs::read(dir.join(&rel)).unwrap());
        entries.push(serde_json::json!({"id": format!("t{i:04}"), "image": rel, "split": split, "sha256": sha}));
    }
    let m = serde_json::json!({"schema_version": 1, "entries": entries});
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec(&m).unwrap()).unwrap();
    load_manifest(&dir.join("manifest.json")).unwrap()
}

pub fn tiny_domains() -> (DomainTable, PriorRule) {
    let domains = DomainTable::from_pairs(&[(1, "in_focus"), (2, "out_of_focus")]).unwrap();
    let rule = PriorRule::Fixed {
        in_focus: "in_focus".into(),
        out_of_focus: "out_of_focus".into(),
        disc_fraction: 0.25,
        corner_fraction: 0.4,
    };
    (domains, rule)
}

pub fn tiny_prior() -> GeometricPrior {
    let (domains, rule) = tiny_domains();
    build_prior(&rule, Labels::None, &domains, TINY, TINY).unwrap()
}

/// Untrained bundle for 8×8 RGB inputs; `vae` adds an untrained size-8 mask VAE.
pub fn tiny_bundle(vae: bool) -> TranslatorBundle {
    let g = Generator::new(&GeneratorArch::default(), 3, 1);
    let v = vae.then(|| {
        let mut c = VaeConfig::new(1);
        c.size = TINY;
        MaskVae::new(&c).unwrap()
    });
    TranslatorBundle::new(g, v, InferenceConfig::new(1, 2)).unwrap()
}
