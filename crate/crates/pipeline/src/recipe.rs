//! Staged, resumable execution of a task recipe.
//!
//! Run directory layout:
//!
//! ```text
//! patches/        extract      patches.ldar
//! ckpt/gan/       train-gan    gan.ldar, losses.csv
//! ckpt/vae/       train-vae    vae.ldar, losses.csv, vae_report.json
//! out/            translate    bundle.ldar, images/, masks/
//! out/eval/       evaluate     metrics.csv, table.csv   (+ report.json at the root)
//! out/augment/    augment      manifest.json, images/, labels/
//! ```
//!
//! Every stage directory also holds `config.json` (the resolved task config)
//! and `stage.json` (input hash, seeds, files read and output checksums). A
//! stage whose recorded input hash and outputs still match is skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use localdom_core::archive::{bundle_from_archive, bundle_to_archive, gan_from_archive, gan_to_archive, vae_from_archive, vae_to_archive, Archive};
use localdom_core::gan::{train, Generator};
use localdom_core::inference::{hallucinate, MaskSource, TranslatorBundle};
use localdom_core::patches::{crop_at, extract_patches, MaskPatch, MaskPatchSet, PatchSet, PatchSpec};
use localdom_core::priors::indicator_mask;
use localdom_core::vae::{train_vae, Sampling};
use localdom_core::{Image, Mask};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentOptions};
use crate::bank::PatchBank;
use crate::config::TaskConfig;
use crate::dataset::{entry_prior, load_split};
use crate::fsutil::{normalize, read_bytes, relative_to, sha256_hex, write_atomic, write_json_atomic, AccessAudit};
use crate::manifest::{load_manifest_audited, Split};
use crate::report::evaluate;
use crate::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Extract,
    TrainGan,
    TrainVae,
    Translate,
    Evaluate,
    Augment,
    All,
}

impl Stage {
    pub const ORDER: [Stage; 6] = [
        Stage::Extract,
        Stage::TrainGan,
        Stage::TrainVae,
        Stage::Translate,
        Stage::Evaluate,
        Stage::Augment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::TrainGan => "train-gan",
            Stage::TrainVae => "train-vae",
            Stage::Translate => "translate",
            Stage::Evaluate => "evaluate",
            Stage::Augment => "augment",
            Stage::All => "all",
        }
    }

    /// Directory of the stage's artifacts, relative to the run directory.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Extract => "patches",
            Stage::TrainGan => "ckpt/gan",
            Stage::TrainVae => "ckpt/vae",
            Stage::Translate => "out",
            Stage::Evaluate => "out/eval",
            Stage::Augment => "out/augment",
            Stage::All => "",
        }
    }

    /// Extraction and training may only see the source training split.
    fn source_only(self) -> bool {
        matches!(self, Stage::Extract | Stage::TrainGan | Stage::TrainVae)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the config's seed.
    pub seed: Option<u64>,
    /// Run directory; defaults to `runs/<config stem>` next to the config.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
}

/// Contents of `stage.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub input_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Files read, relative to the config directory where possible.
    pub reads: Vec<String>,
    /// Output file (relative to the run directory) → sha256.
    pub outputs: BTreeMap<String, String>,
}

pub struct Context {
    pub config_path: PathBuf,
    pub config_dir: PathBuf,
    pub cfg: TaskConfig,
    pub run_dir: PathBuf,
    pub manifest_path: PathBuf,
}

impl Context {
    pub fn new(config: &Path, opts: &RunOptions) -> Result<Self> {
        let mut cfg = TaskConfig::load(config)?;
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        let cfg = cfg.resolved();
        let config_dir = config.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        let run_dir = opts.out.clone().unwrap_or_else(|| config_dir.join("runs").join(stem));
        Ok(Self {
            manifest_path: config_dir.join(&cfg.dataset),
            config_path: config.to_path_buf(),
            config_dir,
            cfg,
            run_dir,
        })
    }

    pub fn stage_dir(&self, s: Stage) -> PathBuf {
        self.run_dir.join(s.dir())
    }

    fn reference_path(&self) -> Option<PathBuf> {
        self.cfg.evaluation.reference.as_ref().map(|r| self.config_dir.join(r))
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        let mut s = BTreeMap::from([
            ("task".to_string(), self.cfg.seed),
            ("gan".to_string(), self.cfg.gan.seed),
            ("patches".to_string(), self.cfg.patch_seed()),
            ("augment".to_string(), self.cfg.augment_seed()),
        ]);
        if let Some(i) = &self.cfg.interpolation {
            s.insert("vae".into(), i.vae.seed);
        }
        s
    }

    fn dependencies(&self, s: Stage) -> Vec<Stage> {
        let vae = self.cfg.interpolation.is_some();
        match s {
            Stage::Extract | Stage::All => vec![],
            Stage::TrainGan => vec![Stage::Extract],
            Stage::TrainVae => vec![Stage::Extract, Stage::TrainGan],
            Stage::Translate if vae => vec![Stage::TrainGan, Stage::TrainVae],
            Stage::Translate => vec![Stage::TrainGan],
            Stage::Evaluate | Stage::Augment => vec![Stage::Translate],
        }
    }

    /// Read audit for stage `s`; restricted to the training split for extraction and training.
    pub fn audit(&self, s: Stage) -> Result<AccessAudit> {
        if !s.source_only() {
            return Ok(AccessAudit::unrestricted(s.name()));
        }
        // The allowed set comes from the manifest itself, read once up front.
        let bytes = read_bytes(&self.manifest_path)?;
        let m: crate::manifest::DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|e| PipelineError::BadSchema(format!("manifest: {e}")))?;
        let root = self.manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut files = vec![self.manifest_path.clone(), self.config_path.clone()];
        for e in m.entries.iter().filter(|e| e.split == Split::Train) {
            files.push(root.join(&e.image));
            if let Some(l) = &e.label {
                files.push(root.join(l));
            }
        }
        let dirs = vec![self.stage_dir(Stage::Extract), self.run_dir.join("ckpt")];
        Ok(AccessAudit::restricted(s.name(), files, dirs))
    }

    fn record_path(&self, s: Stage) -> PathBuf {
        self.stage_dir(s).join("stage.json")
    }

    fn load_record(&self, s: Stage) -> Option<StageRecord> {
        let bytes = std::fs::read(self.record_path(s)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn outputs_intact(&self, r: &StageRecord) -> bool {
        r.outputs.iter().all(|(rel, sha)| {
            std::fs::read(self.run_dir.join(rel)).is_ok_and(|b| &sha256_hex(&b) == sha)
        })
    }

    /// Hash of everything a stage's result depends on.
    fn input_hash(&self, s: Stage, upstream: &[StageRecord]) -> Result<String> {
        let file_hash = |p: &Path| -> Result<String> { Ok(sha256_hex(&read_bytes(p)?)) };
        let mut extra = BTreeMap::new();
        if s.source_only() || matches!(s, Stage::Translate | Stage::Evaluate | Stage::Augment) {
            extra.insert("manifest".to_string(), file_hash(&self.manifest_path)?);
        }
        if s == Stage::Evaluate {
            if let Some(r) = self.reference_path() {
                extra.insert("reference".into(), file_hash(&r)?);
            }
            if let Some(b) = crate::backends::backends_file().filter(|p| p.exists()) {
                extra.insert("backends".into(), file_hash(&b)?);
            }
        }
        let doc = serde_json::json!({
            "stage": s.name(),
            "config": self.cfg,
            "files": extra,
            "upstream": upstream.iter().map(|r| (&r.stage, &r.outputs)).collect::<Vec<_>>(),
        });
        Ok(sha256_hex(doc.to_string().as_bytes()))
    }
}

/// Run `stage` (and, for `all`, every stage in order) for the config at `config`.
pub fn run_recipe(config: &Path, stage: Stage, opts: &RunOptions) -> Result<Vec<StageOutcome>> {
    let ctx = Context::new(config, opts)?;
    let stages: Vec<Stage> = match stage {
        Stage::All => Stage::ORDER
            .into_iter()
            .filter(|s| *s != Stage::TrainVae || ctx.cfg.interpolation.is_some())
            .collect(),
        s => vec![s],
    };
    stages.into_iter().map(|s| run_stage(&ctx, s)).collect()
}

fn run_stage(ctx: &Context, s: Stage) -> Result<StageOutcome> {
    if s == Stage::TrainVae && ctx.cfg.interpolation.is_none() {
        return Err(PipelineError::BadSchema("train-vae needs an `interpolation` section".into()));
    }
    let mut upstream = Vec::new();
    for d in ctx.dependencies(s) {
        match ctx.load_record(d) {
            Some(r) if ctx.outputs_intact(&r) => upstream.push(r),
            _ => {
                return Err(PipelineError::StageOrder {
                    stage: s.name().into(),
                    missing: d.name().into(),
                })
            }
        }
    }
    let input_hash = ctx.input_hash(s, &upstream)?;
    if let Some(r) = ctx.load_record(s) {
        if r.input_hash == input_hash && ctx.outputs_intact(&r) {
            log::info!("{}: up to date", s.name());
            return Ok(StageOutcome { stage: s, skipped: true });
        }
    }
    log::info!("{}: running", s.name());
    let mut audit = ctx.audit(s)?;
    audit.check(&ctx.config_path)?;
    let outputs = match s {
        Stage::Extract => extract(ctx, &mut audit)?,
        Stage::TrainGan => train_gan(ctx, &mut audit)?,
        Stage::TrainVae => train_mask_vae(ctx, &mut audit)?,
        Stage::Translate => translate(ctx, &mut audit)?,
        Stage::Evaluate => evaluate(ctx, &mut audit)?,
        Stage::Augment => augment(ctx, &mut audit)?,
        Stage::All => unreachable!("expanded by run_recipe"),
    };
    let dir = ctx.stage_dir(s);
    write_json_atomic(&dir.join("config.json"), &ctx.cfg)?;
    let mut hashed = BTreeMap::new();
    for p in outputs {
        let rel = relative_to(&p, &ctx.run_dir).to_string_lossy().replace('\\', "/");
        hashed.insert(rel, sha256_hex(&read_bytes(&p)?));
    }
    let record = StageRecord {
        stage: s.name().into(),
        input_hash,
        seeds: ctx.seeds(),
        reads: audit
            .reads()
            .iter()
            .map(|p| relative_to(p, &ctx.config_dir).to_string_lossy().replace('\\', "/"))
            .collect(),
        outputs: hashed,
    };
    write_json_atomic(&ctx.record_path(s), &record)?;
    Ok(StageOutcome { stage: s, skipped: false })
}

fn save_archive(path: &Path, a: &Archive) -> Result<PathBuf> {
    write_atomic(path, &a.to_bytes())?;
    Ok(path.to_path_buf())
}

fn load_archive(path: &Path, audit: &mut AccessAudit) -> Result<Archive> {
    Ok(Archive::from_bytes(&audit.read(path)?)?)
}

fn extract(ctx: &Context, audit: &mut AccessAudit) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let manifest = load_manifest_audited(&ctx.manifest_path, Some(Split::Train), audit)?;
    let samples = load_split(cfg, &manifest, Split::Train, audit)?;
    if samples.is_empty() {
        return Err(localdom_core::Error::EmptySet("training split").into());
    }
    let (alpha, beta) = (cfg.alpha_id()?, cfg.beta_id()?);
    let mut bank = PatchBank::default();
    for plan in &cfg.patches {
        let spec = PatchSpec::new(plan.size, plan.per_image, cfg.patch_seed());
        let mut pools = [
            (PatchSet::new(alpha, plan.size), MaskPatchSet::new(alpha, plan.size)),
            (PatchSet::new(beta, plan.size), MaskPatchSet::new(beta, plan.size)),
        ];
        let mut edits = MaskPatchSet::new(beta, plan.size);
        for s in &samples {
            spec.validate(s.image.height(), s.image.width())?;
            for (d, pool) in [alpha, beta].into_iter().zip(pools.iter_mut()) {
                match extract_patches(&s.image, &s.entry.id, &s.prior, d, &spec) {
                    Ok((p, m)) => {
                        if d == alpha {
                            let centers: Vec<_> = m.masks().iter().map(|x| x.center).collect();
                            let beta_ind = indicator_mask(&s.prior, beta)?;
                            edits.extend(crop_at(&s.image, &beta_ind, &s.entry.id, beta, plan.size, &centers)?.1)?;
                        }
                        pool.0.extend(p)?;
                        pool.1.extend(m)?;
                    }
                    Err(localdom_core::Error::EmptyDomain(_)) => {
                        log::warn!("{}: no valid {}x{} patch centres for domain {d}", s.entry.id, plan.size, plan.size);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let [a, b] = pools;
        bank.pools.push(a);
        bank.pools.push(b);
        bank.edits.push(edits);
    }
    let path = ctx.stage_dir(Stage::Extract).join("patches.ldar");
    Ok(vec![save_archive(&path, &bank.to_archive())?])
}

fn load_bank(ctx: &Context, audit: &mut AccessAudit) -> Result<PatchBank> {
    PatchBank::from_archive(&load_archive(&ctx.stage_dir(Stage::Extract).join("patches.ldar"), audit)?)
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)?;
    Ok(path.to_path_buf())
}

fn train_gan(ctx: &Context, audit: &mut AccessAudit) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let bank = load_bank(ctx, audit)?;
    let (source, target) = (bank.pools_of(cfg.beta_id()?), bank.pools_of(cfg.alpha_id()?));
    let dir = ctx.stage_dir(Stage::TrainGan);
    let ckpt = dir.join("gan.ldar");
    let (state, model) = train(&source, &target, &cfg.gan, |st, m| {
        log::info!("train-gan: step {}/{}", st.step, cfg.gan.steps);
        save_archive(&ckpt, &gan_to_archive(m, &cfg.gan)).map(|_| ()).map_err(|e| match e {
            PipelineError::Core(c) => c,
            other => localdom_core::Error::Config(other.to_string()),
        })
    })?;
    let mut out = vec![save_archive(&ckpt, &gan_to_archive(&model, &cfg.gan))?];
    out.push(write_csv(&dir.join("losses.csv"), &state.log)?);
    Ok(out)
}

/// Pixels where translation changes luminance by more than `threshold`, inside `hole`.
fn difference_mask(x: &Image, y: &Image, hole: &Mask, threshold: f32) -> Mask {
    let (lx, ly) = (x.luminance(), y.luminance());
    Mask::from_fn(x.height(), x.width(), |r, c| {
        if hole.get(r, c) > 0.5 && (ly.get(r, c) - lx.get(r, c)).abs() > threshold {
            1.0
        } else {
            0.0
        }
    })
}

fn train_mask_vae(ctx: &Context, audit: &mut AccessAudit) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let interp = cfg.interpolation.as_ref().expect("checked by run_stage");
    let bank = load_bank(ctx, audit)?;
    let (gan, _) = gan_from_archive(&load_archive(&ctx.stage_dir(Stage::TrainGan).join("gan.ldar"), audit)?)?;
    let generator: &Generator = &gan.generator;
    let (alpha, beta) = (cfg.alpha_id()?, cfg.beta_id()?);
    // Edit masks: β patches, and β-indicator crops at α centres, each either as
    // is or reduced to the pixels the generator actually changes.
    let mut sets = Vec::new();
    let alpha_pools = bank.pools_of(alpha);
    let pairs = bank
        .pools_of(beta)
        .into_iter()
        .chain(alpha_pools.iter().zip(&bank.edits).map(|((p, _), e)| (p.clone(), e.clone())));
    for (patches, masks) in pairs {
        let mut set = MaskPatchSet::new(beta, masks.size);
        for (p, m) in patches.patches().iter().zip(masks.masks()) {
            let pixels = match interp.mask_source {
                MaskSource::Indicator => m.pixels.clone(),
                MaskSource::Difference { threshold } => {
                    let y = generator.translate(&p.pixels, Some(&m.pixels))?;
                    difference_mask(&p.pixels, &y, &m.pixels, threshold)
                }
            };
            set.push(MaskPatch { pixels, ..m.clone() })?;
        }
        sets.push(set);
    }
    let refs: Vec<&MaskPatchSet> = sets.iter().collect();
    let (vae, report) = train_vae(&refs, &interp.vae)?;
    let dir = ctx.stage_dir(Stage::TrainVae);
    let mut out = vec![save_archive(&dir.join("vae.ldar"), &vae_to_archive(&vae))?];
    out.push(write_csv(&dir.join("losses.csv"), &report.log)?);
    let summary = serde_json::json!({
        "steps": report.steps,
        "train_masks": report.train_masks,
        "heldout_masks": report.heldout_masks,
        "heldout_iou": report.heldout_iou,
    });
    let p = dir.join("vae_report.json");
    write_json_atomic(&p, &summary)?;
    out.push(p);
    Ok(out)
}

pub fn load_bundle(ctx: &Context, audit: &mut AccessAudit) -> Result<TranslatorBundle> {
    Ok(bundle_from_archive(&load_archive(&ctx.stage_dir(Stage::Translate).join("bundle.ldar"), audit)?)?)
}

fn translate(ctx: &Context, audit: &mut AccessAudit) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let (gan, _) = gan_from_archive(&load_archive(&ctx.stage_dir(Stage::TrainGan).join("gan.ldar"), audit)?)?;
    let vae = match cfg.interpolation {
        Some(_) => Some(vae_from_archive(&load_archive(&ctx.stage_dir(Stage::TrainVae).join("vae.ldar"), audit)?)?),
        None => None,
    };
    let bundle = TranslatorBundle::new(gan.generator, vae, cfg.inference()?)?;
    let dir = ctx.stage_dir(Stage::Translate);
    let mut out = vec![save_archive(&dir.join("bundle.ldar"), &bundle_to_archive(&bundle))?];
    let manifest = load_manifest_audited(&ctx.manifest_path, Some(Split::Test), audit)?;
    for s in load_split(cfg, &manifest, Split::Test, audit)? {
        let h = hallucinate(&bundle, &s.image, &s.prior, None, Sampling::Deterministic)?;
        let p = dir.join("images").join(format!("{}.png", s.entry.id));
        write_atomic(&p, &h.image.encode_png()?)?;
        out.push(p);
        if let Some(pz) = h.p_z {
            let p = dir.join("masks").join(format!("{}.png", s.entry.id));
            write_atomic(&p, &Image::from_grid(&pz, 1).encode_png()?)?;
            out.push(p);
        }
    }
    Ok(out)
}

fn augment(ctx: &Context, audit: &mut AccessAudit) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let bundle = load_bundle(ctx, audit)?;
    let manifest = load_manifest_audited(&ctx.manifest_path, None, audit)?;
    let opts = AugmentOptions {
        p_aug: cfg.p_aug,
        z_range: cfg.interpolation.as_ref().map(|i| i.z_range),
        gamma_range: bundle.config.gamma_range,
        seed: cfg.augment_seed(),
    };
    let dir = ctx.stage_dir(Stage::Augment);
    let out = augment_dataset(
        &manifest,
        |e, img| entry_prior(cfg, &manifest, e, img.dims(), audit),
        &bundle,
        &opts,
        &dir,
    )?;
    let mut files = vec![dir.join("manifest.json")];
    for e in &out.entries {
        files.push(out.image_path(e));
        files.extend(out.label_path(e));
    }
    Ok(files.into_iter().map(|p| normalize(&p)).collect())
}
