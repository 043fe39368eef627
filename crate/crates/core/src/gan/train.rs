//! Alternating LSGAN training over patch pools.

use localdom_nn::{Adam, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::jitter::{color_jitter, JitterRanges};
use super::losses::DeblurLoss;
use super::nets::{Discriminator, DiscriminatorArch, Generator, GeneratorArch};
use crate::image::Image;
use crate::patches::{MaskPatchSet, PatchSet};
use crate::{rng, Error, Result};

/// Which way the generator maps between the two local domains of a task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Source-domain patches (β) are translated into the target domain (α).
    #[default]
    BetaToAlpha,
    /// The reverse: α patches are translated towards β.
    AlphaToBeta,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskLoss {
    #[default]
    None,
    /// Histogram colour consistency plus inverse LoG variance on the translated batch.
    Deblur {
        #[serde(default = "default_bins")]
        bins: usize,
    },
}

fn default_bins() -> usize {
    32
}

fn d_lr() -> f32 {
    1e-3
}
fn d_beta1() -> f32 {
    0.5
}
fn d_beta2() -> f32 {
    0.999
}
fn d_batch() -> usize {
    8
}
fn d_one() -> f64 {
    1.0
}
fn d_cycle() -> f64 {
    10.0
}
fn d_identity() -> f64 {
    5.0
}
fn d_rec() -> f64 {
    10.0
}
fn d_patience() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    #[serde(default)]
    pub generator: GeneratorArch,
    #[serde(default)]
    pub discriminator: DiscriminatorArch,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default = "d_lr")]
    pub lr_g: f32,
    #[serde(default = "d_lr")]
    pub lr_d: f32,
    #[serde(default = "d_beta1")]
    pub beta1: f32,
    #[serde(default = "d_beta2")]
    pub beta2: f32,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default = "d_one")]
    pub lambda_adv: f64,
    /// Weight of the task loss (see [`TaskLoss`]).
    #[serde(default)]
    pub lambda_task: f64,
    /// Cycle-consistency weight for the residual backbone.
    #[serde(default = "d_cycle")]
    pub lambda_cycle: f64,
    /// Identity weight for the residual backbone.
    #[serde(default = "d_identity")]
    pub lambda_identity: f64,
    /// L1 reconstruction weight for the inpainting backbone.
    #[serde(default = "d_rec")]
    pub lambda_rec: f64,
    #[serde(default)]
    pub task_loss: TaskLoss,
    #[serde(default)]
    pub jitter: JitterRanges,
    #[serde(default)]
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Consecutive non-finite steps tolerated before giving up.
    #[serde(default = "d_patience")]
    pub max_nonfinite: usize,
}

impl GanConfig {
    pub fn new(steps: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "steps": steps })).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_adv", self.lambda_adv),
            ("lambda_task", self.lambda_task),
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_identity", self.lambda_identity),
            ("lambda_rec", self.lambda_rec),
        ];
        if let Some((name, w)) = weights.iter().find(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("{name} = {w} must be a finite non-negative weight")));
        }
        if self.batch_size == 0 || self.max_nonfinite == 0 {
            return Err(Error::Config("batch_size and max_nonfinite must be ≥ 1".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Everything learned by [`train`]. `inverse` and `disc_inverse` exist only for
/// the cycle-style backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub inverse: Option<Generator>,
    pub disc_inverse: Option<Discriminator>,
}

impl GanModel {
    pub fn new(cfg: &GanConfig, channels: usize) -> Self {
        let cycle = !cfg.generator.is_inpainting();
        Self {
            generator: Generator::new(&cfg.generator, channels, rng::derive_seed(cfg.seed, "G")),
            discriminator: Discriminator::new(&cfg.discriminator, channels, rng::derive_seed(cfg.seed, "D")),
            inverse: cycle.then(|| Generator::new(&cfg.generator, channels, rng::derive_seed(cfg.seed, "F"))),
            disc_inverse: cycle
                .then(|| Discriminator::new(&cfg.discriminator, channels, rng::derive_seed(cfg.seed, "D_inv"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub loss_task: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub opt_inverse: Option<Adam>,
    pub opt_disc_inverse: Option<Adam>,
    pub log: Vec<LossRecord>,
    pub rng: rng::Rng,
    nonfinite: usize,
}

impl TrainState {
    pub fn new(cfg: &GanConfig, model: &GanModel) -> Self {
        let adam = |lr| Adam::new(lr, cfg.beta1, cfg.beta2);
        Self {
            step: 0,
            opt_g: adam(cfg.lr_g),
            opt_d: adam(cfg.lr_d),
            opt_inverse: model.inverse.as_ref().map(|_| adam(cfg.lr_g)),
            opt_disc_inverse: model.disc_inverse.as_ref().map(|_| adam(cfg.lr_d)),
            log: Vec::new(),
            rng: rng::stream(cfg.seed, "gan-train"),
            nonfinite: 0,
        }
    }
}

/// Patches of one local domain: one `(patches, masks)` pair per patch size.
pub type DomainPool = [(PatchSet, MaskPatchSet)];

struct Batch {
    x: Tensor,
    hole: Option<Tensor>,
}

fn sample_batch(
    pool: &(PatchSet, MaskPatchSet),
    holes: Option<&MaskPatchSet>,
    n: usize,
    jitter: &JitterRanges,
    r: &mut rng::Rng,
) -> Batch {
    let (set, _) = pool;
    let imgs: Vec<Image> = (0..n)
        .map(|_| {
            let p = &set.get(r.random_range(0..set.len())).pixels;
            if jitter.is_zero() {
                p.clone()
            } else {
                color_jitter(p, r, jitter)
            }
        })
        .collect();
    let refs: Vec<&Image> = imgs.iter().collect();
    let x = Image::batch_to_tensor(&refs);
    let hole = holes.map(|m| {
        let s = set.size;
        let mut data = Vec::with_capacity(n * s * s);
        for _ in 0..n {
            data.extend_from_slice(m.get(r.random_range(0..m.len())).pixels.data());
        }
        Tensor::from_vec(&[n, 1, s, s], data)
    });
    Batch { x, hole }
}

fn lsgan_g(g: &mut Graph, s: Var) -> Var {
    let d = g.add_scalar(s, -1.0);
    let d = g.square(d);
    g.mean(d)
}

fn lsgan_d(g: &mut Graph, fake: Var, real: Var) -> Var {
    let f = g.square(fake);
    let f = g.mean(f);
    let r = lsgan_g(g, real);
    g.add(f, r)
}

fn l1(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

fn weighted(g: &mut Graph, acc: Option<Var>, term: Var, w: f64) -> Option<Var> {
    if w == 0.0 {
        return acc;
    }
    let t = g.scale(term, w as f32);
    Some(match acc {
        Some(a) => g.add(a, t),
        None => t,
    })
}

/// Batch-mean task loss on `out` against `input`, attached to the graph.
fn task_term(g: &mut Graph, loss: &TaskLoss, input: Var, out: Var) -> Option<Var> {
    let TaskLoss::Deblur { bins } = *loss else { return None };
    let dl = DeblurLoss {
        hist: super::losses::SoftHistogram::new(bins),
    };
    let xs = g.value(input).clone();
    let ys = g.value(out).clone();
    let n = ys.shape()[0];
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let (xi, yi) = (Image::from_tensor(&xs, i), Image::from_tensor(&ys, i));
        let (v, gr) = dl.value_and_grad(&xi, &yi);
        total += v / n as f64;
        let gi = Image::from_vec(yi.height(), yi.width(), yi.channels(), gr.iter().map(|&v| (v / n as f64) as f32).collect())
            .expect("gradient shape");
        grads.push(gi);
    }
    let refs: Vec<&Image> = grads.iter().collect();
    Some(g.custom_scalar(out, total as f32, Image::batch_to_tensor(&refs)))
}

/// Train the generator/discriminator pair.
///
/// `source` holds patches of the domain being translated, `target` those of the
/// domain it should come to resemble (swapped when `direction` is
/// [`Direction::AlphaToBeta`]). Pools are matched by patch size and visited
/// round-robin, one size-homogeneous batch per step. The inpainting backbone
/// reconstructs target patches through holes shaped like the source masks.
///
/// `checkpoint` is invoked every `checkpoint_every` steps and after the last.
pub fn train(
    source: &DomainPool,
    target: &DomainPool,
    cfg: &GanConfig,
    mut checkpoint: impl FnMut(&TrainState, &GanModel) -> Result<()>,
) -> Result<(TrainState, GanModel)> {
    cfg.validate()?;
    let (source, target) = match cfg.direction {
        Direction::BetaToAlpha => (source, target),
        Direction::AlphaToBeta => (target, source),
    };
    let mut pairs = Vec::new();
    for s in source {
        if let Some(t) = target.iter().find(|t| t.0.size == s.0.size) {
            if s.0.is_empty() || t.0.is_empty() {
                continue;
            }
            pairs.push((s, t));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptySet("no non-empty source/target patch pools of a shared size"));
    }
    let channels = pairs[0].0 .0.channels().expect("non-empty");
    if pairs
        .iter()
        .any(|(s, t)| s.0.channels() != Some(channels) || t.0.channels() != Some(channels))
    {
        return Err(Error::ShapeMismatch("source and target patches differ in channel count".into()));
    }
    let inpaint = cfg.generator.is_inpainting();
    if inpaint && pairs.iter().any(|(s, _)| s.1.is_empty()) {
        return Err(Error::EmptySet("inpainting needs source mask patches"));
    }

    let mut model = GanModel::new(cfg, channels);
    let mut state = TrainState::new(cfg, &model);
    while state.step < cfg.steps {
        let (src, tgt) = pairs[state.step % pairs.len()];
        let (loss_g, loss_d, loss_task) = if inpaint {
            inpaint_step(&mut model, &mut state, src, tgt, cfg)
        } else {
            cycle_step(&mut model, &mut state, src, tgt, cfg)
        };
        state.step += 1;
        let finite = loss_g.is_finite() && loss_d.is_finite() && loss_task.is_finite();
        state.nonfinite = if finite { 0 } else { state.nonfinite + 1 };
        state.log.push(LossRecord {
            step: state.step,
            loss_g,
            loss_d,
            loss_task,
        });
        if state.nonfinite >= cfg.max_nonfinite {
            return Err(Error::Diverged {
                step: state.step,
                what: if loss_g.is_finite() { "discriminator loss" } else { "generator loss" },
                consecutive: state.nonfinite,
            });
        }
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps {
            checkpoint(&state, &model)?;
        }
    }
    checkpoint(&state, &model)?;
    Ok((state, model))
}

/// One D update followed by one G update for the inpainting backbone.
fn inpaint_step(
    model: &mut GanModel,
    state: &mut TrainState,
    src: &(PatchSet, MaskPatchSet),
    tgt: &(PatchSet, MaskPatchSet),
    cfg: &GanConfig,
) -> (f64, f64, f64) {
    let batch = sample_batch(tgt, Some(&src.1), cfg.batch_size, &cfg.jitter, &mut state.rng);
    let hole = batch.hole.expect("inpainting batch has holes");

    // Discriminator.
    let mut g = Graph::new();
    let x = g.input(batch.x.clone());
    let h = g.input(hole.clone());
    let fake = model.generator.forward(&mut g, false, x, Some(h));
    let fake = g.detach(fake);
    let sf = model.discriminator.forward(&mut g, true, fake);
    let sr = model.discriminator.forward(&mut g, true, x);
    let ld = lsgan_d(&mut g, sf, sr);
    let loss_d = g.value(ld).item() as f64;
    if loss_d.is_finite() {
        let grads = g.backward(ld);
        state.opt_d.step(model.discriminator.store_mut(), &grads);
    }

    // Generator.
    let mut g = Graph::new();
    let x = g.input(batch.x);
    let h = g.input(hole);
    let out = model.generator.forward(&mut g, true, x, Some(h));
    let sf = model.discriminator.forward(&mut g, false, out);
    let adv = lsgan_g(&mut g, sf);
    let rec = l1(&mut g, out, x);
    let mut total = weighted(&mut g, None, adv, cfg.lambda_adv);
    total = weighted(&mut g, total, rec, cfg.lambda_rec);
    let task = task_term(&mut g, &cfg.task_loss, x, out);
    let loss_task = task.map_or(0.0, |t| g.value(t).item() as f64);
    if let Some(t) = task {
        total = weighted(&mut g, total, t, cfg.lambda_task);
    }
    let loss_g = g.value(adv).item() as f64;
    if let Some(total) = total {
        if g.value(total).all_finite() {
            let grads = g.backward(total);
            state.opt_g.step(model.generator.store_mut(), &grads);
        }
    }
    (loss_g, loss_d, loss_task)
}

/// Cycle-style update: D_t, D_s, then G and F jointly.
fn cycle_step(
    model: &mut GanModel,
    state: &mut TrainState,
    src: &(PatchSet, MaskPatchSet),
    tgt: &(PatchSet, MaskPatchSet),
    cfg: &GanConfig,
) -> (f64, f64, f64) {
    let bs = sample_batch(src, None, cfg.batch_size, &cfg.jitter, &mut state.rng).x;
    let bt = sample_batch(tgt, None, cfg.batch_size, &cfg.jitter, &mut state.rng).x;
    let inverse = model.inverse.as_ref().expect("cycle backbone has an inverse generator");
    let disc_inv = model.disc_inverse.as_ref().expect("cycle backbone has two discriminators");

    // Discriminators.
    let mut g = Graph::new();
    let s = g.input(bs.clone());
    let t = g.input(bt.clone());
    let fake_t = model.generator.forward(&mut g, false, s, None);
    let fake_t = g.detach(fake_t);
    let fake_s = inverse.forward(&mut g, false, t, None);
    let fake_s = g.detach(fake_s);
    let sf = model.discriminator.forward(&mut g, true, fake_t);
    let sr = model.discriminator.forward(&mut g, true, t);
    let ld_t = lsgan_d(&mut g, sf, sr);
    let sf = disc_inv.forward(&mut g, true, fake_s);
    let sr = disc_inv.forward(&mut g, true, s);
    let ld_s = lsgan_d(&mut g, sf, sr);
    let ld = g.add(ld_t, ld_s);
    let loss_d = g.value(ld_t).item() as f64;
    if g.value(ld).all_finite() {
        let grads = g.backward(ld);
        state.opt_d.step(model.discriminator.store_mut(), &grads);
        let opt = state.opt_disc_inverse.as_mut().expect("optimizer for inverse discriminator");
        opt.step(model.disc_inverse.as_mut().expect("inverse discriminator").store_mut(), &grads);
    }

    // Generators.
    let inverse = model.inverse.as_ref().expect("cycle backbone has an inverse generator");
    let disc_inv = model.disc_inverse.as_ref().expect("cycle backbone has two discriminators");
    let mut g = Graph::new();
    let s = g.input(bs);
    let t = g.input(bt);
    let fake_t = model.generator.forward(&mut g, true, s, None);
    let fake_s = inverse.forward(&mut g, true, t, None);
    let sf = model.discriminator.forward(&mut g, false, fake_t);
    let adv_t = lsgan_g(&mut g, sf);
    let sf = disc_inv.forward(&mut g, false, fake_s);
    let adv_s = lsgan_g(&mut g, sf);
    let mut total = weighted(&mut g, None, adv_t, cfg.lambda_adv);
    total = weighted(&mut g, total, adv_s, cfg.lambda_adv);
    if cfg.lambda_cycle > 0.0 {
        let back_s = inverse.forward(&mut g, true, fake_t, None);
        let back_t = model.generator.forward(&mut g, true, fake_s, None);
        let c1 = l1(&mut g, back_s, s);
        let c2 = l1(&mut g, back_t, t);
        let c = g.add(c1, c2);
        total = weighted(&mut g, total, c, cfg.lambda_cycle);
    }
    if cfg.lambda_identity > 0.0 {
        let id_t = model.generator.forward(&mut g, true, t, None);
        let id_s = inverse.forward(&mut g, true, s, None);
        let i1 = l1(&mut g, id_t, t);
        let i2 = l1(&mut g, id_s, s);
        let i = g.add(i1, i2);
        total = weighted(&mut g, total, i, cfg.lambda_identity);
    }
    let task = task_term(&mut g, &cfg.task_loss, s, fake_t);
    let loss_task = task.map_or(0.0, |v| g.value(v).item() as f64);
    if let Some(v) = task {
        total = weighted(&mut g, total, v, cfg.lambda_task);
    }
    let loss_g = g.value(adv_t).item() as f64;
    if let Some(total) = total {
        if g.value(total).all_finite() {
            let grads = g.backward(total);
            state.opt_g.step(model.generator.store_mut(), &grads);
            let opt = state.opt_inverse.as_mut().expect("optimizer for inverse generator");
            opt.step(model.inverse.as_mut().expect("inverse generator").store_mut(), &grads);
        }
    }
    (loss_g, loss_d, loss_task)
}
