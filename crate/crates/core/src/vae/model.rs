use localdom_nn::{Bind, Conv2d, ConvGeom, Graph, Linear, ParamStore, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::image::Mask;
use crate::patches::MaskPatchSet;
use crate::{rng, Error, Result};

/// Probability clamp used by the Bernoulli reconstruction term.
pub const EPS_BERNOULLI: f64 = 1e-6;

fn d_size() -> usize {
    32
}
fn d_latent() -> usize {
    64
}
fn d_width() -> usize {
    8
}
fn d_batch() -> usize {
    16
}
fn d_lr() -> f32 {
    2e-3
}
fn d_kl() -> f64 {
    1.0
}
fn d_holdout() -> f64 {
    0.1
}
fn d_patience() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Side of the square mask patches the model works on; multiple of 8.
    #[serde(default = "d_size")]
    pub size: usize,
    #[serde(default = "d_latent")]
    pub latent: usize,
    #[serde(default = "d_width")]
    pub width: usize,
    pub steps: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f32,
    #[serde(default = "d_kl")]
    pub kl_weight: f64,
    /// Fraction of masks held out for the reconstruction IoU report.
    #[serde(default = "d_holdout")]
    pub holdout: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_patience")]
    pub max_nonfinite: usize,
}

impl VaeConfig {
    pub fn new(steps: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "steps": steps })).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 || self.size % 8 != 0 {
            return Err(Error::Config(format!("VAE patch size {} must be a positive multiple of 8", self.size)));
        }
        if self.latent == 0 || self.width == 0 || self.batch_size == 0 || self.max_nonfinite == 0 {
            return Err(Error::Config("latent, width, batch_size and max_nonfinite must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) || !(self.kl_weight >= 0.0) || !(self.lr > 0.0) {
            return Err(Error::Config("holdout ∈ [0,1), kl_weight ≥ 0 and lr > 0 required".into()));
        }
        Ok(())
    }
}

/// Reconstruction and KL parts of the negative ELBO.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elbo {
    pub reconstruction: f64,
    pub kl: f64,
}

impl Elbo {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.kl
    }
}

/// `KL(N(μ, diag e^{logvar}) || N(0, I))`.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Negative ELBO of one binary mask under Bernoulli pixel probabilities `recon`
/// (clamped to `[ε, 1-ε]`) and a diagonal Gaussian posterior.
pub fn elbo_loss(x: &Mask, recon: &Mask, mu: &[f64], logvar: &[f64]) -> Result<Elbo> {
    if x.dims() != recon.dims() || mu.len() != logvar.len() {
        return Err(Error::ShapeMismatch("elbo_loss inputs disagree in shape".into()));
    }
    let reconstruction = x
        .data()
        .iter()
        .zip(recon.data())
        .map(|(&t, &p)| {
            let p = (p as f64).clamp(EPS_BERNOULLI, 1.0 - EPS_BERNOULLI);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(Elbo {
        reconstruction,
        kl: gaussian_kl(mu, logvar),
    })
}

/// Convolutional mask VAE: three stride-2 convolutions down, three
/// upsample+conv stages back up.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVae {
    config: VaeConfig,
    store: ParamStore,
    enc: Vec<Conv2d>,
    mu: Linear,
    logvar: Linear,
    dec_in: Linear,
    dec: Vec<Conv2d>,
}

impl MaskVae {
    pub fn new(config: &VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, "vae-init");
        let mut store = ParamStore::new();
        let (w, s8) = (config.width, config.size / 8);
        let flat = 2 * w * s8 * s8;
        let enc = vec![
            Conv2d::new(&mut store, "enc0", 1, w, 3, ConvGeom::strided(3, 2), &mut r),
            Conv2d::new(&mut store, "enc1", w, 2 * w, 3, ConvGeom::strided(3, 2), &mut r),
            Conv2d::new(&mut store, "enc2", 2 * w, 2 * w, 3, ConvGeom::strided(3, 2), &mut r),
        ];
        // Small mean head: an untrained encoder maps everything close to the prior mean.
        let mu = Linear::with_bound(&mut store, "mu", flat, config.latent, 1e-3, &mut r);
        let logvar = Linear::new(&mut store, "logvar", flat, config.latent, &mut r);
        let dec_in = Linear::new(&mut store, "dec_in", config.latent, flat, &mut r);
        let dec = vec![
            Conv2d::new(&mut store, "dec0", 2 * w, 2 * w, 3, ConvGeom::same(3, 1), &mut r),
            Conv2d::new(&mut store, "dec1", 2 * w, w, 3, ConvGeom::same(3, 1), &mut r),
            Conv2d::new(&mut store, "dec2", w, 1, 3, ConvGeom::same(3, 1), &mut r),
        ];
        Ok(Self {
            config: config.clone(),
            store,
            enc,
            mu,
            logvar,
            dec_in,
            dec,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `(μ, logvar)` nodes for an N×1×S×S batch.
    pub fn encode_graph(&self, g: &mut Graph, trainable: bool, x: Var) -> (Var, Var) {
        let p = Bind {
            store: &self.store,
            trainable,
        };
        let mut h = x;
        for l in &self.enc {
            h = l.forward(g, p, h);
            h = g.leaky_relu(h, 0.2);
        }
        let n = g.value(h).shape()[0];
        let flat = g.value(h).len() / n;
        let h = g.reshape(h, &[n, flat]);
        (self.mu.forward(g, p, h), self.logvar.forward(g, p, h))
    }

    /// Logits of the reconstruction, N×1×S×S.
    pub fn decode_graph(&self, g: &mut Graph, trainable: bool, z: Var) -> Var {
        let p = Bind {
            store: &self.store,
            trainable,
        };
        let n = g.value(z).shape()[0];
        let (w, s8) = (self.config.width, self.config.size / 8);
        let h = self.dec_in.forward(g, p, z);
        let h = g.leaky_relu(h, 0.2);
        let mut h = g.reshape(h, &[n, 2 * w, s8, s8]);
        let last = self.dec.len() - 1;
        for (i, l) in self.dec.iter().enumerate() {
            h = g.upsample2x(h);
            h = l.forward(g, p, h);
            if i < last {
                h = g.leaky_relu(h, 0.2);
            }
        }
        h
    }

    fn check(&self, m: &Mask) -> Result<()> {
        let s = self.config.size;
        if m.dims() != (s, s) {
            return Err(Error::ShapeMismatch(format!("mask {:?} vs VAE patch size {s}", m.dims())));
        }
        Ok(())
    }

    fn batch(&self, masks: &[&Mask]) -> Result<Tensor> {
        let s = self.config.size;
        let mut data = Vec::with_capacity(masks.len() * s * s);
        for m in masks {
            self.check(m)?;
            data.extend_from_slice(m.data());
        }
        Ok(Tensor::from_vec(&[masks.len(), 1, s, s], data))
    }

    /// Posterior parameters `(μ, logvar)` for each mask.
    pub fn posterior(&self, masks: &[&Mask]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        if masks.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.input(self.batch(masks)?);
        let (mu, lv) = self.encode_graph(&mut g, false, x);
        let k = self.config.latent;
        let rows = |v: &Tensor| -> Vec<Vec<f64>> {
            v.data().chunks(k).map(|c| c.iter().map(|&x| x as f64).collect()).collect()
        };
        Ok(rows(g.value(mu)).into_iter().zip(rows(g.value(lv))).collect())
    }

    /// Decode latent codes into masks with values in `[0, 1]`.
    pub fn decode(&self, codes: &[Vec<f64>]) -> Result<Vec<Mask>> {
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        let k = self.config.latent;
        if let Some(c) = codes.iter().find(|c| c.len() != k) {
            return Err(Error::ShapeMismatch(format!("latent of length {} vs {k}", c.len())));
        }
        let data = codes.iter().flatten().map(|&v| v as f32).collect();
        let mut g = Graph::new();
        let z = g.input(Tensor::from_vec(&[codes.len(), k], data));
        let logits = self.decode_graph(&mut g, false, z);
        let s = self.config.size;
        Ok(g.value(logits)
            .data()
            .chunks(s * s)
            .map(|c| Mask::from_vec(s, s, c.iter().map(|&v| localdom_nn::sigmoid(v)).collect()).expect("sized"))
            .collect())
    }

    /// Deterministic reconstruction `D(μ(x))`.
    pub fn reconstruct(&self, masks: &[&Mask]) -> Result<Vec<Mask>> {
        let codes: Vec<Vec<f64>> = self.posterior(masks)?.into_iter().map(|(mu, _)| mu).collect();
        self.decode(&codes)
    }
}

/// Intersection over union of the `> 0.5` regions; two empty masks score 1.
pub fn mask_iou(a: &Mask, b: &Mask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Nearest-neighbour resize of a mask to `size × size`.
pub fn resize_mask(m: &Mask, size: usize) -> Mask {
    let (h, w) = m.dims();
    if (h, w) == (size, size) {
        return m.clone();
    }
    Mask::from_fn(size, size, |y, x| m.get(y * h / size, x * w / size))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeLossRecord {
    pub step: usize,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeReport {
    pub steps: usize,
    pub train_masks: usize,
    pub heldout_masks: usize,
    /// Mean reconstruction IoU on held-out masks (on the training masks if none were held out).
    pub heldout_iou: f64,
    pub log: Vec<VaeLossRecord>,
}

/// Fit a [`MaskVae`] to mask patches; patches of other sizes are resized.
pub fn train_vae(masks: &[&MaskPatchSet], config: &VaeConfig) -> Result<(MaskVae, VaeReport)> {
    let mut vae = MaskVae::new(config)?;
    let all: Vec<Mask> = masks
        .iter()
        .flat_map(|s| s.masks().iter().map(|m| resize_mask(&m.pixels, config.size)))
        .collect();
    if all.is_empty() {
        return Err(Error::EmptySet("mask patches for VAE training"));
    }
    let mut r = rng::stream(config.seed, "vae-train");
    let mut order: Vec<usize> = (0..all.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
    let n_hold = if all.len() >= 2 {
        ((all.len() as f64 * config.holdout).round() as usize).min(all.len() - 1)
    } else {
        0
    };
    let (hold, train): (Vec<usize>, Vec<usize>) = (order[..n_hold].to_vec(), order[n_hold..].to_vec());

    let mut opt = localdom_nn::Adam::new(config.lr, 0.9, 0.999);
    let s = config.size;
    let mut log = Vec::with_capacity(config.steps);
    let mut streak = 0;
    for step in 1..=config.steps {
        let n = config.batch_size;
        let mut data = Vec::with_capacity(n * s * s);
        for _ in 0..n {
            data.extend_from_slice(all[train[r.random_range(0..train.len())]].data());
        }
        let target = Tensor::from_vec(&[n, 1, s, s], data);
        let noise: Vec<f32> = (0..n * config.latent).map(|_| r.sample(StandardNormal)).collect();

        let mut g = Graph::new();
        let x = g.input(target.clone());
        let (mu, lv) = vae.encode_graph(&mut g, true, x);
        let half = g.scale(lv, 0.5);
        let std = g.exp(half);
        let eps = g.input(Tensor::from_vec(&[n, config.latent], noise));
        let z = g.mul(std, eps);
        let z = g.add(mu, z);
        let logits = vae.decode_graph(&mut g, true, z);
        let rec = g.bce_with_logits(logits, &target);
        let kl = g.gaussian_kl(mu, lv);
        let klw = g.scale(kl, config.kl_weight as f32);
        let loss = g.add(rec, klw);
        let (rv, kv) = (g.value(rec).item() as f64, g.value(kl).item() as f64);
        log.push(VaeLossRecord {
            step,
            reconstruction: rv,
            kl: kv,
        });
        if g.value(loss).all_finite() {
            streak = 0;
            let grads = g.backward(loss);
            opt.step(vae.store_mut(), &grads);
        } else {
            streak += 1;
            if streak >= config.max_nonfinite {
                return Err(Error::Diverged {
                    step,
                    what: "ELBO",
                    consecutive: streak,
                });
            }
        }
    }

    let eval_idx = if hold.is_empty() { &train } else { &hold };
    let eval: Vec<&Mask> = eval_idx.iter().map(|&i| &all[i]).collect();
    let mut iou = 0.0;
    for chunk in eval.chunks(64) {
        for (m, r) in chunk.iter().zip(vae.reconstruct(chunk)?) {
            iou += mask_iou(m, &r);
        }
    }
    let report = VaeReport {
        steps: config.steps,
        train_masks: train.len(),
        heldout_masks: hold.len(),
        heldout_iou: iou / eval.len() as f64,
        log,
    };
    Ok((vae, report))
}
