//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `LDAR`, `u32` version, length-prefixed kind
//! string, length-prefixed JSON metadata, `u32` blob count, then per blob a
//! length-prefixed name, `u32` rank, `u64` dims and `f32` data.

use std::io::{Cursor, Read};
use std::path::Path;

use localdom_nn::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gan::{GanConfig, GanModel, Generator, GeneratorArch};
use crate::inference::{InferenceConfig, TranslatorBundle};
use crate::vae::{MaskVae, VaeConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LDAR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: Value,
    pub blobs: Vec<(String, Tensor)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Archive(msg.into())
}

fn get_u32(c: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    c.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(c: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    c.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u64::from_le_bytes(b))
}

fn get_bytes(c: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>> {
    let remaining = c.get_ref().len() - c.position() as usize;
    if n > remaining {
        return Err(bad("truncated"));
    }
    let mut b = vec![0u8; n];
    c.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(b)
}

fn get_str(c: &mut Cursor<&[u8]>) -> Result<String> {
    let n = get_u32(c)? as usize;
    String::from_utf8(get_bytes(c, n)?).map_err(|_| bad("invalid utf-8"))
}

impl Archive {
    pub fn new(kind: &str, meta: Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            blobs: Vec::new(),
        }
    }

    pub fn add_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.blobs.push((format!("{prefix}/{name}"), t.clone()));
        }
    }

    /// Load every blob under `prefix` into `store`, in order.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let p = format!("{prefix}/");
        let items: Vec<(String, Tensor)> = self
            .blobs
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
            .collect();
        store.load_from(&items)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.meta.to_string());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        if get_bytes(&mut c, 4)? != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let version = get_u32(&mut c)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let kind = get_str(&mut c)?;
        let meta = serde_json::from_str(&get_str(&mut c)?).map_err(|e| bad(format!("metadata: {e}")))?;
        let n = get_u32(&mut c)?;
        let mut blobs = Vec::new();
        for _ in 0..n {
            let name = get_str(&mut c)?;
            let rank = get_u32(&mut c)? as usize;
            let shape = (0..rank).map(|_| get_u64(&mut c).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = get_bytes(&mut c, len.checked_mul(4).ok_or_else(|| bad("blob too large"))?)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            blobs.push((name, Tensor::from_vec(&shape, data)));
        }
        if (c.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { kind, meta, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(bad(format!("expected a `{kind}` archive, found `{}`", self.kind)))
        }
    }

    fn meta_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone()).map_err(|e| bad(format!("metadata: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct GanMeta {
    config: GanConfig,
    channels: usize,
}

pub fn gan_to_archive(model: &GanModel, config: &GanConfig) -> Archive {
    let meta = GanMeta {
        config: config.clone(),
        channels: model.generator.channels(),
    };
    let mut a = Archive::new("gan", serde_json::to_value(meta).expect("serializable"));
    a.add_store("G", model.generator.store());
    a.add_store("D", model.discriminator.store());
    if let Some(f) = &model.inverse {
        a.add_store("F", f.store());
    }
    if let Some(d) = &model.disc_inverse {
        a.add_store("D_inv", d.store());
    }
    a
}

pub fn gan_from_archive(a: &Archive) -> Result<(GanModel, GanConfig)> {
    a.expect_kind("gan")?;
    let meta: GanMeta = a.meta_as()?;
    let mut model = GanModel::new(&meta.config, meta.channels);
    a.load_store("G", model.generator.store_mut())?;
    a.load_store("D", model.discriminator.store_mut())?;
    if let Some(f) = model.inverse.as_mut() {
        a.load_store("F", f.store_mut())?;
    }
    if let Some(d) = model.disc_inverse.as_mut() {
        a.load_store("D_inv", d.store_mut())?;
    }
    Ok((model, meta.config))
}

pub fn vae_to_archive(vae: &MaskVae) -> Archive {
    let mut a = Archive::new("vae", serde_json::to_value(vae.config()).expect("serializable"));
    a.add_store("V", vae.store());
    a
}

pub fn vae_from_archive(a: &Archive) -> Result<MaskVae> {
    a.expect_kind("vae")?;
    let cfg: VaeConfig = a.meta_as()?;
    let mut vae = MaskVae::new(&cfg)?;
    a.load_store("V", vae.store_mut())?;
    Ok(vae)
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    generator: GeneratorArch,
    channels: usize,
    vae: Option<VaeConfig>,
    inference: InferenceConfig,
}

pub fn bundle_to_archive(b: &TranslatorBundle) -> Archive {
    let meta = BundleMeta {
        generator: b.generator.arch().clone(),
        channels: b.generator.channels(),
        vae: b.vae.as_ref().map(|v| v.config().clone()),
        inference: b.config.clone(),
    };
    let mut a = Archive::new("bundle", serde_json::to_value(meta).expect("serializable"));
    a.add_store("G", b.generator.store());
    if let Some(v) = &b.vae {
        a.add_store("V", v.store());
    }
    a
}

pub fn bundle_from_archive(a: &Archive) -> Result<TranslatorBundle> {
    a.expect_kind("bundle")?;
    let meta: BundleMeta = a.meta_as()?;
    let mut generator = Generator::new(&meta.generator, meta.channels, 0);
    a.load_store("G", generator.store_mut())?;
    let vae = match &meta.vae {
        Some(cfg) => {
            let mut v = MaskVae::new(cfg)?;
            a.load_store("V", v.store_mut())?;
            Some(v)
        }
        None => None,
    };
    TranslatorBundle::new(generator, vae, meta.inference)
}
