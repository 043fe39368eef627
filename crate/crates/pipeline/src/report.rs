//! The evaluate stage: metrics over the test split and `report.json`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use localdom_core::eval::{
    band_energy, domain_gap_estimate, external_metric, in_focus_average, region_mean_luminance, Report, ReportEntry,
};
use localdom_core::inference::Prepared;
use localdom_core::priors::indicator_mask;
use localdom_core::vae::{Sampling, ZGamma};
use localdom_core::{Image, Mask};
use serde::{Deserialize, Serialize};

use crate::config::TaskKind;
use crate::dataset::{load_split, Sample};
use crate::fsutil::{sha256_hex, write_atomic, write_json_atomic, AccessAudit};
use crate::manifest::{load_manifest_audited, Split};
use crate::recipe::{load_bundle, Context, Stage};
use crate::{PipelineError, Result};

pub const REPORT_SCHEMA: u32 = 1;
const BUILTIN: &str = "builtin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub task: TaskKind,
    pub seed: u64,
    pub test_images: usize,
    pub metrics: Report,
    /// Metrics skipped because no back-end or reference set was available.
    pub unavailable: Vec<String>,
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or the lengths differ.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Mean `|out − in|` over all channels of the `region` pixels.
pub fn edit_magnitude(input: &Image, output: &Image, region: &Mask) -> Option<f64> {
    let c = input.channels();
    let (mut s, mut n) = (0.0, 0usize);
    for (i, (&a, &b)) in input.data().iter().zip(output.data()).enumerate() {
        if region.data()[i / c] > 0.5 {
            s += (a as f64 - b as f64).abs();
            n += 1;
        }
    }
    (n > 0).then(|| s / n as f64)
}

fn hash_of(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}

struct Builder {
    metrics: Report,
}

impl Builder {
    fn put(&mut self, name: &str, backend: &str, value: f64, inputs_hash: &str) {
        self.metrics.insert(
            name.into(),
            ReportEntry {
                metric: name.into(),
                backend: backend.into(),
                value,
                inputs_hash: inputs_hash.into(),
            },
        );
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub(crate) fn evaluate(ctx: &Context, audit: &mut AccessAudit) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let bundle = load_bundle(ctx, audit)?;
    let manifest = load_manifest_audited(&ctx.manifest_path, Some(Split::Test), audit)?;
    let samples: Vec<Sample> = load_split(cfg, &manifest, Split::Test, audit)?;
    if samples.is_empty() {
        return Err(localdom_core::Error::EmptySet("test split").into());
    }
    let out_dir = ctx.stage_dir(Stage::Translate).join("images");
    let mut outputs = Vec::with_capacity(samples.len());
    let mut out_hashes = Vec::with_capacity(samples.len());
    for s in &samples {
        let p = out_dir.join(format!("{}.png", s.entry.id));
        let bytes = audit.read(&p)?;
        out_hashes.push(sha256_hex(&bytes));
        outputs.push(Image::load_png(&p)?);
    }
    let in_hash = hash_of(&samples.iter().map(|s| s.entry.sha256.as_str()).collect::<Vec<_>>());
    let out_hash = hash_of(&out_hashes.iter().map(String::as_str).collect::<Vec<_>>());
    let io_hash = hash_of(&[&in_hash, &out_hash]);
    let inputs: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let outs: Vec<&Image> = outputs.iter().collect();

    let mut b = Builder { metrics: Report::new() };
    let mut unavailable = Vec::new();
    let (alpha, beta) = (cfg.alpha_id()?, cfg.beta_id()?);

    // Contrast of the β region against the local α background.
    let (mut cin, mut cout) = (Vec::new(), Vec::new());
    for (s, y) in samples.iter().zip(&outputs) {
        let band = indicator_mask(&s.prior, beta)?;
        let Some(bg) = region_mean_luminance(&s.image, &indicator_mask(&s.prior, alpha)?) else {
            continue;
        };
        if band.data().iter().any(|&v| v > 0.5) {
            cin.push(band_energy(&s.image, &band, bg)?);
            cout.push(band_energy(y, &band, bg)?);
        }
    }
    if let (Some(i), Some(o)) = (mean(&cin), mean(&cout)) {
        b.put("beta_contrast/input", BUILTIN, i, &in_hash);
        b.put("beta_contrast/output", BUILTIN, o, &out_hash);
    }

    if cfg.task == TaskKind::Deblurring {
        let fi = in_focus_average(&inputs)?;
        let fo = in_focus_average(&outs)?;
        let mut wins = 0usize;
        for (x, y) in inputs.iter().zip(&outs) {
            if in_focus_average(&[y])? > in_focus_average(&[x])? {
                wins += 1;
            }
        }
        b.put("in_focus_avg/input", BUILTIN, fi, &in_hash);
        b.put("in_focus_avg/output", BUILTIN, fo, &out_hash);
        b.put("in_focus/improved_fraction", BUILTIN, wins as f64 / inputs.len() as f64, &io_hash);
    }

    match ctx.cfg.evaluation.reference.as_ref() {
        Some(rel) => {
            let path = ctx.config_dir.join(rel);
            let reference = crate::manifest::load_manifest_audited(&path, None, audit)?;
            let refs: Vec<Image> = reference
                .entries
                .iter()
                .map(|e| Ok(Image::load_png(&reference.image_path(e))?))
                .collect::<Result<_>>()?;
            let ref_hash = hash_of(&reference.entries.iter().map(|e| e.sha256.as_str()).collect::<Vec<_>>());
            let rr: Vec<&Image> = refs.iter().collect();
            let bins = cfg.evaluation.bins;
            b.put(
                "domain_gap/reference_vs_input",
                BUILTIN,
                domain_gap_estimate(&rr, &inputs, bins)?,
                &hash_of(&[&ref_hash, &in_hash]),
            );
            b.put(
                "domain_gap/reference_vs_output",
                BUILTIN,
                domain_gap_estimate(&rr, &outs, bins)?,
                &hash_of(&[&ref_hash, &out_hash]),
            );
            let (registry, _) = crate::backends::load_registry(crate::backends::backends_file().as_deref())?;
            for (name, a, bset, h) in [
                ("fid", &rr, &outs, hash_of(&[&ref_hash, &out_hash])),
                ("lpips", &inputs, &outs, io_hash.clone()),
            ] {
                match external_metric(&registry, name, a, bset) {
                    Ok(v) => b.put(name, &v.backend, v.value, &h),
                    Err(localdom_core::Error::BackendMissing(_)) => unavailable.push(name.to_string()),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        None => unavailable.extend(["domain_gap".to_string(), "fid".into(), "lpips".into()]),
    }

    if bundle.vae.is_some() {
        let gamma = bundle.config.gamma;
        let zs = &cfg.evaluation.z_sweep;
        let mut per_z = vec![Vec::new(); zs.len()];
        for s in &samples {
            let region = indicator_mask(&s.prior, beta)?;
            let prep = Prepared::new(&bundle, &s.image, &s.prior)?;
            for (k, &z) in zs.iter().enumerate() {
                let h = prep.render(Some(ZGamma { z, gamma }), Sampling::Deterministic)?;
                if let Some(m) = edit_magnitude(&s.image, &h.image, &region) {
                    per_z[k].push(m);
                }
            }
        }
        let pooled: Vec<f64> = per_z.iter().map(|v| mean(v).unwrap_or(0.0)).collect();
        for (z, v) in zs.iter().zip(&pooled) {
            b.put(&format!("edit_magnitude/z={z:.3}"), BUILTIN, *v, &in_hash);
        }
        if let Some(rho) = spearman(zs, &pooled) {
            b.put("edit_magnitude/spearman", BUILTIN, rho, &in_hash);
        }
        let vae_report = ctx.stage_dir(Stage::TrainVae).join("vae_report.json");
        let v: serde_json::Value = serde_json::from_slice(&audit.read(&vae_report)?)
            .map_err(|source| PipelineError::Json { path: vae_report.clone(), source })?;
        if let Some(iou) = v["heldout_iou"].as_f64() {
            b.put("vae/heldout_iou", BUILTIN, iou, &hash_of(&[]));
        }
    }

    let report = EvalReport {
        schema_version: REPORT_SCHEMA,
        task: cfg.task,
        seed: cfg.seed,
        test_images: samples.len(),
        metrics: b.metrics,
        unavailable,
    };
    let dir = ctx.stage_dir(Stage::Evaluate);
    let report_path = ctx.run_dir.join("report.json");
    write_json_atomic(&report_path, &report)?;
    let metrics_csv = dir.join("metrics.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in report.metrics.values() {
        w.serialize(e)?;
    }
    write_atomic(&metrics_csv, &w.into_inner().map_err(|e| PipelineError::io(&metrics_csv, e.into_error()))?)?;
    let table_csv = dir.join("table.csv");
    write_atomic(&table_csv, &comparison_table(&report.metrics)?)?;
    Ok(vec![report_path, metrics_csv, table_csv])
}

/// `set,<metric>…` with one row for the inputs and one for the outputs, built
/// from metrics named `<metric>/input` and `<metric>/output`.
fn comparison_table(metrics: &Report) -> Result<Vec<u8>> {
    let mut cols: BTreeMap<&str, [Option<f64>; 2]> = BTreeMap::new();
    for (name, e) in metrics {
        if let Some(m) = name.strip_suffix("/input") {
            cols.entry(m).or_default()[0] = Some(e.value);
        } else if let Some(m) = name.strip_suffix("/output") {
            cols.entry(m).or_default()[1] = Some(e.value);
        } else if let Some(m) = name.strip_prefix("domain_gap/reference_vs_") {
            let k = usize::from(m == "output");
            cols.entry("domain_gap").or_default()[k] = Some(e.value);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["set"];
    header.extend(cols.keys());
    w.write_record(&header)?;
    for (k, set) in ["input", "output"].into_iter().enumerate() {
        let mut row = vec![set.to_string()];
        row.extend(cols.values().map(|v| v[k].map(|x| format!("{x:.6}")).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| PipelineError::io("table.csv", e.into_error()))
}
