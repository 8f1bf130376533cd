//! Full-frame and region-restricted restoration metrics.
//!
//! PSNR uses a peak of 1 and averages squared error over every channel.
//! Identical inputs give `f64::INFINITY`, written as `null` in JSON and
//! `inf` in text. SSIM follows the usual Gaussian-window definition
//! (11x11, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1) evaluated at valid
//! window positions per RGB channel, then averaged over channels.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{Image, RegionMask};
use crate::io;
use crate::synth::list_pngs;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR with the error averaged over `region` pixels only.
pub fn masked_psnr(a: &Image, b: &Image, region: &RegionMask) -> Result<f64> {
    check_same(a, b)?;
    if region.dims() != a.dims() {
        return Err(Error::Dimension(format!(
            "region {:?} vs image {:?}",
            region.dims(),
            a.dims()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((pa, pb), &m) in a
        .data()
        .chunks_exact(3)
        .zip(b.data().chunks_exact(3))
        .zip(region.data())
    {
        if m {
            for c in 0..3 {
                let d = pa[c] as f64 - pb[c] as f64;
                sum += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(psnr_from_mse(sum / n as f64))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-mode filter of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, &k);
    let my = filter_valid(y, w, h, &k);
    let mxx = filter_valid(&xx, w, h, &k);
    let myy = filter_valid(&yy, w, h, &k);
    let mxy = filter_valid(&xy, w, h, &k);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cov = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    total / n as f64
}

/// Mean SSIM over valid window positions and RGB channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let channel =
        |img: &Image, c: usize| -> Vec<f64> { img.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect() };
    let total: f64 = (0..3).map(|c| ssim_plane(&channel(a, c), &channel(b, c), w, h)).sum();
    Ok(total / 3.0)
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn opt_finite_or_null<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => finite_or_null(v, s),
        None => s.serialize_none(),
    }
}

fn de_null_as_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

fn de_opt_null_as_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    Ok(Some(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY)))
}

/// Metrics of one prediction / ground-truth pair. Region PSNRs are `None`
/// when that region was not requested or was empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "de_null_as_inf")]
    pub psnr: f64,
    pub ssim: f64,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "opt_finite_or_null",
        deserialize_with = "de_opt_null_as_inf"
    )]
    pub g_psnr: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "opt_finite_or_null",
        deserialize_with = "de_opt_null_as_inf"
    )]
    pub s_psnr: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "opt_finite_or_null",
        deserialize_with = "de_opt_null_as_inf"
    )]
    pub flare_psnr: Option<f64>,
}

/// Mean of the finite values plus how many were infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub mean: Option<f64>,
    pub finite: usize,
    pub infinite: usize,
}

impl MeanSummary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut sum, mut finite, mut infinite) = (0.0, 0, 0);
        for v in values {
            if v.is_finite() {
                sum += v;
                finite += 1;
            } else {
                infinite += 1;
            }
        }
        MeanSummary {
            mean: (finite > 0).then(|| sum / finite as f64),
            finite,
            infinite,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: MeanSummary,
    pub ssim: MeanSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_psnr: Option<MeanSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_psnr: Option<MeanSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flare_psnr: Option<MeanSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub name: String,
    pub metric: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
    pub skipped: Vec<Skipped>,
}

impl MetricsReport {
    pub fn from_images(per_image: Vec<ImageMetrics>, skipped: Vec<Skipped>) -> Self {
        let region = |f: fn(&ImageMetrics) -> Option<f64>, key: &str| {
            let vals: Vec<f64> = per_image.iter().filter_map(f).collect();
            let requested = !vals.is_empty() || skipped.iter().any(|s| s.metric == key);
            requested.then(|| MeanSummary::of(vals))
        };
        let aggregate = Aggregate {
            psnr: MeanSummary::of(per_image.iter().map(|m| m.psnr)),
            ssim: MeanSummary::of(per_image.iter().map(|m| m.ssim)),
            g_psnr: region(|m| m.g_psnr, "g_psnr"),
            s_psnr: region(|m| m.s_psnr, "s_psnr"),
            flare_psnr: region(|m| m.flare_psnr, "flare_psnr"),
        };
        MetricsReport {
            per_image,
            aggregate,
            skipped,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            None => "-".to_string(),
            Some(v) if v.is_infinite() => "inf".to_string(),
            Some(v) => format!("{v:.4}"),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>8} {:>10} {:>10} {:>10}",
            "name", "psnr", "ssim", "g_psnr", "s_psnr", "flare_psnr"
        );
        for m in &self.per_image {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>8.4} {:>10} {:>10} {:>10}",
                m.name,
                fmt(Some(m.psnr)),
                m.ssim,
                fmt(m.g_psnr),
                fmt(m.s_psnr),
                fmt(m.flare_psnr)
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>8} {:>10} {:>10} {:>10}",
            "mean",
            fmt(a.psnr.mean.or((a.psnr.infinite > 0).then_some(f64::INFINITY))),
            fmt(a.ssim.mean),
            fmt(a.g_psnr.and_then(|s| s.mean)),
            fmt(a.s_psnr.and_then(|s| s.mean)),
            fmt(a.flare_psnr.and_then(|s| s.mean)),
        );
        out
    }
}

/// Optional region masks for [`evaluate_dirs`]. Every directory holds one
/// binary PNG per evaluated file name.
#[derive(Clone, Debug, Default)]
pub struct RegionDirs {
    pub glare: Option<PathBuf>,
    pub streak: Option<PathBuf>,
    /// A single combined flare region, such as synthesizer masks.
    pub flare: Option<PathBuf>,
}

fn names(dir: &Path) -> Result<BTreeSet<String>> {
    Ok(list_pngs(dir)?
        .into_iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

/// Scores every `*.png` in `pred_dir` against the same name in `gt_dir`.
pub fn evaluate_dirs(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    regions: &RegionDirs,
) -> Result<MetricsReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let pred = names(pred_dir)?;
    let gt = names(gt_dir)?;
    if pred != gt {
        let only_pred: Vec<_> = pred.difference(&gt).cloned().collect();
        let only_gt: Vec<_> = gt.difference(&pred).cloned().collect();
        return Err(Error::Pairing(format!(
            "only in predictions: {only_pred:?}; only in ground truth: {only_gt:?}"
        )));
    }
    let region_dirs = [
        ("g_psnr", regions.glare.as_deref()),
        ("s_psnr", regions.streak.as_deref()),
        ("flare_psnr", regions.flare.as_deref()),
    ];
    for (_, dir) in &region_dirs {
        if let Some(dir) = dir {
            let have = names(dir)?;
            let missing: Vec<_> = pred.difference(&have).cloned().collect();
            if !missing.is_empty() {
                return Err(Error::Pairing(format!("{} lacks masks for {missing:?}", dir.display())));
            }
        }
    }

    let names: Vec<String> = pred.into_iter().collect();
    let results: Vec<Result<(ImageMetrics, Vec<Skipped>)>> = names
        .par_iter()
        .map(|name| {
            let a = io::load_png(pred_dir.join(name))?;
            let b = io::load_png(gt_dir.join(name))?;
            let mut m = ImageMetrics {
                name: name.clone(),
                psnr: psnr(&a, &b)?,
                ssim: ssim(&a, &b)?,
                g_psnr: None,
                s_psnr: None,
                flare_psnr: None,
            };
            let mut skipped = Vec::new();
            for (metric, dir) in &region_dirs {
                let Some(dir) = dir else { continue };
                let region = io::load_mask_png(dir.join(name))?;
                let value = match masked_psnr(&a, &b, &region) {
                    Ok(v) => Some(v),
                    Err(Error::EmptyRegion) => {
                        skipped.push(Skipped {
                            name: name.clone(),
                            metric: metric.to_string(),
                            reason: "empty region".into(),
                        });
                        None
                    }
                    Err(e) => return Err(e),
                };
                match *metric {
                    "g_psnr" => m.g_psnr = value,
                    "s_psnr" => m.s_psnr = value,
                    _ => m.flare_psnr = value,
                }
            }
            Ok((m, skipped))
        })
        .collect();

    let mut per_image = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for r in results {
        let (m, s) = r?;
        per_image.push(m);
        skipped.extend(s);
    }
    Ok(MetricsReport::from_images(per_image, skipped))
}
