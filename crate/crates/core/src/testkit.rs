//! Procedural fixtures: flare templates, night backgrounds and depth maps.
//!
//! Everything here is deterministic so tests, examples and the guide can
//! build small datasets without shipping binary assets.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::augment::AffineParams;
use crate::error::{Error, Result};
use crate::image::{ColorSpace, DepthMap, Image, RegionMask};
use crate::io;
use crate::rng::{SeededRng, StreamId};
use crate::spe::DEFAULT_TAU_LS;
use crate::synth::{DatasetDirs, FlareTemplate, GtMode, SeedRecord, SynthPlan};

/// Radius of the saturated core, as a fraction of the template size.
const CORE_RADIUS: f64 = 0.025;

fn smooth_window(r: f64, edge: f64) -> f64 {
    // 1 inside 0.8 * edge, falling to 0 at edge
    let t = ((edge - r) / (0.2 * edge)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn flare_sample(rx: f64, ry: f64, extent: f64, tint: [f64; 3], streaks: f64) -> [f32; 3] {
    let r = rx.hypot(ry);
    if r < CORE_RADIUS * extent / 0.45 {
        return [1.0; 3];
    }
    let r_n = r / extent * 0.45;
    let angle = ry.atan2(rx);
    let glow = 0.8 * (-r_n * r_n / (2.0 * 0.05 * 0.05)).exp() + 0.25 * (-r_n / 0.12).exp();
    let streak = 0.35 * (streaks * angle).cos().abs().powi(40) * (-r_n / 0.15).exp();
    let w = smooth_window(r, extent);
    let v = (glow + streak) * w;
    [
        (v * tint[0]).min(1.0) as f32,
        (v * tint[1]).min(1.0) as f32,
        (v * tint[2]).min(1.0) as f32,
    ]
}

/// Square flare on black: a saturated core, a glow and radial streaks.
/// Non-zero content stays inside a centered disk of radius `0.45 * size`,
/// so rotations about the center never clip it. `variant` shifts the tint
/// and streak count.
pub fn flare_template(size: usize, variant: f64) -> Image {
    let c = size as f64 / 2.0;
    let extent = 0.45 * size as f64;
    let tint = [1.0, 0.85 + 0.1 * variant.sin(), 0.7 + 0.2 * variant.cos().abs()];
    let streaks = 6.0 + (variant.abs() * 3.0).floor() % 4.0;
    Image::from_fn(size, size, ColorSpace::Encoded, |x, y| {
        flare_sample(x as f64 + 0.5 - c, y as f64 + 0.5 - c, extent, tint, streaks)
    })
    .expect("flare samples are in range")
}

/// A tight flare whose content stays within `0.15 * size` of the center.
pub fn compact_flare(size: usize) -> Image {
    let c = size as f64 / 2.0;
    let extent = 0.15 * size as f64;
    Image::from_fn(size, size, ColorSpace::Encoded, |x, y| {
        flare_sample(x as f64 + 0.5 - c, y as f64 + 0.5 - c, extent, [1.0, 0.9, 0.8], 6.0)
    })
    .expect("flare samples are in range")
}

/// Mask of the saturated core of [`flare_template`].
pub fn core_mask(size: usize) -> RegionMask {
    let c = size as f64 / 2.0;
    let r = CORE_RADIUS * size as f64;
    RegionMask::from_fn(size, size, |x, y| (x as f64 + 0.5 - c).hypot(y as f64 + 0.5 - c) < r).expect("non-empty size")
}

pub fn template_with_mask(id: &str, size: usize) -> FlareTemplate {
    FlareTemplate::new(id, flare_template(size, 0.0), Some(core_mask(size))).expect("mask matches template")
}

/// Dark scene: a vertical gradient, soft blobs and fine noise, all well
/// below mid-gray.
pub fn night_background(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = SeededRng::for_sample(seed, 0, 0);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            let x = rng.uniform(0.0, width as f64);
            let y = rng.uniform(0.0, height as f64);
            let r = rng.uniform(0.05, 0.2) * width.min(height) as f64;
            let tint = [rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.08), rng.uniform(0.03, 0.12)];
            (x, y, r, tint)
        })
        .collect();
    let mut noise = SeededRng::for_sample(seed, 1, 0);
    Image::from_fn(width, height, ColorSpace::Encoded, |x, y| {
        let g = 0.03 + 0.07 * (y as f64 / height as f64);
        let mut px = [g * 0.8, g * 0.9, g * 1.1];
        for (bx, by, br, tint) in &blobs {
            let d2 = ((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (br * br);
            let k = (-d2).exp();
            for c in 0..3 {
                px[c] += tint[c] * k;
            }
        }
        let n = noise.uniform(-0.01, 0.01);
        [
            (px[0] + n).clamp(0.0, 0.3) as f32,
            (px[1] + n).clamp(0.0, 0.3) as f32,
            (px[2] + n).clamp(0.0, 0.3) as f32,
        ]
    })
    .expect("background samples are in range")
}

/// Depth growing from 1 at the bottom row to 5 at the top row.
pub fn ramp_depth(width: usize, height: usize) -> DepthMap {
    DepthMap::from_fn(width, height, |_, y| {
        (1.0 + 4.0 * (height - 1 - y) as f64 / height as f64) as f32
    })
    .expect("positive depth")
}

/// `left` for `x < width / 2`, `right` elsewhere.
pub fn split_depth(width: usize, height: usize, left: f32, right: f32) -> DepthMap {
    DepthMap::from_fn(width, height, |x, _| if x < width / 2 { left } else { right }).expect("positive depth")
}

/// Two copies of one compact flare, translated by `-W/4` and `+W/4` onto
/// a background whose left half lies at depth 1 and right half at depth 2.
/// Composition is in encoded space with no template fit, so each scaled
/// layer is exactly `s_i` times a shifted copy of the template.
pub struct TwoLightFixture {
    pub background: Image,
    pub depth: DepthMap,
    pub template: FlareTemplate,
    pub plan: SynthPlan,
}

pub fn two_light_fixture() -> TwoLightFixture {
    let (w, h) = (256, 128);
    let template = FlareTemplate::new("compact", compact_flare(h), None).expect("template without mask");
    let shift = w as f64 / 4.0;
    let stream = StreamId {
        master_seed: 0,
        stream_index: 0,
    };
    let plan = SynthPlan {
        pair_index: 0,
        template_id: template.id.clone(),
        fov_degrees: 20.0,
        gamma: None,
        compose_space: ColorSpace::Encoded,
        gt_mode: GtMode::BackgroundOnly,
        tau_ls: DEFAULT_TAU_LS,
        max_scale: None,
        template_fit: 1.0,
        affines: vec![
            AffineParams::translation(-shift, 0.0),
            AffineParams::translation(shift, 0.0),
        ],
        seeds: SeedRecord {
            master_seed: 0,
            pair_stream: stream,
            flare_streams: vec![stream; 2],
        },
    };
    TwoLightFixture {
        background: Image::zeros(w, h, ColorSpace::Encoded).expect("non-empty size"),
        depth: split_depth(w, h, 1.0, 2.0),
        template,
        plan,
    }
}

/// Layout written by [`write_dataset`].
pub struct DatasetSpec {
    pub backgrounds: usize,
    pub width: usize,
    pub height: usize,
    pub templates: usize,
    pub template_size: usize,
}

/// Writes `backgrounds/`, `depths/` and `flares/` under `root`. Even
/// numbered templates get a `_ls.png` light-source mask.
pub fn write_dataset(root: impl AsRef<Path>, spec: &DatasetSpec) -> Result<DatasetDirs> {
    let root = root.as_ref();
    let dirs = DatasetDirs {
        backgrounds: root.join("backgrounds"),
        depths: root.join("depths"),
        flares: root.join("flares"),
    };
    for d in [&dirs.backgrounds, &dirs.depths, &dirs.flares] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for i in 0..spec.backgrounds {
        let bg = night_background(spec.width, spec.height, i as u64 + 100);
        io::write_png(&bg, dirs.backgrounds.join(format!("bg_{i:03}.png")))?;
        let tilt = (i as f64 * PI / 7.0).sin() * 0.5;
        let depth = DepthMap::from_fn(spec.width, spec.height, |x, y| {
            let fy = (spec.height - 1 - y) as f64 / spec.height as f64;
            let fx = x as f64 / spec.width as f64;
            (1.0 + 4.0 * fy + tilt * fx) as f32
        })?;
        io::write_pfm(&depth, dirs.depths.join(format!("bg_{i:03}.pfm")))?;
    }
    for i in 0..spec.templates {
        let img = flare_template(spec.template_size, i as f64);
        io::write_png(&img, dirs.flares.join(format!("flare_{i:03}.png")))?;
        if i % 2 == 0 {
            io::write_mask_png(
                &core_mask(spec.template_size),
                dirs.flares.join(format!("flare_{i:03}_ls.png")),
            )?;
        }
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_is_saturated_at_core_and_black_at_corners() {
        let t = flare_template(64, 0.0);
        assert_eq!(t.pixel(32, 32), [1.0; 3]);
        assert_eq!(t.pixel(0, 0), [0.0; 3]);
        assert_eq!(t.pixel(63, 63), [0.0; 3]);
        assert!(core_mask(64).count() > 0);
    }

    #[test]
    fn background_is_dark() {
        let bg = night_background(40, 30, 1);
        assert!(bg.data().iter().all(|&v| v <= 0.3));
        assert_eq!(bg, night_background(40, 30, 1));
    }
}
