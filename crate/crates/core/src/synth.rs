//! Multi-flare pair synthesis.
//!
//! One pair is produced in two steps. [`sample_plan`] draws every random
//! decision (flare count, template, field of view, gamma, one affine
//! transform per flare) from streams keyed by `(master_seed, pair_index)`.
//! [`render_plan`] is then a pure function of the plan and the inputs:
//!
//! 1. warp the template once per affine transform;
//! 2. locate each warped flare's light source, its depth, radius and
//!    incidence angle against the background depth map;
//! 3. scale each flare by its relative illuminance;
//! 4. add all scaled flares to the background and clip to `[0, 1]`,
//!    optionally in linearized space.
//!
//! Because rendering only depends on the plan, a [`SynthRecord`] written
//! next to the outputs is enough to reproduce the pair bit for bit.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{apply_affine, apply_affine_mask, sample_affine, AffineParams, AffineRanges, Range};
use crate::bam::{apply_scale, BrightnessContext};
use crate::error::{Error, Result};
use crate::image::{luma_of, ColorSpace, DepthMap, FlareLayer, Image, RegionMask};
use crate::io;
use crate::rng::{SeededRng, StreamId, BACKGROUND_SLOT, PAIR_SLOT};
use crate::spe::{estimate_placement, FlarePlacement, LightSourceOrigin, DEFAULT_TAU_LS};

/// Field-of-view choices swept by default, in degrees.
pub const DEFAULT_FOV_CHOICES: [f64; 5] = [20.0, 40.0, 60.0, 80.0, 100.0];
/// Largest flare count a config may request.
pub const MAX_FLARES: u32 = 8;
/// Summed flare luma at or above this value marks a pixel as flare.
pub const FLARE_MASK_THRESHOLD: f32 = 1.0 / 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FovMode {
    /// Degrees.
    Fixed(f64),
    /// Degrees, one chosen uniformly per pair.
    RandomChoice(Vec<f64>),
}

impl Default for FovMode {
    fn default() -> Self {
        FovMode::RandomChoice(DEFAULT_FOV_CHOICES.to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GtMode {
    /// `background_plus_light_source` for templates that ship a
    /// light-source mask, `background_only` otherwise.
    #[default]
    Auto,
    BackgroundOnly,
    BackgroundPlusLightSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub fov: FovMode,
    pub flare_count: CountRange,
    /// `None` disables gamma linearization.
    pub gamma: Option<Range>,
    pub compose_space: ColorSpace,
    pub gt_mode: GtMode,
    pub tau_ls: f64,
    pub affine: AffineRanges,
    pub master_seed: u64,
    /// Upper bound on brightness scales; `None` means unbounded.
    pub max_scale: Option<f64>,
    /// Treat depth files as inverse depth / disparity.
    pub depth_inverse: bool,
    pub depth_epsilon: f32,
    /// Resize templates so their shorter side matches the background's
    /// shorter side before the random affine transform.
    pub template_fit: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fov: FovMode::default(),
            flare_count: CountRange { min: 1, max: 3 },
            gamma: Some(Range::new(1.8, 2.2)),
            compose_space: ColorSpace::Linear,
            gt_mode: GtMode::Auto,
            tau_ls: DEFAULT_TAU_LS,
            affine: AffineRanges::default(),
            master_seed: 0,
            max_scale: None,
            depth_inverse: false,
            depth_epsilon: io::DEFAULT_DEPTH_EPSILON,
            template_fit: true,
        }
    }
}

fn check_fov(deg: f64) -> Result<()> {
    if !(deg > 0.0 && deg < 180.0) {
        return Err(Error::Config(format!(
            "field of view must be in (0, 180) degrees, got {deg}"
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.fov {
            FovMode::Fixed(d) => check_fov(*d)?,
            FovMode::RandomChoice(list) => {
                if list.is_empty() {
                    return Err(Error::Config("random field-of-view list is empty".into()));
                }
                list.iter().try_for_each(|&d| check_fov(d))?;
            }
        }
        let CountRange { min, max } = self.flare_count;
        if !(1 <= min && min <= max && max <= MAX_FLARES) {
            return Err(Error::Config(format!(
                "flare count range [{min}, {max}] must lie within [1, {MAX_FLARES}] with min <= max"
            )));
        }
        if let Some(g) = self.gamma {
            if !(g.low.is_finite() && g.high.is_finite() && g.low > 0.0 && g.low <= g.high) {
                return Err(Error::Config(format!("gamma range {g:?} must be positive and ordered")));
            }
        }
        if !(self.tau_ls > 0.0 && self.tau_ls < 1.0) {
            return Err(Error::Config(format!("tau_ls must be in (0, 1), got {}", self.tau_ls)));
        }
        if let Some(m) = self.max_scale {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Config(format!("max_scale must be positive, got {m}")));
            }
        }
        if !(self.depth_epsilon.is_finite() && self.depth_epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "depth_epsilon must be >= 0, got {}",
                self.depth_epsilon
            )));
        }
        self.affine.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SynthConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynthConfig::from_json(&text)
    }
}

/// A flare image plus its optional light-source annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct FlareTemplate {
    pub id: String,
    pub image: Image,
    pub light_source: Option<RegionMask>,
    pub path: Option<PathBuf>,
}

impl FlareTemplate {
    pub fn new(id: impl Into<String>, image: Image, light_source: Option<RegionMask>) -> Result<Self> {
        if let Some(m) = &light_source {
            if m.dims() != image.dims() {
                return Err(Error::Dimension(format!(
                    "light-source mask {:?} does not match template {:?}",
                    m.dims(),
                    image.dims()
                )));
            }
        }
        Ok(FlareTemplate {
            id: id.into(),
            image,
            light_source,
            path: None,
        })
    }

    /// Loads `path` and, if present, the sibling `<stem>_ls.png` mask.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let image = io::load_png(path)?;
        let ls_path = light_source_path(path);
        let light_source = if ls_path.is_file() {
            Some(io::load_mask_png(&ls_path)?)
        } else {
            None
        };
        let mut t = FlareTemplate::new(file_stem(path), image, light_source)?;
        t.path = Some(path.to_path_buf());
        Ok(t)
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn light_source_path(path: &Path) -> PathBuf {
    path.with_file_name(format!("{}_ls.png", file_stem(path)))
}

#[derive(Clone, Debug)]
enum TemplateEntry {
    Loaded(FlareTemplate),
    OnDisk { id: String, path: PathBuf, has_mask: bool },
}

/// Flare templates, either held in memory or read from disk on use.
#[derive(Clone, Debug, Default)]
pub struct TemplateLibrary {
    entries: Vec<TemplateEntry>,
}

impl TemplateLibrary {
    pub fn from_templates(templates: Vec<FlareTemplate>) -> Self {
        TemplateLibrary {
            entries: templates.into_iter().map(TemplateEntry::Loaded).collect(),
        }
    }

    /// Indexes every `*.png` in `dir` (sorted by file name) except the
    /// `*_ls.png` light-source masks. Images are decoded lazily.
    pub fn scan(dir: impl AsRef<Path>) -> Result<Self> {
        let entries = list_pngs(dir.as_ref())?
            .into_iter()
            .filter(|p| !file_stem(p).ends_with("_ls"))
            .map(|path| TemplateEntry::OnDisk {
                id: file_stem(&path),
                has_mask: light_source_path(&path).is_file(),
                path,
            })
            .collect();
        Ok(TemplateLibrary { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, index: usize) -> &str {
        match &self.entries[index] {
            TemplateEntry::Loaded(t) => &t.id,
            TemplateEntry::OnDisk { id, .. } => id,
        }
    }

    pub fn has_light_source_mask(&self, index: usize) -> bool {
        match &self.entries[index] {
            TemplateEntry::Loaded(t) => t.light_source.is_some(),
            TemplateEntry::OnDisk { has_mask, .. } => *has_mask,
        }
    }

    /// Template size; reads only the PNG header for on-disk entries.
    pub fn dims(&self, index: usize) -> Result<(usize, usize)> {
        match self.entries.get(index) {
            Some(TemplateEntry::Loaded(t)) => Ok(t.image.dims()),
            Some(TemplateEntry::OnDisk { path, .. }) => image::image_dimensions(path)
                .map(|(w, h)| (w as usize, h as usize))
                .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
            None => Err(Error::Bounds(format!("template index {index} of {}", self.len()))),
        }
    }

    pub fn get(&self, index: usize) -> Result<Cow<'_, FlareTemplate>> {
        match self.entries.get(index) {
            Some(TemplateEntry::Loaded(t)) => Ok(Cow::Borrowed(t)),
            Some(TemplateEntry::OnDisk { path, .. }) => Ok(Cow::Owned(FlareTemplate::load(path)?)),
            None => Err(Error::Bounds(format!("template index {index} of {}", self.len()))),
        }
    }

    /// Index of the template with this id.
    pub fn position(&self, id: &str) -> Option<usize> {
        (0..self.len()).find(|&i| self.id(i) == id)
    }
}

pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().map(|e| e.eq_ignore_ascii_case("png")).unwrap_or(false);
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Every random decision for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub pair_index: u64,
    pub template_id: String,
    pub fov_degrees: f64,
    /// `None` when composition happens in encoded space.
    pub gamma: Option<f64>,
    pub compose_space: ColorSpace,
    /// Always resolved, never `Auto`.
    pub gt_mode: GtMode,
    pub tau_ls: f64,
    pub max_scale: Option<f64>,
    /// Template pre-scale applied on top of each affine scale.
    pub template_fit: f64,
    pub affines: Vec<AffineParams>,
    pub seeds: SeedRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub pair_stream: StreamId,
    pub flare_streams: Vec<StreamId>,
}

/// Draws the plan for `pair_index` on a `frame_w x frame_h` background.
pub fn sample_plan(
    cfg: &SynthConfig,
    templates: &TemplateLibrary,
    frame_w: usize,
    frame_h: usize,
    pair_index: u64,
) -> Result<SynthPlan> {
    cfg.validate()?;
    if templates.is_empty() {
        return Err(Error::Config("template library is empty".into()));
    }
    let mut rng = SeededRng::for_sample(cfg.master_seed, pair_index, PAIR_SLOT);
    let n = rng.uniform_int(cfg.flare_count.min as u64, cfg.flare_count.max as u64);
    let template = rng.uniform_int(0, templates.len() as u64 - 1) as usize;
    let fov_degrees = match &cfg.fov {
        FovMode::Fixed(d) => *d,
        FovMode::RandomChoice(list) => *rng.choose(list),
    };
    let gamma_draw = cfg.gamma.map(|g| rng.uniform(g.low, g.high));
    let gamma = match cfg.compose_space {
        ColorSpace::Linear => gamma_draw,
        ColorSpace::Encoded => None,
    };
    let gt_mode = match cfg.gt_mode {
        GtMode::Auto if templates.has_light_source_mask(template) => GtMode::BackgroundPlusLightSource,
        GtMode::Auto => GtMode::BackgroundOnly,
        explicit => explicit,
    };

    let mut affines = Vec::with_capacity(n as usize);
    let mut flare_streams = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut frng = SeededRng::for_sample(cfg.master_seed, pair_index, i);
        flare_streams.push(frng.id());
        affines.push(sample_affine(&mut frng, &cfg.affine, frame_w, frame_h)?);
    }

    let template_fit = if cfg.template_fit {
        let (tw, th) = templates.dims(template)?;
        frame_w.min(frame_h) as f64 / tw.min(th) as f64
    } else {
        1.0
    };

    Ok(SynthPlan {
        pair_index,
        template_id: templates.id(template).to_string(),
        fov_degrees,
        gamma,
        compose_space: cfg.compose_space,
        gt_mode,
        tau_ls: cfg.tau_ls,
        max_scale: cfg.max_scale,
        template_fit,
        affines,
        seeds: SeedRecord {
            master_seed: cfg.master_seed,
            pair_stream: rng.id(),
            flare_streams,
        },
    })
}

/// Per-flare outcome of rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlareRecord {
    pub affine: AffineParams,
    pub depth_d: f64,
    pub radius_r: f64,
    pub theta: f64,
    pub theta_deg: f64,
    pub scale_s: f64,
    /// Scale before `max_scale` was applied.
    pub scale_uncapped: f64,
    pub light_source: LightSourceRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightSourceRecord {
    pub origin: LightSourceOrigin,
    pub pixels: usize,
}

/// Result of rendering a plan.
#[derive(Clone, Debug)]
pub struct RenderedPair {
    pub input: Image,
    pub gt: Image,
    pub flare_mask: RegionMask,
    pub flares: Vec<FlareRecord>,
    /// Brightness-scaled flares in composition space, before clipping.
    pub layers: Vec<FlareLayer>,
    /// Warped flares before scaling, encoded.
    pub warped: Vec<Image>,
    /// Light-source regions of the warped flares.
    pub light_sources: Vec<RegionMask>,
    pub mean_depth: Option<f64>,
}

/// Renders a plan. Pure: identical inputs give bit-identical outputs.
pub fn render_plan(plan: &SynthPlan, bg: &Image, depth: &DepthMap, template: &FlareTemplate) -> Result<RenderedPair> {
    let (w, h) = bg.dims();
    if depth.dims() != bg.dims() {
        return Err(Error::Dimension(format!(
            "depth map {:?} does not match background {:?}",
            depth.dims(),
            bg.dims()
        )));
    }
    check_fov(plan.fov_degrees)?;
    if plan.affines.is_empty() {
        return Ok(RenderedPair {
            input: bg.clone(),
            gt: bg.clone(),
            flare_mask: RegionMask::empty(w, h)?,
            flares: Vec::new(),
            layers: Vec::new(),
            warped: Vec::new(),
            light_sources: Vec::new(),
            mean_depth: None,
        });
    }

    let fov = plan.fov_degrees.to_radians();
    let mut warped = Vec::with_capacity(plan.affines.len());
    let mut placements = Vec::with_capacity(plan.affines.len());
    let mut regions = Vec::with_capacity(plan.affines.len());
    for affine in &plan.affines {
        let applied = AffineParams {
            scale: affine.scale * plan.template_fit,
            ..*affine
        };
        let flare = apply_affine(&template.image, &applied, w, h)?;
        let ls_mask = template
            .light_source
            .as_ref()
            .map(|m| apply_affine_mask(m, &applied, w, h))
            .transpose()?;
        let (placement, region) = estimate_placement(*affine, &flare, ls_mask.as_ref(), depth, fov, plan.tau_ls)?;
        placements.push(placement);
        regions.push(region);
        warped.push(flare);
    }

    let ctx = BrightnessContext::new(placements)?;
    let mean_depth = ctx.mean_depth();
    let placements: Vec<FlarePlacement> = ctx.into_placements();

    let mut layers = Vec::with_capacity(warped.len());
    let mut flare_sum = vec![0.0f64; w * h * 3];
    let mut ls_sum = vec![0.0f64; w * h * 3];
    let mut flares = Vec::with_capacity(warped.len());
    let mut light_sources = Vec::with_capacity(warped.len());
    for ((flare, placement), region) in warped.iter().zip(&placements).zip(&regions) {
        let scale = match plan.max_scale {
            Some(m) => placement.scale_s.min(m),
            None => placement.scale_s,
        };
        let in_space = match plan.gamma {
            Some(g) => flare.gamma_decode(g)?,
            None => flare.clone(),
        };
        let layer = apply_scale(&in_space, scale)?;
        let ls_mask = region.to_mask(w, h)?;
        for (i, &v) in layer.data().iter().enumerate() {
            flare_sum[i] += v as f64;
            if ls_mask.data()[i / 3] {
                ls_sum[i] += v as f64;
            }
        }
        flares.push(FlareRecord {
            affine: placement.affine,
            depth_d: placement.depth_d,
            radius_r: placement.radius_r,
            theta: placement.theta,
            theta_deg: placement.theta.to_degrees(),
            scale_s: scale,
            scale_uncapped: placement.scale_s,
            light_source: LightSourceRecord {
                origin: region.origin(),
                pixels: region.len(),
            },
        });
        layers.push(layer);
        light_sources.push(ls_mask);
    }

    let input = compose(bg, &flare_sum, plan.gamma)?;
    let gt = match plan.gt_mode {
        GtMode::BackgroundPlusLightSource => compose(bg, &ls_sum, plan.gamma)?,
        _ => bg.clone(),
    };
    let flare_mask = flare_mask(&flare_sum, plan.gamma, w, h)?;

    Ok(RenderedPair {
        input,
        gt,
        flare_mask,
        flares,
        layers,
        warped,
        light_sources,
        mean_depth: Some(mean_depth),
    })
}

/// `clip(bg + flare)`, through linear space when `gamma` is set. Samples
/// with no flare contribution are copied from `bg` unchanged.
fn compose(bg: &Image, flare: &[f64], gamma: Option<f64>) -> Result<Image> {
    let data = bg
        .data()
        .iter()
        .zip(flare)
        .map(|(&b, &f)| {
            if f == 0.0 {
                return b;
            }
            match gamma {
                Some(g) => ((b as f64).powf(g) + f).clamp(0.0, 1.0).powf(1.0 / g) as f32,
                None => (b as f64 + f).clamp(0.0, 1.0) as f32,
            }
        })
        .collect();
    Image::new(bg.width(), bg.height(), ColorSpace::Encoded, data)
}

fn flare_mask(flare: &[f64], gamma: Option<f64>, w: usize, h: usize) -> Result<RegionMask> {
    let data = flare
        .chunks_exact(3)
        .map(|px| {
            let enc = match gamma {
                Some(g) => [px[0].powf(1.0 / g), px[1].powf(1.0 / g), px[2].powf(1.0 / g)],
                None => [px[0], px[1], px[2]],
            };
            luma_of(&[enc[0] as f32, enc[1] as f32, enc[2] as f32]) >= FLARE_MASK_THRESHOLD
        })
        .collect();
    RegionMask::new(w, h, data)
}

/// Provenance of one synthesized pair. Together with the referenced files
/// it reproduces the pair exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub pair_index: u64,
    pub background_path: Option<String>,
    pub depth_path: Option<String>,
    pub depth_inverse: bool,
    pub depth_epsilon: f32,
    pub template_id: String,
    pub template_path: Option<String>,
    pub fov_degrees: f64,
    pub gamma: Option<f64>,
    pub compose_space: ColorSpace,
    pub gt_mode: GtMode,
    pub tau_ls: f64,
    pub max_scale: Option<f64>,
    pub template_fit: f64,
    pub mean_depth: Option<f64>,
    pub seeds: SeedRecord,
    pub flares: Vec<FlareRecord>,
    pub outputs: Option<OutputPaths>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub input: String,
    pub gt: String,
    pub mask: String,
    pub record: String,
}

impl SynthRecord {
    pub fn plan(&self) -> SynthPlan {
        SynthPlan {
            pair_index: self.pair_index,
            template_id: self.template_id.clone(),
            fov_degrees: self.fov_degrees,
            gamma: self.gamma,
            compose_space: self.compose_space,
            gt_mode: self.gt_mode,
            tau_ls: self.tau_ls,
            max_scale: self.max_scale,
            template_fit: self.template_fit,
            affines: self.flares.iter().map(|f| f.affine).collect(),
            seeds: self.seeds.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("record JSON: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("record JSON: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        SynthRecord::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// One synthesized pair with its record.
#[derive(Clone, Debug)]
pub struct SynthesizedPair {
    pub input: Image,
    pub gt: Image,
    pub flare_mask: RegionMask,
    pub record: SynthRecord,
    pub rendered: RenderedPair,
}

fn record_for(
    plan: &SynthPlan,
    cfg_depth: (bool, f32),
    template: &FlareTemplate,
    rendered: &RenderedPair,
) -> SynthRecord {
    SynthRecord {
        pair_index: plan.pair_index,
        background_path: None,
        depth_path: None,
        depth_inverse: cfg_depth.0,
        depth_epsilon: cfg_depth.1,
        template_id: plan.template_id.clone(),
        template_path: template.path.as_ref().map(|p| p.to_string_lossy().into_owned()),
        fov_degrees: plan.fov_degrees,
        gamma: plan.gamma,
        compose_space: plan.compose_space,
        gt_mode: plan.gt_mode,
        tau_ls: plan.tau_ls,
        max_scale: plan.max_scale,
        template_fit: plan.template_fit,
        mean_depth: rendered.mean_depth,
        seeds: plan.seeds.clone(),
        flares: rendered.flares.clone(),
        outputs: None,
    }
}

/// Samples and renders pair `pair_index`.
pub fn synthesize_pair(
    cfg: &SynthConfig,
    bg: &Image,
    depth: &DepthMap,
    templates: &TemplateLibrary,
    pair_index: u64,
) -> Result<SynthesizedPair> {
    if depth.dims() != bg.dims() {
        return Err(Error::Dimension(format!(
            "depth map {:?} does not match background {:?}",
            depth.dims(),
            bg.dims()
        )));
    }
    let plan = sample_plan(cfg, templates, bg.width(), bg.height(), pair_index)?;
    let index = templates
        .position(&plan.template_id)
        .ok_or_else(|| Error::Bounds(format!("template {} vanished", plan.template_id)))?;
    let template = templates.get(index)?;
    synthesize_from_plan(&plan, (cfg.depth_inverse, cfg.depth_epsilon), bg, depth, &template)
}

fn synthesize_from_plan(
    plan: &SynthPlan,
    cfg_depth: (bool, f32),
    bg: &Image,
    depth: &DepthMap,
    template: &FlareTemplate,
) -> Result<SynthesizedPair> {
    let rendered = render_plan(plan, bg, depth, template)?;
    let record = record_for(plan, cfg_depth, template, &rendered);
    Ok(SynthesizedPair {
        input: rendered.input.clone(),
        gt: rendered.gt.clone(),
        flare_mask: rendered.flare_mask.clone(),
        record,
        rendered,
    })
}

/// Re-renders a recorded pair from in-memory inputs.
pub fn replay(record: &SynthRecord, bg: &Image, depth: &DepthMap, template: &FlareTemplate) -> Result<RenderedPair> {
    if template.id != record.template_id {
        return Err(Error::Value(format!(
            "record uses template {} but {} was supplied",
            record.template_id, template.id
        )));
    }
    render_plan(&record.plan(), bg, depth, template)
}

/// Re-renders a recorded pair by loading the files it references.
pub fn replay_from_files(record: &SynthRecord) -> Result<RenderedPair> {
    let missing = |what: &str| Error::Value(format!("record has no {what} path"));
    let bg = io::load_png(record.background_path.as_ref().ok_or_else(|| missing("background"))?)?;
    let depth = io::load_pfm(
        record.depth_path.as_ref().ok_or_else(|| missing("depth"))?,
        record.depth_inverse,
        record.depth_epsilon,
    )?;
    let template = FlareTemplate::load(record.template_path.as_ref().ok_or_else(|| missing("template"))?)?;
    replay(record, &bg, &depth, &template)
}

/// Input directories for [`run_dataset`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDirs {
    pub backgrounds: PathBuf,
    pub depths: PathBuf,
    pub flares: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub background: String,
    pub template_id: String,
    pub flare_count: usize,
    pub files: OutputPaths,
    /// SHA-256 of each output file, keyed `input`, `gt`, `mask`, `record`.
    pub digests: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub dirs: DatasetDirs,
    pub count: u64,
    pub pairs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest JSON: {e}")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Background {
    png: PathBuf,
    depth: PathBuf,
}

fn pair_files(index: u64) -> OutputPaths {
    OutputPaths {
        input: format!("input/{index:06}.png"),
        gt: format!("gt/{index:06}.png"),
        mask: format!("mask/{index:06}.png"),
        record: format!("records/{index:06}.json"),
    }
}

/// Synthesizes `count` pairs into `out_dir` using `jobs` worker threads.
///
/// Writes `input/`, `gt/`, `mask/`, `records/` and `manifest.json`. Output
/// bytes depend only on the config, the inputs and `count`, never on
/// `jobs`. `progress` is called once per finished pair with
/// `(done, count)`.
pub fn run_dataset(
    cfg: &SynthConfig,
    dirs: &DatasetDirs,
    out_dir: impl AsRef<Path>,
    count: u64,
    jobs: usize,
    progress: Option<&(dyn Fn(u64, u64) + Sync)>,
) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let backgrounds: Vec<Background> = list_pngs(&dirs.backgrounds)?
        .into_iter()
        .map(|png| {
            let depth = dirs.depths.join(format!("{}.pfm", file_stem(&png)));
            if depth.is_file() {
                Ok(Background { png, depth })
            } else {
                Err(Error::MissingDepth {
                    background: png,
                    expected: depth,
                })
            }
        })
        .collect::<Result<_>>()?;
    let templates = TemplateLibrary::scan(&dirs.flares)?;
    if count > 0 && backgrounds.is_empty() {
        return Err(Error::Config(format!(
            "no PNG backgrounds in {}",
            dirs.backgrounds.display()
        )));
    }
    if count > 0 && templates.is_empty() {
        return Err(Error::Config(format!(
            "no PNG flare templates in {}",
            dirs.flares.display()
        )));
    }

    for sub in ["input", "gt", "mask", "records"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let done = std::sync::atomic::AtomicU64::new(0);
    let one_pair = |index: u64| -> Result<ManifestEntry> {
        let mut rng = SeededRng::for_sample(cfg.master_seed, index, BACKGROUND_SLOT);
        let bg_entry = rng.choose(&backgrounds);
        let bg = io::load_png(&bg_entry.png)?;
        let depth = io::load_pfm(&bg_entry.depth, cfg.depth_inverse, cfg.depth_epsilon)?;
        let mut pair = synthesize_pair(cfg, &bg, &depth, &templates, index)?;

        let files = pair_files(index);
        pair.record.background_path = Some(bg_entry.png.to_string_lossy().into_owned());
        pair.record.depth_path = Some(bg_entry.depth.to_string_lossy().into_owned());
        pair.record.outputs = Some(files.clone());

        let blobs = [
            ("input", &files.input, io::encode_png(&pair.input)?),
            ("gt", &files.gt, io::encode_png(&pair.gt)?),
            ("mask", &files.mask, io::encode_mask_png(&pair.flare_mask)?),
            ("record", &files.record, pair.record.to_json()?.into_bytes()),
        ];
        let mut digests = BTreeMap::new();
        for (key, rel, bytes) in blobs {
            let path = out_dir.join(rel);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            digests.insert(key.to_string(), sha256_hex(&bytes));
        }
        if let Some(cb) = progress {
            let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            cb(n, count);
        }
        Ok(ManifestEntry {
            index,
            background: bg_entry.png.to_string_lossy().into_owned(),
            template_id: pair.record.template_id.clone(),
            flare_count: pair.record.flares.len(),
            files,
            digests,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<ManifestEntry>> = pool.install(|| (0..count).into_par_iter().map(one_pair).collect());
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        config: cfg.clone(),
        dirs: dirs.clone(),
        count,
        pairs,
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(format!("manifest JSON: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
