//! Spatial position estimation for a placed flare.
//!
//! Given an affine-transformed flare and the background depth map, find the
//! flare's light-source pixels, then estimate
//!
//! * `d`: the mean background depth over those pixels,
//! * `r`: their mean distance to the image center,
//! * `theta = atan((2 r / W) * tan(fov / 2))`: the incidence angle under a
//!   pinhole camera with horizontal field of view `fov`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::augment::AffineParams;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, RegionMask};

/// Default luminance threshold for light-source pixels.
pub const DEFAULT_TAU_LS: f64 = 0.97;

/// Fraction of pixels kept by the brightest-pixel fallback.
const FALLBACK_FRACTION: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightSourceOrigin {
    ProvidedMask,
    LuminanceThreshold,
    BrightestFallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightSourceRegion {
    pixels: Vec<(usize, usize)>,
    origin: LightSourceOrigin,
}

impl LightSourceRegion {
    pub fn new(pixels: Vec<(usize, usize)>, origin: LightSourceOrigin) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Value("light-source region is empty".into()));
        }
        Ok(LightSourceRegion { pixels, origin })
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn origin(&self) -> LightSourceOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn to_mask(&self, width: usize, height: usize) -> Result<RegionMask> {
        let mut data = vec![false; width * height];
        for &(x, y) in &self.pixels {
            if x >= width || y >= height {
                return Err(Error::Bounds(format!("({x}, {y}) outside {width}x{height}")));
            }
            data[y * width + x] = true;
        }
        RegionMask::new(width, height, data)
    }
}

/// Geometry and photometry of one placed flare.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlarePlacement {
    pub affine: AffineParams,
    /// Mean depth over the light source.
    pub depth_d: f64,
    /// Mean pixel distance of the light source to the image center.
    pub radius_r: f64,
    /// Incidence angle in radians, `[0, pi/2)`.
    pub theta: f64,
    /// Brightness multiplier; 1 until assigned by [`crate::bam`].
    pub scale_s: f64,
}

/// Finds the light-source pixels of an already-transformed flare.
///
/// Preference order: the (transformed) provided mask if it has any set
/// pixel, then pixels with `Y' >= tau_ls`, then the brightest
/// `ceil(0.1%)` of pixels.
pub fn extract_light_source(flare: &Image, provided: Option<&RegionMask>, tau_ls: f64) -> Result<LightSourceRegion> {
    if !(tau_ls > 0.0 && tau_ls < 1.0) {
        return Err(Error::Config(format!("tau_ls must be in (0, 1), got {tau_ls}")));
    }
    if flare.data().iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyFlare(format!(
            "{}x{} flare is entirely black",
            flare.width(),
            flare.height()
        )));
    }
    if let Some(mask) = provided {
        if mask.dims() != flare.dims() {
            return Err(Error::Dimension(format!(
                "light-source mask {:?} does not match flare {:?}",
                mask.dims(),
                flare.dims()
            )));
        }
        let pixels: Vec<_> = mask.set_pixels().collect();
        if !pixels.is_empty() {
            return LightSourceRegion::new(pixels, LightSourceOrigin::ProvidedMask);
        }
    }

    let luma = flare.to_luma_bt601();
    let w = flare.width();
    let pixels: Vec<_> = luma
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &y)| y as f64 >= tau_ls)
        .map(|(i, _)| (i % w, i / w))
        .collect();
    if !pixels.is_empty() {
        return LightSourceRegion::new(pixels, LightSourceOrigin::LuminanceThreshold);
    }

    let keep = (FALLBACK_FRACTION * luma.data().len() as f64).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..luma.data().len()).collect();
    // brightest first, ties by raster order
    order.sort_by(|&a, &b| luma.data()[b].total_cmp(&luma.data()[a]).then(a.cmp(&b)));
    let mut pixels: Vec<_> = order[..keep].iter().map(|&i| (i % w, i / w)).collect();
    pixels.sort_by_key(|&(x, y)| (y, x));
    LightSourceRegion::new(pixels, LightSourceOrigin::BrightestFallback)
}

/// Arithmetic mean of `depth` over the region.
pub fn mean_depth(depth: &DepthMap, region: &LightSourceRegion) -> Result<f64> {
    let (w, h) = depth.dims();
    let mut sum = 0.0;
    for &(x, y) in region.pixels() {
        if x >= w || y >= h {
            return Err(Error::Bounds(format!("({x}, {y}) outside {w}x{h} depth map")));
        }
        sum += depth.get(x, y) as f64;
    }
    Ok(sum / region.len() as f64)
}

/// Mean distance from pixel centers to the image center `(W/2, H/2)`.
pub fn mean_radius(region: &LightSourceRegion, width: usize, height: usize) -> f64 {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let total: f64 = region
        .pixels()
        .iter()
        .map(|&(x, y)| (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy))
        .sum();
    total / region.len() as f64
}

/// `atan((2 r / W) * tan(fov / 2))` for horizontal field of view `fov_phi`
/// in radians.
pub fn incident_angle(radius_r: f64, width: usize, fov_phi: f64) -> Result<f64> {
    if !(fov_phi > 0.0 && fov_phi < PI) {
        return Err(Error::Config(format!(
            "field of view must be in (0, 180) degrees, got {}",
            fov_phi.to_degrees()
        )));
    }
    if !(radius_r.is_finite() && radius_r >= 0.0) {
        return Err(Error::Value(format!("radius must be finite and >= 0, got {radius_r}")));
    }
    if width == 0 {
        return Err(Error::Dimension("image width must be positive".into()));
    }
    let theta = (2.0 * radius_r / width as f64 * (fov_phi / 2.0).tan()).atan();
    Ok(theta.min(FRAC_PI_2.next_down()))
}

/// Runs the full estimate for one transformed flare. `scale_s` is left at 1.
pub fn estimate_placement(
    affine: AffineParams,
    flare: &Image,
    provided: Option<&RegionMask>,
    depth: &DepthMap,
    fov_phi: f64,
    tau_ls: f64,
) -> Result<(FlarePlacement, LightSourceRegion)> {
    if depth.dims() != flare.dims() {
        return Err(Error::Dimension(format!(
            "depth map {:?} does not match frame {:?}",
            depth.dims(),
            flare.dims()
        )));
    }
    let region = extract_light_source(flare, provided, tau_ls)?;
    let depth_d = mean_depth(depth, &region)?;
    let radius_r = mean_radius(&region, flare.width(), flare.height());
    let theta = incident_angle(radius_r, flare.width(), fov_phi)?;
    Ok((
        FlarePlacement {
            affine,
            depth_d,
            radius_r,
            theta,
            scale_s: 1.0,
        },
        region,
    ))
}
