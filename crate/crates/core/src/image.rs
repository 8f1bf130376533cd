//! Pixel containers shared by every stage of the pipeline.
//!
//! [`Image`] is interleaved RGB `f32` with every sample in `[0, 1]`.
//! [`FlareLayer`] is the same layout without the upper bound; it carries
//! brightness-scaled flares whose values may exceed 1 until the final
//! clipped composition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BT.601 luma weights for R, G, B.
pub const BT601: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    /// Gamma-encoded values as stored in image files.
    Encoded,
    /// Values proportional to light intensity.
    Linear,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "image must be at least 1x1, got {width}x{height}"
        )));
    }
    Ok(())
}

fn check_len(width: usize, height: usize, per_pixel: usize, len: usize) -> Result<()> {
    let expected = width * height * per_pixel;
    if len != expected {
        return Err(Error::Dimension(format!(
            "{width}x{height}x{per_pixel} needs {expected} samples, got {len}"
        )));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Value(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// RGB image with samples in `[0, 1]`, row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    space: ColorSpace,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 3, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Value(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Image {
            width,
            height,
            space,
            data,
        })
    }

    /// Builds an image by evaluating `f` at every pixel. Out-of-range
    /// results are rejected like in [`Image::new`].
    pub fn from_fn(
        width: usize,
        height: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image::new(width, height, space, data)
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, rgb: [f32; 3]) -> Result<Self> {
        Image::from_fn(width, height, space, |_, _| rgb)
    }

    pub fn zeros(width: usize, height: usize, space: ColorSpace) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Image {
            width,
            height,
            space,
            data: vec![0.0; width * height * 3],
        })
    }

    /// Clamps every sample into `[0, 1]`; NaN becomes 0.
    pub fn from_clipped(width: usize, height: usize, space: ColorSpace, mut data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 3, data.len())?;
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Image {
            width,
            height,
            space,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Retags without touching samples.
    pub fn with_space(mut self, space: ColorSpace) -> Self {
        self.space = space;
        self
    }

    /// BT.601 luma `Y' = 0.299 R + 0.587 G + 0.114 B`. Meant for encoded
    /// images; the tag is not checked.
    pub fn to_luma_bt601(&self) -> LuminanceMap {
        let data = self.data.chunks_exact(3).map(luma_of).collect();
        LuminanceMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// `out = in^gamma`, tagged linear.
    pub fn gamma_decode(&self, gamma: f64) -> Result<Image> {
        check_gamma(gamma)?;
        Ok(self.map_samples(ColorSpace::Linear, |v| (v as f64).powf(gamma) as f32))
    }

    /// `out = in^(1/gamma)`, tagged encoded.
    pub fn gamma_encode(&self, gamma: f64) -> Result<Image> {
        check_gamma(gamma)?;
        let inv = 1.0 / gamma;
        Ok(self.map_samples(ColorSpace::Encoded, |v| (v as f64).powf(inv) as f32))
    }

    /// Per-sample `clamp(base + addend, 0, 1)`.
    pub fn add_clip(&self, addend: &Image) -> Result<Image> {
        self.add_clip_samples(addend.dims(), addend.space, &addend.data)
    }

    /// Clipped addition of a layer that may carry values above 1.
    pub fn add_clip_layer(&self, addend: &FlareLayer) -> Result<Image> {
        self.add_clip_samples(addend.dims(), addend.space, &addend.data)
    }

    fn add_clip_samples(&self, dims: (usize, usize), space: ColorSpace, other: &[f32]) -> Result<Image> {
        if dims != self.dims() {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} to {}x{}",
                dims.0, dims.1, self.width, self.height
            )));
        }
        if space != self.space {
            return Err(Error::Dimension(format!(
                "color space mismatch: {:?} vs {:?}",
                self.space, space
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other)
            .map(|(a, b)| (a + b).clamp(0.0, 1.0))
            .collect();
        Ok(Image {
            width: self.width,
            height: self.height,
            space: self.space,
            data,
        })
    }

    fn map_samples(&self, space: ColorSpace, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            space,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub(crate) fn luma_of(px: &[f32]) -> f32 {
    let y = BT601[0] * px[0] as f64 + BT601[1] * px[1] as f64 + BT601[2] * px[2] as f64;
    y as f32
}

/// Non-negative RGB layer without an upper bound.
#[derive(Clone, Debug, PartialEq)]
pub struct FlareLayer {
    width: usize,
    height: usize,
    space: ColorSpace,
    data: Vec<f32>,
}

impl FlareLayer {
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 3, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Value(format!("layer sample {bad} is negative or non-finite")));
        }
        Ok(FlareLayer {
            width,
            height,
            space,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sum of all samples, accumulated in `f64`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

impl From<Image> for FlareLayer {
    fn from(img: Image) -> Self {
        FlareLayer {
            width: img.width,
            height: img.height,
            space: img.space,
            data: img.data,
        }
    }
}

/// Strictly positive per-pixel depth, scene-relative units.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 1, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Value(format!("depth {bad} is not finite and positive")));
        }
        Ok(DepthMap { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        DepthMap::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, depth: f32) -> Result<Self> {
        DepthMap::from_fn(width, height, |_, _| depth)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Single-channel binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 1, data.len())?;
        Ok(RegionMask { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        RegionMask::new(width, height, data)
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        RegionMask::from_fn(width, height, |_, _| false)
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        RegionMask::from_fn(width, height, |_, _| true)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Coordinates of set pixels in row-major order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Per-pixel luma plane.
#[derive(Clone, Debug, PartialEq)]
pub struct LuminanceMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl LuminanceMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 1, data.len())?;
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Value(format!("luminance {bad} is not finite")));
        }
        Ok(LuminanceMap { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}
