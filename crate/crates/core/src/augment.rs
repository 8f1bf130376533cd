//! Random affine placement of flare templates.
//!
//! The forward map sends a source point `p` to
//! `R(rotation) * Shear(shear_x, shear_y) * scale * (p - source_center) + output_center + translate`.
//! Warping is done by inverse mapping every output pixel center and
//! sampling the source bilinearly; samples that fall outside the source
//! read as black.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, RegionMask};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Radians, counter-clockwise in image coordinates.
    pub rotation: f64,
    pub scale: f64,
    /// Pixels.
    pub translate_x: f64,
    /// Pixels.
    pub translate_y: f64,
    /// Radians.
    pub shear_x: f64,
    /// Radians.
    pub shear_y: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation: 0.0,
        scale: 1.0,
        translate_x: 0.0,
        translate_y: 0.0,
        shear_x: 0.0,
        shear_y: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineParams {
            translate_x: tx,
            translate_y: ty,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.rotation,
            self.scale,
            self.translate_x,
            self.translate_y,
            self.shear_x,
            self.shear_y,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite affine parameter in {self:?}")));
        }
        if self.scale <= 0.0 {
            return Err(Error::Value(format!(
                "affine scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Linear part of the forward map, row-major 2x2.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (hx, hy) = (self.shear_x.tan(), self.shear_y.tan());
        // R * Sh
        let rs = [[c - s * hy, c * hx - s], [s + c * hy, s * hx + c]];
        [
            [rs[0][0] * self.scale, rs[0][1] * self.scale],
            [rs[1][0] * self.scale, rs[1][1] * self.scale],
        ]
    }

    fn inverse_linear(&self) -> Result<[[f64; 2]; 2]> {
        let m = self.linear();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::Value(format!("affine map is singular: {self:?}")));
        }
        Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
    }
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Closed-interval bounds `[low, high]` for one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub const fn fixed(v: f64) -> Self {
        Range { low: v, high: v }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite()) {
            return Err(Error::Config(format!("{name} range must be finite: {self:?}")));
        }
        if self.low > self.high {
            return Err(Error::Config(format!(
                "{name} range is inverted: low {} > high {}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// Sampling ranges for [`sample_affine`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineRanges {
    /// Radians.
    pub rotation: Range,
    pub scale: Range,
    /// Fraction of `min(width, height)`, applied per axis.
    pub translate: Range,
    /// Radians, applied to both shear axes.
    pub shear: Range,
}

impl Default for AffineRanges {
    fn default() -> Self {
        let shear = 10f64.to_radians();
        AffineRanges {
            rotation: Range::new(0.0, TAU),
            scale: Range::new(0.8, 1.5),
            translate: Range::new(-0.3, 0.3),
            shear: Range::new(-shear, shear),
        }
    }
}

impl AffineRanges {
    /// Every range collapsed onto the identity transform.
    pub fn identity() -> Self {
        AffineRanges {
            rotation: Range::fixed(0.0),
            scale: Range::fixed(1.0),
            translate: Range::fixed(0.0),
            shear: Range::fixed(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation.check("rotation")?;
        self.scale.check("scale")?;
        self.translate.check("translate")?;
        self.shear.check("shear")?;
        if self.scale.low <= 0.0 {
            return Err(Error::Config(format!(
                "scale range must be positive, got {:?}",
                self.scale
            )));
        }
        let max_shear = self.shear.low.abs().max(self.shear.high.abs());
        if max_shear >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("shear must stay within (-pi/2, pi/2)".into()));
        }
        Ok(())
    }
}

/// Draws one set of affine parameters for a `frame_w x frame_h` output.
///
/// Consumes exactly six draws in the order rotation, scale, translate x,
/// translate y, shear x, shear y.
pub fn sample_affine(
    rng: &mut SeededRng,
    ranges: &AffineRanges,
    frame_w: usize,
    frame_h: usize,
) -> Result<AffineParams> {
    ranges.validate()?;
    let extent = frame_w.min(frame_h) as f64;
    let rotation = rng.uniform(ranges.rotation.low, ranges.rotation.high);
    let scale = rng.uniform(ranges.scale.low, ranges.scale.high);
    let translate_x = rng.uniform(ranges.translate.low, ranges.translate.high) * extent;
    let translate_y = rng.uniform(ranges.translate.low, ranges.translate.high) * extent;
    let shear_x = rng.uniform(ranges.shear.low, ranges.shear.high);
    let shear_y = rng.uniform(ranges.shear.low, ranges.shear.high);
    Ok(AffineParams {
        rotation,
        scale,
        translate_x,
        translate_y,
        shear_x,
        shear_y,
    })
}

/// Maps output pixel indices back to continuous source coordinates, where
/// source pixel `i` covers `[i, i + 1)`.
struct InverseMap {
    m: [[f64; 2]; 2],
    out_cx: f64,
    out_cy: f64,
    src_cx: f64,
    src_cy: f64,
}

impl InverseMap {
    fn new(p: &AffineParams, src: (usize, usize), out: (usize, usize)) -> Result<Self> {
        p.validate()?;
        Ok(InverseMap {
            m: p.inverse_linear()?,
            out_cx: out.0 as f64 / 2.0 + p.translate_x,
            out_cy: out.1 as f64 / 2.0 + p.translate_y,
            src_cx: src.0 as f64 / 2.0,
            src_cy: src.1 as f64 / 2.0,
        })
    }

    #[inline]
    fn source_point(&self, x: usize, y: usize) -> (f64, f64) {
        let dx = x as f64 + 0.5 - self.out_cx;
        let dy = y as f64 + 0.5 - self.out_cy;
        (
            self.m[0][0] * dx + self.m[0][1] * dy + self.src_cx,
            self.m[1][0] * dx + self.m[1][1] * dy + self.src_cy,
        )
    }
}

fn check_out_size(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Dimension(format!(
            "output size must be positive, got {out_w}x{out_h}"
        )));
    }
    Ok(())
}

/// Warps `img` into an `out_w x out_h` frame with bilinear resampling.
pub fn apply_affine(img: &Image, p: &AffineParams, out_w: usize, out_h: usize) -> Result<Image> {
    check_out_size(out_w, out_h)?;
    let map = InverseMap::new(p, img.dims(), (out_w, out_h))?;
    let (sw, sh) = (img.width() as isize, img.height() as isize);
    let src = img.data();
    let tap = |xi: isize, yi: isize, c: usize| -> f64 {
        if xi < 0 || yi < 0 || xi >= sw || yi >= sh {
            0.0
        } else {
            src[((yi * sw + xi) as usize) * 3 + c] as f64
        }
    };

    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for y in 0..out_h {
        for x in 0..out_w {
            let (u, v) = map.source_point(x, y);
            // to pixel-index coordinates
            let (u, v) = (u - 0.5, v - 0.5);
            let (x0, y0) = (u.floor(), v.floor());
            let (fx, fy) = (u - x0, v - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            if x0 < -1 || y0 < -1 || x0 >= sw || y0 >= sh {
                data.extend_from_slice(&[0.0; 3]);
                continue;
            }
            for c in 0..3 {
                let top = tap(x0, y0, c) * (1.0 - fx) + tap(x0 + 1, y0, c) * fx;
                let bottom = tap(x0, y0 + 1, c) * (1.0 - fx) + tap(x0 + 1, y0 + 1, c) * fx;
                let value = top * (1.0 - fy) + bottom * fy;
                data.push(value.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(out_w, out_h, img.space(), data)
}

/// Warps a binary mask with nearest-neighbor sampling so it stays binary.
pub fn apply_affine_mask(mask: &RegionMask, p: &AffineParams, out_w: usize, out_h: usize) -> Result<RegionMask> {
    check_out_size(out_w, out_h)?;
    let map = InverseMap::new(p, mask.dims(), (out_w, out_h))?;
    let (sw, sh) = (mask.width() as f64, mask.height() as f64);
    RegionMask::from_fn(out_w, out_h, |x, y| {
        let (u, v) = map.source_point(x, y);
        if u < 0.0 || v < 0.0 || u >= sw || v >= sh {
            return false;
        }
        mask.get(u as usize, v as usize)
    })
}
