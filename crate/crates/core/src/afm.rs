//! Luminance-threshold masking.
//!
//! A threshold `tau` is derived from the BT.601 luma plane, pixels with
//! `Y' >= tau` form a binary mask, and the masked image is the input
//! multiplied channel-wise by that mask. Only the bright, flare-bearing
//! regions survive.
//!
//! The learned variant computes `tau = sigmoid(Linear(Y'))`. A linear layer
//! over a whole image has no fixed input size, so [`ThresholdStrategy::AffineOfMean`]
//! pools `Y'` to its mean first: `tau = sigmoid(w * mean(Y') + b)`.
//!
//! Downstream restoration networks that recombine the masked prediction
//! with the unmasked input expect: a 3-channel masked image in, a
//! 3-channel prediction out, concatenation with the 3-channel input along
//! channels, then a learned 6 -> 3 pointwise projection. That projection is
//! trained and lives outside this crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LuminanceMap, RegionMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ThresholdStrategy {
    Fixed {
        tau: f64,
    },
    AffineOfMean {
        w: f64,
        b: f64,
    },
    /// Nearest-rank percentile, `p` in `[0, 100]`.
    Percentile {
        p: f64,
    },
}

impl ThresholdStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdStrategy::Fixed { tau } if !(tau > 0.0 && tau < 1.0) => {
                Err(Error::Config(format!("fixed tau must be in (0, 1), got {tau}")))
            }
            ThresholdStrategy::AffineOfMean { w, b } if !(w.is_finite() && b.is_finite()) => {
                Err(Error::Config(format!("affine weights must be finite, got w={w} b={b}")))
            }
            ThresholdStrategy::Percentile { p } if !(0.0..=100.0).contains(&p) => {
                Err(Error::Config(format!("percentile must be in [0, 100], got {p}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskResult {
    pub tau: f64,
    pub mask: RegionMask,
    /// Fraction of set pixels.
    pub coverage: f64,
}

/// Logistic function, kept strictly inside `(0, 1)` where f64 would
/// round to an endpoint.
pub fn sigmoid(x: f64) -> f64 {
    let v = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    v.clamp(f64::MIN_POSITIVE, 1.0f64.next_down())
}

pub fn compute_threshold(y: &LuminanceMap, strategy: &ThresholdStrategy) -> Result<f64> {
    strategy.validate()?;
    Ok(match *strategy {
        ThresholdStrategy::Fixed { tau } => tau,
        ThresholdStrategy::AffineOfMean { w, b } => sigmoid(w * y.mean() + b),
        ThresholdStrategy::Percentile { p } => {
            let mut values = y.data().to_vec();
            values.sort_by(f32::total_cmp);
            let n = values.len();
            let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
            values[rank.min(n) - 1] as f64
        }
    })
}

/// `M(i, j) = 1` iff `Y'(i, j) >= tau`.
pub fn generate_mask(y: &LuminanceMap, tau: f64) -> Result<MaskResult> {
    if !tau.is_finite() {
        return Err(Error::Value(format!("threshold must be finite, got {tau}")));
    }
    let data = y.data().iter().map(|&v| v as f64 >= tau).collect();
    let mask = RegionMask::new(y.width(), y.height(), data)?;
    let coverage = mask.coverage();
    Ok(MaskResult { tau, mask, coverage })
}

/// Multiplies each channel by the mask.
pub fn apply_mask(img: &Image, mask: &RegionMask) -> Result<Image> {
    if img.dims() != mask.dims() {
        return Err(Error::Dimension(format!(
            "mask {:?} does not match image {:?}",
            mask.dims(),
            img.dims()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .zip(mask.data())
        .flat_map(|(px, &m)| if m { [px[0], px[1], px[2]] } else { [0.0; 3] })
        .collect();
    Image::new(img.width(), img.height(), img.space(), data)
}

/// Luma, threshold and mask in one call.
pub fn mask_image(img: &Image, strategy: &ThresholdStrategy) -> Result<MaskResult> {
    let y = img.to_luma_bt601();
    let tau = compute_threshold(&y, strategy)?;
    generate_mask(&y, tau)
}
