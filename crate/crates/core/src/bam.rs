//! Brightness adjustment from the laws of illumination.
//!
//! Illuminance from a point source falls as `E = I cos(theta) / d^2`. All
//! flares in a pair share one template, so the intensity `I` is common and
//! only the ratio to a reference matters. The reference is a light at the
//! mean depth `d_bar` of all light sources with zero incidence, giving
//!
//! ```text
//! s_i = (d_bar / d_i)^2 * cos(theta_i)
//! ```
//!
//! Scales are not clipped; clipping happens once, at final composition.

use crate::error::{Error, Result};
use crate::image::{FlareLayer, Image};
use crate::spe::FlarePlacement;

#[derive(Clone, Debug, PartialEq)]
pub struct BrightnessContext {
    placements: Vec<FlarePlacement>,
    mean_depth: f64,
}

impl BrightnessContext {
    /// Validates placements and assigns every `scale_s`.
    pub fn new(mut placements: Vec<FlarePlacement>) -> Result<Self> {
        let scales = brightness_scales(&placements)?;
        for (p, s) in placements.iter_mut().zip(scales) {
            p.scale_s = s;
        }
        let mean_depth = mean_light_depth(&placements);
        Ok(BrightnessContext { placements, mean_depth })
    }

    pub fn placements(&self) -> &[FlarePlacement] {
        &self.placements
    }

    pub fn into_placements(self) -> Vec<FlarePlacement> {
        self.placements
    }

    /// `d_bar`, the reference depth.
    pub fn mean_depth(&self) -> f64 {
        self.mean_depth
    }
}

fn mean_light_depth(placements: &[FlarePlacement]) -> f64 {
    placements.iter().map(|p| p.depth_d).sum::<f64>() / placements.len() as f64
}

/// Per-flare scales `(d_bar / d_i)^2 * cos(theta_i)`, in input order.
pub fn brightness_scales(placements: &[FlarePlacement]) -> Result<Vec<f64>> {
    if placements.is_empty() {
        return Err(Error::Value("brightness scales need at least one placement".into()));
    }
    for p in placements {
        if !(p.depth_d.is_finite() && p.depth_d > 0.0) {
            return Err(Error::Value(format!("light depth must be positive, got {}", p.depth_d)));
        }
        if !(p.theta.is_finite() && (0.0..std::f64::consts::FRAC_PI_2).contains(&p.theta)) {
            return Err(Error::Value(format!("incidence angle {} outside [0, pi/2)", p.theta)));
        }
    }
    // d_bar / d_i taken as the mean of d_j / d_i, exact when depths agree
    let n = placements.len() as f64;
    Ok(placements
        .iter()
        .map(|p| {
            let ratio = placements.iter().map(|q| q.depth_d / p.depth_d).sum::<f64>() / n;
            ratio * ratio * p.theta.cos()
        })
        .collect())
}

/// Multiplies every sample by `s` without clipping.
pub fn apply_scale(flare: &Image, s: f64) -> Result<FlareLayer> {
    FlareLayer::from(flare.clone()).scaled(s)
}

impl FlareLayer {
    /// Multiplies every sample by `s` without clipping.
    pub fn scaled(&self, s: f64) -> Result<FlareLayer> {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Value(format!("scale must be finite and >= 0, got {s}")));
        }
        let data = self.data().iter().map(|&v| (v as f64 * s) as f32).collect();
        FlareLayer::new(self.width(), self.height(), self.space(), data)
    }
}
