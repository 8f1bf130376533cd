//! Physically grounded synthesis of nighttime lens-flare training pairs,
//! luminance-threshold masking, and restoration metrics.
//!
//! A flare template is augmented, its light source is located, the
//! depth and field angle of that source set its brightness, and the scaled
//! flares are composited onto a clean background:
//!
//! ```
//! use flareforge::synth::{synthesize_pair, SynthConfig, TemplateLibrary};
//! use flareforge::testkit;
//!
//! let bg = testkit::night_background(96, 64, 1);
//! let depth = testkit::ramp_depth(96, 64);
//! let lib = TemplateLibrary::from_templates(vec![testkit::template_with_mask("star", 48)]);
//! let pair = synthesize_pair(&SynthConfig::default(), &bg, &depth, &lib, 0).unwrap();
//! assert_eq!(pair.input.dims(), (96, 64));
//! ```

pub mod afm;
pub mod augment;
pub mod bam;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod spe;
pub mod synth;
pub mod testkit;

pub use error::{Error, Result};
pub use image::{ColorSpace, DepthMap, FlareLayer, Image, LuminanceMap, RegionMask};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/placement.md")]
    mod placement {}
    #[doc = include_str!("../../../book/src/brightness.md")]
    mod brightness {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/masks.md")]
    mod masks {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
