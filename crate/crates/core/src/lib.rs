//! Exposure-bracketing toolkit for turning SDR video into HDR radiance.
//!
//! The pipeline mirrors how the pieces are used in practice:
//!
//! * [`sdrsim`] degrades clean radiance into 8-bit SDR video (noise, CRF, clipping).
//! * [`bracket`] builds the linear {-ev, 0, +ev} exposure ladder used as a target.
//! * [`merge`] and [`vmm`] turn a ladder back into radiance, classically or with a
//!   small learned blender.
//! * [`mevm`] is a toy exposure-aware flow-matching transformer that generates
//!   ladders from CRF-encoded frames.
//! * [`metrics`] holds the evaluation protocol (alignment, PU21, PU-PSNR, log-L1).

pub mod bracket;
pub mod error;
pub mod frame;
pub mod hdrio;
pub mod merge;
pub mod metrics;
pub mod mevm;
pub mod nn;
pub mod paramfile;
pub mod rng;
pub mod sdrsim;
pub mod synth;
pub mod vmm;

pub use error::{Error, Result};
pub use frame::{luminance, mean_luminance, ColorSpace, Frame, Video};
pub use rng::Rng;
