//! Classical weighted merging of linear exposure brackets.

use rayon::prelude::*;

use crate::bracket::ExposureBracket;
use crate::error::{Error, Result};
use crate::frame::{ColorSpace, Frame, Video};

/// Lower bound on the hat weight so fully clipped pixels still merge.
pub const MIN_WEIGHT: f64 = 1.0 / 255.0;

/// `R = V / E` per channel.
pub fn estimate_radiance(v: &Frame, exposure: f64) -> Result<Frame> {
    if !(exposure.is_finite() && exposure > 0.0) {
        return Err(Error::InvalidValue(format!(
            "exposure must be positive, got {exposure}"
        )));
    }
    Ok(v.map(|x| (x as f64 / exposure) as f32))
}

/// Triangle weight peaking at 0.5, floored at [`MIN_WEIGHT`].
pub fn hat_weight(v: f64) -> f64 {
    let w = if v <= 0.5 { v } else { 1.0 - v };
    w.max(MIN_WEIGHT)
}

/// Observation at or beyond either end of the sensor range.
fn is_clipped(v: f64) -> bool {
    v <= 0.0 || v >= 1.0
}

/// Merges one pixel channel given the three observations and their exposures.
///
/// Clipped observations only carry a bound on the radiance, so they are dropped
/// whenever some observation is unclipped; otherwise all three merge with the
/// floored weight.
pub fn merge_sample(values: [f64; 3], exposures: [f64; 3]) -> f64 {
    let any_valid = values.iter().any(|&v| !is_clipped(v));
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, e) in values.iter().zip(exposures) {
        if any_valid && is_clipped(*v) {
            continue;
        }
        let w = hat_weight(*v);
        num += w * (v / e);
        den += w;
    }
    num / den
}

pub fn merge_frame(frames: [&Frame; 3], exposures: [f64; 3]) -> Result<Frame> {
    let [a, b, c] = frames;
    if !a.same_shape(b) || !a.same_shape(c) {
        return Err(Error::Shape("bracket frames differ in size".into()));
    }
    let data = (0..a.data().len())
        .into_par_iter()
        .map(|i| {
            let v = [a.data()[i] as f64, b.data()[i] as f64, c.data()[i] as f64];
            merge_sample(v, exposures) as f32
        })
        .collect();
    Frame::new(a.width(), a.height(), data)
}

/// Per-pixel, per-channel hat-weighted average of `V_k / E_k`.
pub fn merge_classical(bracket: &ExposureBracket) -> Result<Video> {
    let frames = (0..bracket.frame_count())
        .map(|i| merge_frame(bracket.frame(i), bracket.exposures()))
        .collect::<Result<Vec<_>>>()?;
    Video::new(frames, ColorSpace::LinearRadiance)
}
