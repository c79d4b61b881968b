//! Exposure ladders and per-scene exposure ranges.

use crate::error::{Error, Result};
use crate::frame::{ColorSpace, Frame, Video};
use crate::rng::Rng;

pub const DEFAULT_EV_SPACING: f64 = 4.0;

/// Luminance below this quantizes to code 0.
pub const BLACK_THRESHOLD: f64 = 1.0 / 510.0;
/// Luminance at or above this quantizes to code 255.
pub const WHITE_THRESHOLD: f64 = 1.0 - 1.0 / 510.0;

pub const BLACK_FRACTION: f64 = 0.10;
pub const WHITE_FRACTION: f64 = 0.30;

const LOG2_E_LO: f64 = -30.0;
const LOG2_E_HI: f64 = 30.0;
const BISECT_REL_TOL: f64 = 1e-4;

/// Slot of an exposure inside a three-exposure ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Minus = 0,
    Base = 1,
    Plus = 2,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Minus, Slot::Base, Slot::Plus];
}

/// Three co-registered linear videos at `E0 * 2^-ev`, `E0`, `E0 * 2^ev`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureBracket {
    videos: [Video; 3],
    exposures: [f64; 3],
    ev_spacing: f64,
}

impl ExposureBracket {
    /// Assembles a bracket from existing videos, ordered minus, base, plus.
    pub fn new(videos: [Video; 3], exposures: [f64; 3], ev_spacing: f64) -> Result<Self> {
        if !videos[0].same_shape(&videos[1]) || !videos[0].same_shape(&videos[2]) {
            return Err(Error::Shape(
                "bracket videos differ in size or frame count".into(),
            ));
        }
        if exposures.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::InvalidValue(format!(
                "bracket exposures must be positive, got {exposures:?}"
            )));
        }
        Ok(Self {
            videos,
            exposures,
            ev_spacing,
        })
    }

    pub fn video(&self, slot: Slot) -> &Video {
        &self.videos[slot as usize]
    }

    pub fn videos(&self) -> &[Video; 3] {
        &self.videos
    }

    pub fn exposure(&self, slot: Slot) -> f64 {
        self.exposures[slot as usize]
    }

    /// Exposures ordered minus, base, plus.
    pub fn exposures(&self) -> [f64; 3] {
        self.exposures
    }

    pub fn ev_spacing(&self) -> f64 {
        self.ev_spacing
    }

    pub fn frame_count(&self) -> usize {
        self.videos[0].frame_count()
    }

    /// Frame `i` of all three exposures.
    pub fn frame(&self, i: usize) -> [&Frame; 3] {
        [
            &self.videos[0].frames()[i],
            &self.videos[1].frames()[i],
            &self.videos[2].frames()[i],
        ]
    }

    /// Replaces the pixel data while keeping exposures (used to inject distortions).
    pub fn with_videos(&self, videos: [Video; 3]) -> Result<Self> {
        Self::new(videos, self.exposures, self.ev_spacing)
    }

    /// Same pixel values with every exposure multiplied by `c`.
    pub fn with_scaled_exposures(&self, c: f64) -> Result<Self> {
        Self::new(
            self.videos.clone(),
            self.exposures.map(|e| e * c),
            self.ev_spacing,
        )
    }
}

/// `E0 * 2^-ev`, `E0`, `E0 * 2^ev`.
pub fn ladder(e0: f64, ev: f64) -> [f64; 3] {
    let step = ev.exp2();
    [e0 / step, e0, e0 * step]
}

/// Clean linear bracket: `clamp(hdr * E_k, 0, 1)` for each rung.
pub fn make_bracket(hdr: &Video, e0: f64, ev: f64) -> Result<ExposureBracket> {
    if !(e0.is_finite() && e0 > 0.0) {
        return Err(Error::InvalidValue(format!("E0 must be positive, got {e0}")));
    }
    let exposures = ladder(e0, ev);
    let videos = exposures.map(|e| {
        hdr.map_frames(ColorSpace::LinearDisplay, |_, f| {
            f.map(|v| ((v as f64) * e).clamp(0.0, 1.0) as f32)
        })
    });
    let [a, b, c] = videos;
    ExposureBracket::new([a?, b?, c?], exposures, ev)
}

/// Valid reference-exposure interval of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureRange {
    pub e_min: f64,
    pub e_max: f64,
    /// At least 10% of pixels are exactly zero, so `e_min` sits at the search bound.
    pub black_saturated: bool,
    /// Fewer than 30% of pixels can ever white-clip, so `e_max` sits at the search bound.
    pub white_unreachable: bool,
}

fn fraction(lum: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    lum.iter().filter(|&&y| pred(y)).count() as f64 / lum.len() as f64
}

/// Bisection in log2(E) for the transition of a monotone predicate on E.
/// `hit(E)` must be false at `lo` side and true at `hi` side.
fn bisect_log2(mut lo: f64, mut hi: f64, hit: impl Fn(f64) -> bool) -> f64 {
    // relative tolerance on E is a fixed width in log2
    let tol = (1.0 + BISECT_REL_TOL).log2();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if hit(mid.exp2()) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (0.5 * (lo + hi)).exp2()
}

/// Black-clipped fraction at exposure `e` (luminance quantizes to code 0).
pub fn black_fraction(lum: &[f64], e: f64) -> f64 {
    fraction(lum, |y| e * y < BLACK_THRESHOLD)
}

/// White-clipped fraction at exposure `e` (luminance quantizes to code 255).
pub fn white_fraction(lum: &[f64], e: f64) -> f64 {
    fraction(lum, |y| e * y >= WHITE_THRESHOLD)
}

/// `e_min`: largest exposure where at least 10% of pixels still clip to black.
/// `e_max`: smallest exposure where at least 30% of pixels clip to white.
pub fn exposure_range(frame: &Frame) -> Result<ExposureRange> {
    let lum: Vec<f64> = frame.luminance().iter().map(|&y| y as f64).collect();
    if lum.is_empty() || lum.iter().all(|&y| y <= 0.0) {
        return Err(Error::InvalidValue(
            "exposure range needs pixels with positive luminance".into(),
        ));
    }
    let hi_e = LOG2_E_HI.exp2();

    let black_saturated = black_fraction(&lum, hi_e) >= BLACK_FRACTION;
    let e_min = if black_saturated {
        hi_e
    } else {
        // hit = "fewer than 10% black", false at tiny E, true at huge E
        bisect_log2(LOG2_E_LO, LOG2_E_HI, |e| black_fraction(&lum, e) < BLACK_FRACTION)
    };

    let white_unreachable = white_fraction(&lum, hi_e) < WHITE_FRACTION;
    let e_max = if white_unreachable {
        hi_e
    } else {
        bisect_log2(LOG2_E_LO, LOG2_E_HI, |e| white_fraction(&lum, e) >= WHITE_FRACTION)
    };

    Ok(ExposureRange {
        e_min,
        e_max,
        black_saturated,
        white_unreachable,
    })
}

/// Outcome of drawing a reference exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceExposure {
    pub e0: f64,
    /// The range was empty or inverted and `e_min` was returned.
    pub degenerate: bool,
}

/// Uniform draw in log2(E) between the bounds.
pub fn sample_reference_exposure(e_min: f64, e_max: f64, rng: &Rng) -> Result<ReferenceExposure> {
    if !(e_min > 0.0 && e_max > 0.0 && e_min.is_finite() && e_max.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "exposure bounds must be positive, got ({e_min}, {e_max})"
        )));
    }
    if e_min >= e_max {
        return Ok(ReferenceExposure {
            e0: e_min,
            degenerate: true,
        });
    }
    let u = rng.uniform(0, 0);
    let (lo, hi) = (e_min.log2(), e_max.log2());
    let e0 = (lo + u * (hi - lo)).exp2().clamp(e_min, e_max);
    Ok(ReferenceExposure {
        e0,
        degenerate: false,
    })
}
