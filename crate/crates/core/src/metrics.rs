//! Evaluation protocol: ground-truth calibration, affine alignment, PU21 encoding,
//! PU-PSNR, log-space L1 and a display tonemap.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{ColorSpace, Frame, Video};

/// Linear-interpolated percentile (`q` in [0, 100]) of `values`.
///
/// Uses selection rather than a full sort; the result does not depend on the input order.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut lo_val, rest) = v.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return lo_val;
    }
    let hi_val = rest.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

fn video_luminance(video: &Video) -> Vec<f64> {
    video
        .frames()
        .iter()
        .flat_map(|f| f.luminance())
        .map(|y| y as f64)
        .collect()
}

/// Maps ground truth so the chosen luminance percentile lands on `target`, then
/// clamps every channel to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtCalibration {
    pub percentile: f64,
    pub target: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GtCalibration {
    fn default() -> Self {
        Self {
            percentile: 99.9,
            target: 1000.0,
            lo: 1.0,
            hi: 1000.0,
        }
    }
}

/// Returns the calibrated video and the scale that was applied.
pub fn preprocess_gt(hdr: &Video, cal: &GtCalibration) -> Result<(Video, f64)> {
    if hdr.values().any(|v| v < 0.0) {
        return Err(Error::InvalidValue("ground truth must be non-negative".into()));
    }
    let lum = video_luminance(hdr);
    let p = percentile(&lum, cal.percentile);
    if !(p > 0.0) {
        return Err(Error::InvalidValue(
            "ground truth has zero luminance at the calibration percentile".into(),
        ));
    }
    let scale = cal.target / p;
    let out = hdr.map_frames(ColorSpace::LinearRadiance, |_, f| {
        f.map(|v| ((v as f64) * scale).clamp(cal.lo, cal.hi) as f32)
    })?;
    Ok((out, scale))
}

/// Gain and offset fitted by [`affine_align`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AffineFit {
    pub a: f64,
    pub b: f64,
    pub selected_pixels: usize,
}

/// Least-squares `a * pred + b ~ gt` over pixels whose ground-truth luminance lies
/// between its 10th and 90th percentiles (all channels of selected pixels).
/// The aligned prediction is clamped at zero.
pub fn affine_align(pred: &Video, gt: &Video) -> Result<(AffineFit, Video)> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape("prediction and ground truth differ in shape".into()));
    }
    let lum = video_luminance(gt);
    let (p10, p90) = (percentile(&lum, 10.0), percentile(&lum, 90.0));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut pix = 0usize;
    for (fp, fg) in pred.frames().iter().zip(gt.frames()) {
        for ((pp, pg), &y) in fp
            .data()
            .chunks_exact(3)
            .zip(fg.data().chunks_exact(3))
            .zip(&fg.luminance())
        {
            let y = y as f64;
            if y >= p10 && y <= p90 {
                pix += 1;
                xs.extend(pp.iter().map(|&v| v as f64));
                ys.extend(pg.iter().map(|&v| v as f64));
            }
        }
    }
    if xs.len() < 2 {
        return Err(Error::InvalidValue("affine fit selected fewer than 2 values".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidValue(
            "affine fit is degenerate: prediction has zero variance on the mask".into(),
        ));
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let aligned = pred.map_frames(ColorSpace::LinearRadiance, |_, f| {
        f.map(|v| (a * v as f64 + b).max(0.0) as f32)
    })?;
    Ok((
        AffineFit {
            a,
            b,
            selected_pixels: pix,
        },
        aligned,
    ))
}

/// PU21 banding+glare parameters from the reference encoder
/// (Mantiuk & Azimi, "PU21: A novel perceptually uniform encoding for adapting
/// existing quality metrics for HDR", PCS 2021; `pu21_encoder.m`, type `banding_glare`).
pub const PU21_BANDING_GLARE: [f64; 7] = [
    0.353_487_901,
    0.373_465_862_9,
    8.277_049_286e-5,
    0.906_256_262_7,
    0.091_503_031_66,
    0.909_951_720_4,
    596.314_814_2,
];

pub const PU21_L_MIN: f64 = 0.005;
pub const PU21_L_MAX: f64 = 10_000.0;

/// PU21 value of an absolute luminance in cd/m^2 (clamped to the valid domain).
pub fn pu21_encode(luminance: f64) -> f64 {
    let p = &PU21_BANDING_GLARE;
    let y = luminance.clamp(PU21_L_MIN, PU21_L_MAX);
    let yp = y.powf(p[3]);
    p[6] * (((p[0] + p[1] * yp) / (1.0 + p[2] * yp)).powf(p[4]) - p[5])
}

/// Encodes every channel value with [`pu21_encode`].
pub fn pu21_encode_video(video: &Video) -> Vec<f64> {
    video
        .frames()
        .par_iter()
        .flat_map_iter(|f| f.data().iter().map(|&v| pu21_encode(v as f64)).collect::<Vec<_>>())
        .collect()
}

/// PSNR over PU-encoded values. Identical inputs give `f64::INFINITY`.
pub fn psnr_encoded(pred: &[f64], gt: &[f64], peak: f64) -> f64 {
    assert_eq!(pred.len(), gt.len());
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / mse).log10()
}

/// PU-PSNR for a display with the given peak luminance.
pub fn pu_psnr(pred: &Video, gt: &Video, display_peak: f64) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape("prediction and ground truth differ in shape".into()));
    }
    let peak = pu21_encode(display_peak) - pu21_encode(PU21_L_MIN);
    Ok(psnr_encoded(
        &pu21_encode_video(pred),
        &pu21_encode_video(gt),
        peak,
    ))
}

pub const LOG_L1_EPS: f64 = 1e-6;

/// Mean of `|log(a/s + eps) - log(b/s + eps)|`.
pub fn log_l1_values(a: &[f64], b: &[f64], s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidValue(format!("normalizer s must be positive, got {s}")));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "log-L1 over {} and {} values",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| ((x / s + LOG_L1_EPS).ln() - (y / s + LOG_L1_EPS).ln()).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Log-space L1 between two radiance videos, normalized by `s`.
pub fn log_l1(pred: &Video, gt: &Video, s: f64) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape("prediction and ground truth differ in shape".into()));
    }
    let a: Vec<f64> = pred.values().map(|v| v as f64).collect();
    let b: Vec<f64> = gt.values().map(|v| v as f64).collect();
    log_l1_values(&a, &b, s)
}

/// Largest f32 below 1.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

pub const DISPLAY_GAMMA: f64 = 2.2;

/// Global Reinhard `L / (1 + L)` on luminance with color ratios preserved, then a
/// 1/2.2 display gamma. Channels that the ratio pushes past 1 are clamped just below 1.
pub fn reinhard_frame(frame: &Frame) -> Frame {
    let lum = frame.luminance();
    let data = frame
        .data()
        .par_chunks_exact(3)
        .zip(lum.par_iter())
        .flat_map_iter(|(px, &l)| {
            let l = l as f64;
            let out: [f32; 3] = if l > 0.0 {
                let ld = l / (1.0 + l);
                [px[0], px[1], px[2]].map(|c| {
                    let v = (c as f64 * ld / l).max(0.0).powf(1.0 / DISPLAY_GAMMA) as f32;
                    v.min(BELOW_ONE)
                })
            } else {
                [0.0; 3]
            };
            out
        })
        .collect();
    Frame::new(frame.width(), frame.height(), data).expect("tonemap keeps shape")
}

pub fn reinhard_tonemap(hdr: &Video) -> Result<Video> {
    hdr.map_frames(ColorSpace::LinearDisplay, |_, f| reinhard_frame(f))
}

/// CSV intensity profile (`column,r,g,b`) of one row.
pub fn scanline(frame: &Frame, row: usize) -> Result<String> {
    if row >= frame.height() {
        return Err(Error::InvalidValue(format!(
            "row {row} out of range for height {}",
            frame.height()
        )));
    }
    let mut out = String::from("column,r,g,b\n");
    for x in 0..frame.width() {
        let [r, g, b] = frame.pixel(x, row);
        writeln!(out, "{x},{r},{g},{b}").expect("writing to a String");
    }
    Ok(out)
}
