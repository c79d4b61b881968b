//! SDR degradation: exposure, sensor noise, camera response, clipping and 8-bit
//! quantization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{mean_luminance, ColorSpace, Frame, Video};
use crate::hdrio::{dequantize_u8, quantize_u8};
use crate::rng::Rng;

/// Parameters of `f(H) = (1 + sigma) H^n / (H^n + sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub n: f64,
    pub sigma: f64,
}

impl CrfParams {
    pub fn new(n: f64, sigma: f64) -> Result<Self> {
        if !(n > 0.0 && sigma > 0.0 && n.is_finite() && sigma.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "CRF needs n > 0 and sigma > 0, got n={n}, sigma={sigma}"
            )));
        }
        Ok(Self { n, sigma })
    }

    /// Forward curve on [0, 1].
    pub fn eval(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        let hn = h.powf(self.n);
        (1.0 + self.sigma) * hn / (hn + self.sigma)
    }

    /// Analytic inverse, `(sigma y / (1 + sigma - y))^(1/n)`.
    pub fn invert(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        (self.sigma * y / (1.0 + self.sigma - y)).powf(1.0 / self.n)
    }
}

/// Mean and spread of the Gaussian CRF parameter draws, plus the truncation bounds.
pub const CRF_N_MEAN: f64 = 0.9;
pub const CRF_SIGMA_MEAN: f64 = 0.6;
pub const CRF_STD: f64 = 0.1;
pub const CRF_N_MIN: f64 = 0.5;
pub const CRF_SIGMA_MIN: f64 = 0.2;

/// Draws `n ~ N(0.9, 0.1)`, `sigma ~ N(0.6, 0.1)`, redrawing until `n >= 0.5`
/// and `sigma >= 0.2`.
pub fn sample_crf(rng: &Rng) -> CrfParams {
    let mut cur = rng.cursor();
    let n = loop {
        let v = CRF_N_MEAN + CRF_STD * cur.normal();
        if v >= CRF_N_MIN {
            break v;
        }
    };
    let sigma = loop {
        let v = CRF_SIGMA_MEAN + CRF_STD * cur.normal();
        if v >= CRF_SIGMA_MIN {
            break v;
        }
    };
    CrfParams { n, sigma }
}

fn check_unit(video: &Video, what: &str) -> Result<()> {
    for (i, f) in video.frames().iter().enumerate() {
        if let Some(v) = f.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "{what}: frame {i} has value {v} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

pub fn apply_crf(video: &Video, p: CrfParams) -> Result<Video> {
    check_unit(video, "apply_crf")?;
    video.map_frames(ColorSpace::CrfEncoded, |_, f| {
        f.map(|v| p.eval(v as f64).clamp(0.0, 1.0) as f32)
    })
}

pub fn invert_crf(video: &Video, p: CrfParams) -> Result<Video> {
    check_unit(video, "invert_crf")?;
    video.map_frames(ColorSpace::LinearDisplay, |_, f| {
        f.map(|v| p.invert(v as f64).clamp(0.0, 1.0) as f32)
    })
}

/// Heteroscedastic sensor noise with AR(1) temporal correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub rho: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_s: 0.0,
            sigma_r: 0.0,
            rho: 0.5,
        }
    }
}

impl NoiseParams {
    pub fn new(sigma_s: f64, sigma_r: f64, rho: f64) -> Result<Self> {
        if !(sigma_s >= 0.0 && sigma_r >= 0.0 && (0.0..1.0).contains(&rho)) {
            return Err(Error::InvalidValue(format!(
                "noise needs sigma_s, sigma_r >= 0 and rho in [0, 1); got {sigma_s}, {sigma_r}, {rho}"
            )));
        }
        Ok(Self {
            sigma_s,
            sigma_r,
            rho,
        })
    }

    /// Training-time draw: `sigma_s ~ U(0, 0.05)`, `sigma_r ~ U(0, 0.02)`.
    pub fn sample(rng: &Rng) -> Self {
        let [a, b] = rng.uniforms(0, 0);
        Self {
            sigma_s: 0.05 * a,
            sigma_r: 0.02 * b,
            rho: 0.5,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_s == 0.0 && self.sigma_r == 0.0
    }

    pub fn std_at(&self, x: f64) -> f64 {
        (self.sigma_s * self.sigma_s * x + self.sigma_r * self.sigma_r).sqrt()
    }
}

/// Unit-variance AR(1) noise field: `eps[i][j]` for frame `i`, value index `j`
/// (pixel * 3 + channel). Frame 0 uses `rho = 0`.
pub fn ar1_field(frames: usize, values: usize, rho: f64, rng: &Rng) -> Vec<Vec<f64>> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut out = vec![vec![0.0; values]; frames];
    let columns: Vec<Vec<f64>> = (0..values)
        .into_par_iter()
        .map(|j| {
            let mut col = Vec::with_capacity(frames);
            let mut prev = 0.0;
            for i in 0..frames {
                let u = rng.normal(i as u64, j as u64);
                let e = if i == 0 { u } else { rho * prev + innov * u };
                col.push(e);
                prev = e;
            }
            col
        })
        .collect();
    for (j, col) in columns.into_iter().enumerate() {
        for (i, e) in col.into_iter().enumerate() {
            out[i][j] = e;
        }
    }
    out
}

/// Adds `sqrt(sigma_s^2 x + sigma_r^2) * eps` to every channel. The output is not
/// clipped and may leave [0, 1].
pub fn add_sensor_noise(video: &Video, p: NoiseParams, rng: &Rng) -> Result<Video> {
    for f in video.frames() {
        if let Some(v) = f.data().iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "sensor noise needs non-negative input, got {v}"
            )));
        }
    }
    if p.is_zero() {
        return Ok(video.clone());
    }
    let values = video.width() * video.height() * 3;
    let eps = ar1_field(video.frame_count(), values, p.rho, rng);
    let frames = video
        .frames()
        .iter()
        .zip(&eps)
        .map(|(f, e)| {
            let data = f
                .data()
                .iter()
                .zip(e)
                .map(|(&x, &e)| (x as f64 + p.std_at(x as f64) * e) as f32)
                .collect();
            Frame::new(f.width(), f.height(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Video::with_shape_check(frames, video.color_space())
}

/// `round(255 * clamp(x, 0, 1)) / 255`.
pub fn clip_quantize_value(x: f32) -> f32 {
    dequantize_u8(quantize_u8(x.clamp(0.0, 1.0)))
}

pub fn clip_quantize(video: &Video) -> Video {
    let cs = match video.color_space() {
        ColorSpace::LinearRadiance => ColorSpace::LinearDisplay,
        other => other,
    };
    let frames = video
        .frames()
        .par_iter()
        .map(|f| f.map(clip_quantize_value))
        .collect();
    Video::new(frames, cs).expect("quantized values are in [0, 1]")
}

/// Encoded SDR video plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrVideo {
    pub video: Video,
    pub exposures: Vec<f64>,
    pub crf: CrfParams,
    pub noise: NoiseParams,
    pub seed: u64,
}

/// Per-frame or constant exposure.
#[derive(Debug, Clone, PartialEq)]
pub enum Exposure {
    Constant(f64),
    PerFrame(Vec<f64>),
}

impl Exposure {
    pub fn resolve(&self, frames: usize) -> Result<Vec<f64>> {
        let list = match self {
            Exposure::Constant(e) => vec![*e; frames],
            Exposure::PerFrame(v) => {
                if v.len() != frames {
                    return Err(Error::Shape(format!(
                        "{} exposures for {frames} frames",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some(e) = list.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidValue(format!("exposure {e} must be positive")));
        }
        Ok(list)
    }
}

/// Scales radiance by the exposure, adds sensor noise, clips, applies the CRF,
/// then clips and quantizes to 8 bits.
pub fn simulate_sdr_input(
    hdr: &Video,
    exposure: &Exposure,
    crf: CrfParams,
    noise: NoiseParams,
    rng: &Rng,
) -> Result<SdrVideo> {
    let exposures = exposure.resolve(hdr.frame_count())?;
    let exposed = hdr.map_frames(ColorSpace::LinearRadiance, |i, f| {
        let e = exposures[i];
        f.map(|v| (v as f64 * e) as f32)
    })?;
    let exposed = Video::with_shape_check(exposed.into_frames(), ColorSpace::LinearDisplay)?;
    let noisy = add_sensor_noise(&exposed, noise, rng)?;
    let clipped = noisy.map_frames(ColorSpace::LinearDisplay, |_, f| f.map(|v| v.clamp(0.0, 1.0)))?;
    let encoded = apply_crf(&clipped, crf)?;
    Ok(SdrVideo {
        video: clip_quantize(&encoded),
        exposures,
        crf,
        noise,
        seed: rng.seed(),
    })
}

/// Exposure-selection protocols for evaluation inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureMode {
    /// Mean luminance of the first frame mapped to 0.70.
    Over,
    /// Mean luminance of the first frame mapped to 0.01.
    Under,
    /// Per-frame mean luminance mapped to 0.25, then a 3-tap moving average.
    Auto,
}

pub const OVER_TARGET: f64 = 0.70;
pub const UNDER_TARGET: f64 = 0.01;
pub const AUTO_TARGET: f64 = 0.25;

/// Uniform 3-tap moving average with replicated endpoints.
pub fn smooth3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let prev = values[i.saturating_sub(1)];
            let next = values[(i + 1).min(n - 1)];
            (prev + values[i] + next) / 3.0
        })
        .collect()
}

pub fn protocol_exposures(hdr: &Video, mode: ExposureMode) -> Result<Vec<f64>> {
    let scaled = |target: f64, frame: &Frame| -> Result<f64> {
        let m = mean_luminance(frame)?;
        if !(m > 0.0) {
            return Err(Error::InvalidValue(
                "exposure protocol needs a frame with positive mean luminance".into(),
            ));
        }
        Ok(target / m)
    };
    match mode {
        ExposureMode::Over | ExposureMode::Under => {
            let target = if mode == ExposureMode::Over {
                OVER_TARGET
            } else {
                UNDER_TARGET
            };
            let e = scaled(target, &hdr.frames()[0])?;
            Ok(vec![e; hdr.frame_count()])
        }
        ExposureMode::Auto => {
            let raw = hdr
                .frames()
                .iter()
                .map(|f| scaled(AUTO_TARGET, f))
                .collect::<Result<Vec<_>>>()?;
            Ok(smooth3(&raw))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video_of(values: &[f32], cs: ColorSpace) -> Video {
        let frames = values
            .iter()
            .map(|&v| Frame::filled(1, 1, [v; 3]))
            .collect();
        Video::new(frames, cs).unwrap()
    }

    #[test]
    fn crf_points() {
        let p = CrfParams::new(0.9, 0.6).unwrap();
        assert_eq!(p.eval(0.0), 0.0);
        for (n, s) in [(0.9, 0.6), (0.5, 0.2), (1.4, 1.1)] {
            assert_eq!(CrfParams::new(n, s).unwrap().eval(1.0), 1.0);
        }
        // 0.5^0.9 = 0.535887; 1.6 * 0.535887 / 1.135887
        let h09 = 0.5f64.powf(0.9);
        assert!((h09 - 0.535887).abs() < 1e-6);
        assert!((p.eval(0.5) - 0.754846).abs() < 1e-6);
        assert!((p.invert(0.754846) - 0.5).abs() < 1e-6);
        assert_eq!(p.invert(0.0), 0.0);
        assert!((p.invert(1.0) - 1.0).abs() < 1e-15);
        assert!(CrfParams::new(0.0, 0.6).is_err());
        assert!(CrfParams::new(0.9, -0.1).is_err());
    }

    #[test]
    fn crf_video_ops_check_range() {
        let p = CrfParams::new(0.9, 0.6).unwrap();
        let v = video_of(&[0.0, 0.5, 1.0], ColorSpace::LinearDisplay);
        let enc = apply_crf(&v, p).unwrap();
        assert_eq!(enc.color_space(), ColorSpace::CrfEncoded);
        assert!((enc.frames()[1].data()[0] - 0.754846).abs() < 1e-6);
        let dec = invert_crf(&enc, p).unwrap();
        for (a, b) in dec.values().zip(v.values()) {
            assert!((a - b).abs() < 1e-5);
        }
        let bad = video_of(&[1.5], ColorSpace::LinearRadiance);
        assert!(apply_crf(&bad, p).is_err());
    }

    #[test]
    fn crf_sampling() {
        let a = sample_crf(&Rng::new(11, 0));
        let b = sample_crf(&Rng::new(11, 0));
        assert_eq!(a, b);
        let n = 100_000;
        let mut sum = 0.0;
        for i in 0..n {
            let p = sample_crf(&Rng::new(5, i));
            assert!(p.n >= CRF_N_MIN && p.sigma >= CRF_SIGMA_MIN);
            sum += p.n;
        }
        // truncation at mean - 4 std shifts the mean by ~1.3e-5
        let mean = sum / n as f64;
        assert!((mean - 0.9).abs() < 0.01, "mean n {mean}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = video_of(&[0.1, 0.4, 0.9], ColorSpace::LinearDisplay);
        let out = add_sensor_noise(&v, NoiseParams::default(), &Rng::new(1, 1)).unwrap();
        assert_eq!(out, v);
        let neg = Video::with_shape_check(vec![Frame::filled(1, 1, [-0.1; 3])], ColorSpace::LinearDisplay).unwrap();
        assert!(add_sensor_noise(&neg, NoiseParams::default(), &Rng::new(1, 1)).is_err());
    }

    #[test]
    fn noise_std_formula() {
        let p = NoiseParams::new(0.05, 0.02, 0.5).unwrap();
        assert!((p.std_at(0.25) - 0.032016).abs() < 1e-6);
        assert!(NoiseParams::new(-0.1, 0.0, 0.5).is_err());
        assert!(NoiseParams::new(0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn noise_variance_and_correlation() {
        let p = NoiseParams::new(0.05, 0.02, 0.5).unwrap();
        let frame = Frame::filled(100, 100, [0.25; 3]);
        let frames = vec![frame; 40];
        let v = Video::new(frames, ColorSpace::LinearDisplay).unwrap();
        let out = add_sensor_noise(&v, p, &Rng::new(3, 0)).unwrap();
        let d: Vec<Vec<f64>> = out
            .frames()
            .iter()
            .map(|f| f.data().iter().map(|&x| x as f64 - 0.25).collect())
            .collect();
        let all: Vec<f64> = d.iter().flatten().copied().collect();
        let var = all.iter().map(|x| x * x).sum::<f64>() / all.len() as f64;
        let expect = p.std_at(0.25).powi(2);
        assert!((var / expect - 1.0).abs() < 0.05, "var {var} vs {expect}");
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 1..d.len() {
            for j in 0..d[i].len() {
                num += d[i][j] * d[i - 1][j];
                den += d[i - 1][j] * d[i - 1][j];
            }
        }
        assert!((num / den - 0.5).abs() < 0.02);
    }

    #[test]
    fn clip_quantize_values() {
        assert_eq!(clip_quantize_value(-0.3), 0.0);
        assert!((clip_quantize_value(0.5) - 0.501961).abs() < 1e-6);
        assert_eq!(clip_quantize_value(1.7), 1.0);
    }

    #[test]
    fn simulate_black_and_deterministic() {
        let hdr = video_of(&[0.0, 0.0], ColorSpace::LinearRadiance);
        let crf = CrfParams::new(0.9, 0.6).unwrap();
        let out = simulate_sdr_input(&hdr, &Exposure::Constant(2.0), crf, NoiseParams::default(), &Rng::new(0, 0)).unwrap();
        assert!(out.video.values().all(|v| v == 0.0));

        let hdr = Video::new(
            (0..3).map(|i| Frame::from_fn(8, 8, |x, y| [(x + y + i) as f32 * 0.1; 3])).collect(),
            ColorSpace::LinearRadiance,
        )
        .unwrap();
        let noise = NoiseParams::new(0.03, 0.01, 0.5).unwrap();
        let a = simulate_sdr_input(&hdr, &Exposure::Constant(0.5), crf, noise, &Rng::new(9, 2)).unwrap();
        let b = simulate_sdr_input(&hdr, &Exposure::Constant(0.5), crf, noise, &Rng::new(9, 2)).unwrap();
        assert_eq!(a, b);
        assert!(simulate_sdr_input(&hdr, &Exposure::Constant(0.0), crf, noise, &Rng::new(9, 2)).is_err());
    }

    #[test]
    fn simulate_matches_crf_pre_quantization() {
        // n = 1, sigma = 1 gives f(x) = 2x / (x + 1); x = 0.5 -> 2/3
        let crf = CrfParams::new(1.0, 1.0).unwrap();
        assert!((crf.eval(0.5) - 0.666_666_7).abs() < 1e-6);
        let e = 0.25;
        let hdr = video_of(&[(0.5 / e) as f32], ColorSpace::LinearRadiance);
        let out = simulate_sdr_input(&hdr, &Exposure::Constant(e), crf, NoiseParams::default(), &Rng::new(0, 0)).unwrap();
        assert_eq!(out.video.frames()[0].data()[0], clip_quantize_value(2.0 / 3.0));
        assert_eq!(out.exposures, vec![e]);
    }

    #[test]
    fn protocols() {
        let hdr = video_of(&[0.35, 0.1], ColorSpace::LinearRadiance);
        let e = protocol_exposures(&hdr, ExposureMode::Over).unwrap();
        assert!(e.iter().all(|&x| (x - 2.0).abs() < 1e-6));
        let hdr = video_of(&[0.5, 0.3], ColorSpace::LinearRadiance);
        let e = protocol_exposures(&hdr, ExposureMode::Under).unwrap();
        assert!(e.iter().all(|&x| (x - 0.02).abs() < 1e-9));

        let s = smooth3(&[1.0, 2.0, 3.0]);
        let expect = [4.0 / 3.0, 2.0, 8.0 / 3.0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // raw auto exposures 0.25 / m = [1, 2, 3]
        let hdr = video_of(&[0.25, 0.125, 0.25 / 3.0], ColorSpace::LinearRadiance);
        let e = protocol_exposures(&hdr, ExposureMode::Auto).unwrap();
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        let dark = video_of(&[0.0], ColorSpace::LinearRadiance);
        assert!(protocol_exposures(&dark, ExposureMode::Over).is_err());
    }

    proptest::proptest! {
        #[test]
        fn crf_roundtrip_f32(n in 0.5f64..1.4, s in 0.2f64..1.0, x in 0.0f32..=1.0) {
            let p = CrfParams::new(n, s).unwrap();
            let y = p.eval(x as f64) as f32;
            let back = p.invert(y as f64) as f32;
            proptest::prop_assert!((back - x).abs() <= 1e-5, "x {} back {}", x, back);
        }

        #[test]
        fn clip_quantize_idempotent(x in -2.0f32..2.0) {
            let q = clip_quantize_value(x);
            proptest::prop_assert_eq!(clip_quantize_value(q), q);
        }
    }
}
