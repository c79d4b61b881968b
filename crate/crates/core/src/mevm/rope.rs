//! Axial rotary embeddings with a gated exposure offset.

use crate::error::{Error, Result};
use crate::nn::{rotate_pairs, Linear, Module, Tensor};
use crate::rng::Cursor;

use super::layout::ExposureIndex;

/// How an axis coordinate becomes rotation angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleForm {
    /// `theta_t = a * base^(-t / d)`: angle proportional to position.
    Linear,
    /// `theta_t = base^(-t * a / d)`, the exponent form. Not relative-position
    /// consistent and non-zero at `a = 0`; kept for comparison only.
    Exponent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    pub form: AngleForm,
}

impl Default for RopeConfig {
    fn default() -> Self {
        Self {
            head_dim: 24,
            base: 10_000.0,
            form: AngleForm::Linear,
        }
    }
}

impl RopeConfig {
    pub fn new(head_dim: usize) -> Result<Self> {
        if head_dim == 0 || head_dim % 12 != 0 {
            return Err(Error::InvalidValue(format!(
                "rotary head dim must be a positive multiple of 12, got {head_dim}"
            )));
        }
        Ok(Self {
            head_dim,
            ..Self::default()
        })
    }

    /// Angles per axis (`head_dim / 6`).
    pub fn axis_len(&self) -> usize {
        self.head_dim / 6
    }

    /// Rotation angles per token (`head_dim / 2`).
    pub fn angle_len(&self) -> usize {
        self.head_dim / 2
    }
}

/// Concatenated frame, height and width angle thirds for position `(f, h, w)`.
pub fn rope_angles(position: [usize; 3], cfg: &RopeConfig) -> Vec<f64> {
    let d = cfg.axis_len();
    let mut out = Vec::with_capacity(cfg.angle_len());
    for &a in &position {
        let a = a as f64;
        for t in 0..d {
            let t = t as f64;
            out.push(match cfg.form {
                AngleForm::Linear => a * cfg.base.powf(-t / d as f64),
                AngleForm::Exponent => cfg.base.powf(-t * a / d as f64),
            });
        }
    }
    out
}

/// Rotates interleaved pairs of `x` by `angles`; lengths must be `2n` and `n`.
pub fn apply_rotation(x: &[f64], angles: &[f64]) -> Result<Vec<f64>> {
    if x.len() != 2 * angles.len() {
        return Err(Error::Shape(format!(
            "rotation of {} values needs {} angles, got {}",
            x.len(),
            x.len() / 2,
            angles.len()
        )));
    }
    let mut out = x.to_vec();
    rotate_pairs(&mut out, angles);
    Ok(out)
}

/// Interleaved sin/cos encoding of a scalar into `dim` values.
pub fn sinusoidal(x: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10_000f64.powf(-((2 * i) as f64) / dim as f64);
        let (s, c) = (x * freq).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

/// Concatenated encodings of the exposure index, CRF flag and relative frame index.
pub fn index_encoding(idx: &ExposureIndex, d_gamma: usize) -> Vec<f64> {
    let mut v = sinusoidal(idx.exposure, d_gamma);
    v.extend(sinusoidal(idx.crf, d_gamma));
    v.extend(sinusoidal(idx.relative, d_gamma));
    v
}

/// Gate and projection of the exposure offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureRopeParams {
    pub d_gamma: usize,
    pub gate: Vec<f64>,
    pub proj: Linear,
}

impl ExposureRopeParams {
    /// Random projection, gate exactly zero.
    pub fn init(d_gamma: usize, angle_len: usize, rng: &mut Cursor) -> Self {
        Self {
            d_gamma,
            gate: vec![0.0; angle_len],
            proj: Linear::init(3 * d_gamma, angle_len, rng),
        }
    }

    pub fn zeros(d_gamma: usize, angle_len: usize) -> Self {
        Self {
            d_gamma,
            gate: vec![0.0; angle_len],
            proj: Linear::zeros(3 * d_gamma, angle_len),
        }
    }

    pub fn angle_len(&self) -> usize {
        self.gate.len()
    }
}

impl Module for ExposureRopeParams {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        out.push(Tensor {
            name: format!("{prefix}.gate"),
            shape: vec![self.gate.len()],
            data: &self.gate,
        });
        self.proj.tensors(&format!("{prefix}.proj"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.gate);
        self.proj.tensors_mut(out);
    }
}

/// `gate * Linear(concat[gamma(e), gamma(c), gamma(r)])`.
pub fn exposure_offset(idx: &ExposureIndex, params: &ExposureRopeParams) -> Vec<f64> {
    let enc = index_encoding(idx, params.d_gamma);
    let proj = params.proj.forward(&enc, 1);
    proj.iter().zip(&params.gate).map(|(p, g)| g * p).collect()
}
