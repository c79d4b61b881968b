//! Frame and video containers.
//!
//! Pixels are stored as interleaved RGB `f32`, row-major, top row first.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rec. 709 luma weights.
pub const REC709: [f32; 3] = [0.2126, 0.7152, 0.0722];

/// A single RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{} RGB frame needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite pixel value {v}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Applies `f` to every channel value. The result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32 + Sync) -> Self {
        let data = self.data.par_iter().map(|&v| f(v)).collect();
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Elementwise combination of two frames of equal shape.
    pub fn zip_map(&self, other: &Frame, f: impl Fn(f32, f32) -> f32 + Sync) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let data = self
            .data
            .par_iter()
            .zip(other.data.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Per-pixel Rec. 709 luminance.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| REC709[0] * p[0] + REC709[1] * p[1] + REC709[2] * p[2])
            .collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Luminance of an interleaved buffer with `channels` values per pixel.
pub fn luminance(data: &[f32], channels: usize) -> Result<Vec<f32>> {
    if channels != 3 {
        return Err(Error::Shape(format!(
            "luminance needs 3 channels, got {channels}"
        )));
    }
    if data.len() % 3 != 0 {
        return Err(Error::Shape(format!(
            "buffer length {} is not a multiple of 3",
            data.len()
        )));
    }
    Ok(data
        .chunks_exact(3)
        .map(|p| REC709[0] * p[0] + REC709[1] * p[1] + REC709[2] * p[2])
        .collect())
}

/// Arithmetic mean of the frame's luminance, accumulated in f64.
pub fn mean_luminance(frame: &Frame) -> Result<f64> {
    if frame.pixel_count() == 0 {
        return Err(Error::InvalidValue("mean luminance of an empty frame".into()));
    }
    let sum: f64 = frame.luminance().iter().map(|&y| y as f64).sum();
    Ok(sum / frame.pixel_count() as f64)
}

/// What the values in a [`Video`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ColorSpace {
    /// Scene-referred radiance, unbounded above.
    LinearRadiance,
    /// Exposed and clipped linear values in [0, 1].
    LinearDisplay,
    /// CRF-encoded display values in [0, 1].
    CrfEncoded,
}

impl ColorSpace {
    fn check(self, v: f32) -> bool {
        match self {
            ColorSpace::LinearRadiance => v >= 0.0,
            ColorSpace::LinearDisplay | ColorSpace::CrfEncoded => (0.0..=1.0).contains(&v),
        }
    }
}

/// An ordered, non-empty sequence of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: Vec<Frame>,
    color_space: ColorSpace,
}

impl Video {
    pub fn new(frames: Vec<Frame>, color_space: ColorSpace) -> Result<Self> {
        let video = Self::with_shape_check(frames, color_space)?;
        for (i, f) in video.frames.iter().enumerate() {
            if let Some(v) = f.data().iter().find(|&&v| !color_space.check(v)) {
                return Err(Error::InvalidValue(format!(
                    "frame {i}: value {v} outside the range of {color_space:?}"
                )));
            }
        }
        Ok(video)
    }

    /// Builds a video whose values may leave the nominal range of `color_space`
    /// (e.g. noisy linear values before clipping).
    pub(crate) fn with_shape_check(frames: Vec<Frame>, color_space: ColorSpace) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("video needs at least one frame".into()))?;
        if let Some(i) = frames.iter().position(|f| !f.same_shape(first)) {
            return Err(Error::Shape(format!(
                "frame {i} is {}x{}, frame 0 is {}x{}",
                frames[i].width(),
                frames[i].height(),
                first.width(),
                first.height()
            )));
        }
        Ok(Self {
            frames,
            color_space,
        })
    }

    pub fn single(frame: Frame, color_space: ColorSpace) -> Result<Self> {
        Self::new(vec![frame], color_space)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn same_shape(&self, other: &Video) -> bool {
        self.frame_count() == other.frame_count() && self.frames[0].same_shape(&other.frames[0])
    }

    /// Iterator over every channel value of every frame.
    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.frames.iter().flat_map(|f| f.data().iter().copied())
    }

    pub fn max_value(&self) -> f32 {
        self.values().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Maps every frame with `f`, producing a video in `color_space`.
    pub fn map_frames(
        &self,
        color_space: ColorSpace,
        f: impl Fn(usize, &Frame) -> Frame + Sync,
    ) -> Result<Self> {
        let frames = self
            .frames
            .par_iter()
            .enumerate()
            .map(|(i, fr)| f(i, fr))
            .collect();
        Video::new(frames, color_space)
    }
}
