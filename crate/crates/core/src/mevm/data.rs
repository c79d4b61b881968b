//! Synthetic multi-exposure sequences in the identity latent space.

use crate::bracket::{make_bracket, Slot};
use crate::error::{Error, Result};
use crate::frame::{mean_luminance, Frame, Video};
use crate::rng::Rng;
use crate::sdrsim::{apply_crf, clip_quantize, sample_crf};
use crate::synth::blob_sequence;

use super::dit::ToyConfig;

/// Mid-grey target for the base exposure of the first frame.
const BASE_MEAN_LUMINANCE: f64 = 0.25;

/// Value of the constant fourth latent channel.
pub const CONSTANT_CHANNEL: f64 = 1.0;

/// `factor x factor` average pooling of an RGB frame, channel-major, plus one
/// constant channel: `4 x (h/factor) x (w/factor)`.
pub fn pool_latent(frame: &Frame, factor: usize) -> Result<Vec<f64>> {
    let (w, h) = (frame.width(), frame.height());
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::Shape(format!("{w}x{h} frame is not divisible by {factor}")));
    }
    let (lw, lh) = (w / factor, h / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; 4 * lw * lh];
    for y in 0..h {
        for x in 0..w {
            let px = frame.pixel(x, y);
            let j = (y / factor) * lw + x / factor;
            for c in 0..3 {
                out[c * lw * lh + j] += px[c] as f64 * norm;
            }
        }
    }
    out[3 * lw * lh..].fill(CONSTANT_CHANNEL);
    Ok(out)
}

/// One training pair: clean CRF-encoded latents and the linear
/// `[base, minus, plus]` latents, each `frames_per_segment` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySequence {
    pub cond: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub config: ToyConfig,
    pub sequences: Vec<ToySequence>,
}

fn video_latents(video: &Video, factor: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for f in video.frames() {
        out.extend(pool_latent(f, factor)?);
    }
    Ok(out)
}

impl ToyDataset {
    /// `count` sequences of drifting blobs. The base exposure puts the first frame's
    /// mean luminance at 0.25; the conditioning is the base rung through a random CRF,
    /// clipped and quantized to 8 bits.
    pub fn synthetic(config: ToyConfig, count: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.channels != 4 {
            return Err(Error::InvalidValue("the toy latent has 4 channels".into()));
        }
        let factor = 2;
        let (w, h) = (config.latent_width * factor, config.latent_height * factor);
        let root = Rng::new(seed, 0x70e);
        let sequences = (0..count as u64)
            .map(|i| {
                let rng = root.substream(i);
                let hdr = blob_sequence(w, h, config.frames_per_segment, &rng.substream(0));
                let e0 = BASE_MEAN_LUMINANCE / mean_luminance(&hdr.frames()[0])?;
                let bracket = make_bracket(&hdr, e0, config.ev)?;
                let crf = sample_crf(&rng.substream(1));
                let sdr = clip_quantize(&apply_crf(bracket.video(Slot::Base), crf)?);
                let mut target = Vec::with_capacity(config.generated_len());
                for slot in [Slot::Base, Slot::Minus, Slot::Plus] {
                    target.extend(video_latents(bracket.video(slot), factor)?);
                }
                Ok(ToySequence {
                    cond: video_latents(&sdr, factor)?,
                    target,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// A dataset holding only sequence `i`.
    pub fn single(&self, i: usize) -> Self {
        Self {
            config: self.config,
            sequences: vec![self.sequences[i].clone()],
        }
    }
}
