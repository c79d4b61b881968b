//! Learned per-pixel merging of exposure brackets.
//!
//! Each exposure contributes a 7-value feature `[V (3), V / E (3), E]`. A two-layer
//! MLP embeds every feature, a pre-norm residual self-attention mixes the three
//! embeddings of a pixel (no spatial interaction, no positional term), and a
//! normalized linear head yields one logit per exposure. The softmax of the logits
//! blends the radiance estimates `V / E`.

use std::path::Path;

use rayon::prelude::*;

use crate::bracket::{ExposureBracket, Slot};
use crate::error::{Error, Result};
use crate::frame::{ColorSpace, Frame, Video};
use crate::metrics::LOG_L1_EPS;
use crate::nn::{gelu, gelu_grad, softmax_in_place, Adam, Attention, LayerNorm, Linear, Module, Tensor};
use crate::paramfile;
use crate::rng::{Cursor, Rng};

pub const FEATURE_DIM: usize = 7;
pub const HIDDEN_DIM: usize = 128;
pub const EMBED_DIM: usize = 64;
pub const HEADS: usize = 4;
pub const SEQ: usize = 3;
pub const MAGIC: &[u8; 4] = b"VMM1";

/// Order in which bracket slots are fed to the network: base, plus, minus.
pub const SEQUENCE_ORDER: [Slot; 3] = [Slot::Base, Slot::Plus, Slot::Minus];

pub type Feature = [f64; FEATURE_DIM];

/// `[V, V / E, E]` for one exposure of one pixel.
pub fn feature(v: [f64; 3], exposure: f64) -> Feature {
    [
        v[0],
        v[1],
        v[2],
        v[0] / exposure,
        v[1] / exposure,
        v[2] / exposure,
        exposure,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmmParams {
    pub embed_in: Linear,
    pub embed_out: Linear,
    pub attn_norm: LayerNorm,
    pub attn: Attention,
    pub head_norm: LayerNorm,
    pub head: Linear,
}

impl Module for VmmParams {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        self.embed_in.tensors(&p("embed_in"), out);
        self.embed_out.tensors(&p("embed_out"), out);
        self.attn_norm.tensors(&p("attn_norm"), out);
        self.attn.tensors(&p("attn"), out);
        self.head_norm.tensors(&p("head_norm"), out);
        self.head.tensors(&p("head"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.embed_in.tensors_mut(out);
        self.embed_out.tensors_mut(out);
        self.attn_norm.tensors_mut(out);
        self.attn.tensors_mut(out);
        self.head_norm.tensors_mut(out);
        self.head.tensors_mut(out);
    }
}

/// Activations kept for the backward pass of a pixel batch.
struct ForwardCache {
    pixels: usize,
    features: Vec<f64>,
    pre_gelu: Vec<f64>,
    attn_norm: crate::nn::LayerNormCache,
    attn: crate::nn::AttentionCache,
    head_norm: crate::nn::LayerNormCache,
    head_in: Vec<f64>,
    weights: Vec<f64>,
}

impl VmmParams {
    pub fn zeros() -> Self {
        Self {
            embed_in: Linear::zeros(FEATURE_DIM, HIDDEN_DIM),
            embed_out: Linear::zeros(HIDDEN_DIM, EMBED_DIM),
            attn_norm: LayerNorm::new(EMBED_DIM),
            attn: Attention::zeros(EMBED_DIM, HEADS),
            head_norm: LayerNorm::new(EMBED_DIM),
            head: Linear::zeros(EMBED_DIM, 1),
        }
    }

    pub fn init(seed: u64) -> Self {
        let mut c: Cursor = Rng::new(seed, 0x766d_6d).cursor();
        Self {
            embed_in: Linear::init(FEATURE_DIM, HIDDEN_DIM, &mut c),
            embed_out: Linear::init(HIDDEN_DIM, EMBED_DIM, &mut c),
            attn_norm: LayerNorm::new(EMBED_DIM),
            attn: Attention::init(EMBED_DIM, HEADS, &mut c),
            head_norm: LayerNorm::new(EMBED_DIM),
            head: Linear::init(EMBED_DIM, 1, &mut c),
        }
    }

    fn forward_cached(&self, features: &[f64]) -> ForwardCache {
        let rows = features.len() / FEATURE_DIM;
        let pixels = rows / SEQ;
        let pre_gelu = self.embed_in.forward(features, rows);
        let act: Vec<f64> = pre_gelu.iter().map(|&v| gelu(v)).collect();
        let hidden = self.embed_out.forward(&act, rows);
        let (attn_in, attn_norm) = self.attn_norm.forward(&hidden);
        let (attn_out, attn) = self.attn.forward(&attn_in, pixels, SEQ, None);
        let mixed: Vec<f64> = hidden.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
        let (head_in, head_norm) = self.head_norm.forward(&mixed);
        let mut weights = self.head.forward(&head_in, rows);
        for w in weights.chunks_exact_mut(SEQ) {
            softmax_in_place(w);
        }
        ForwardCache {
            pixels,
            features: features.to_vec(),
            pre_gelu,
            attn_norm,
            attn,
            head_norm,
            head_in,
            weights,
        }
    }

    /// Blending weights for `pixels` pixels; `features` is `pixels x 3 x 7`.
    /// Output is `pixels x 3`, in the same slot order as the input.
    pub fn weights(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() % (SEQ * FEATURE_DIM) != 0 {
            return Err(Error::Shape(format!(
                "feature buffer of {} values is not a multiple of {}",
                features.len(),
                SEQ * FEATURE_DIM
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite feature {v}")));
        }
        const CHUNK: usize = 256;
        Ok(features
            .par_chunks(CHUNK * SEQ * FEATURE_DIM)
            .flat_map_iter(|c| self.forward_cached(c).weights)
            .collect())
    }

    /// Backpropagates `d_weights` (`pixels x 3`) and accumulates into `grad`.
    fn backward(&self, cache: &ForwardCache, d_weights: &[f64], grad: &mut VmmParams) {
        let rows = cache.pixels * SEQ;
        let mut d_logits = vec![0.0; rows];
        for ((dl, w), dw) in d_logits
            .chunks_exact_mut(SEQ)
            .zip(cache.weights.chunks_exact(SEQ))
            .zip(d_weights.chunks_exact(SEQ))
        {
            let inner: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
            for k in 0..SEQ {
                dl[k] = w[k] * (dw[k] - inner);
            }
        }
        let d_head_in = self
            .head
            .backward(&cache.head_in, &d_logits, rows, &mut grad.head);
        let d_mixed = self
            .head_norm
            .backward(&cache.head_norm, &d_head_in, &mut grad.head_norm);
        let (d_attn_in, _) = self
            .attn
            .backward(&cache.attn, &d_mixed, None, &mut grad.attn);
        let d_hidden_ln = self
            .attn_norm
            .backward(&cache.attn_norm, &d_attn_in, &mut grad.attn_norm);
        let d_hidden: Vec<f64> = d_mixed.iter().zip(&d_hidden_ln).map(|(a, b)| a + b).collect();
        let act: Vec<f64> = cache.pre_gelu.iter().map(|&v| gelu(v)).collect();
        let mut d_act = self
            .embed_out
            .backward(&act, &d_hidden, rows, &mut grad.embed_out);
        for (d, &x) in d_act.iter_mut().zip(&cache.pre_gelu) {
            *d *= gelu_grad(x);
        }
        self.embed_in
            .backward_into(&cache.features, &d_act, &mut grad.embed_in, None);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        paramfile::write(
            path,
            MAGIC,
            &[
                ("feature_dim", FEATURE_DIM as u32),
                ("hidden_dim", HIDDEN_DIM as u32),
                ("embed_dim", EMBED_DIM as u32),
                ("heads", HEADS as u32),
            ],
            self,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = paramfile::read(path, MAGIC)?;
        if file.meta("heads") != Some(HEADS as u32) {
            return Err(Error::format("parameter", path, "unexpected head count"));
        }
        let mut p = Self::zeros();
        file.load_into(&mut p, path)?;
        Ok(p)
    }
}

/// Per-pixel training examples: features, radiance estimates, target radiance.
#[derive(Debug, Clone, Default)]
pub struct PixelBatch {
    /// `n x 3 x 7`
    pub features: Vec<f64>,
    /// `n x 3 x 3`: `V_k / E_k` per slot and channel.
    pub radiance: Vec<f64>,
    /// `n x 3`
    pub target: Vec<f64>,
    /// Per-pixel loss normalizer (maximum ground-truth radiance of its video).
    pub scale: Vec<f64>,
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    /// Appends pixel `p` of bracket frame `frame`; slots are taken in [`SEQUENCE_ORDER`].
    pub fn push_pixel(&mut self, bracket: &ExposureBracket, gt: Option<&Frame>, frame: usize, p: usize, s: f64) {
        let frames = bracket.frame(frame);
        for slot in SEQUENCE_ORDER {
            let e = bracket.exposure(slot);
            let d = &frames[slot as usize].data()[p * 3..p * 3 + 3];
            let v = [d[0] as f64, d[1] as f64, d[2] as f64];
            let f = feature(v, e);
            self.features.extend_from_slice(&f);
            self.radiance.extend_from_slice(&f[3..6]);
        }
        match gt {
            Some(g) => self
                .target
                .extend(g.data()[p * 3..p * 3 + 3].iter().map(|&v| v as f64)),
            None => self.target.extend([0.0; 3]),
        }
        self.scale.push(s);
    }

    fn slice(&self, start: usize, end: usize) -> PixelBatch {
        PixelBatch {
            features: self.features[start * SEQ * FEATURE_DIM..end * SEQ * FEATURE_DIM].to_vec(),
            radiance: self.radiance[start * SEQ * 3..end * SEQ * 3].to_vec(),
            target: self.target[start * 3..end * 3].to_vec(),
            scale: self.scale[start..end].to_vec(),
        }
    }
}

/// `H = sum_k W_k * R_k` per channel; `weights` is `n x 3`, `radiance` `n x 3 x 3`.
pub fn blend(weights: &[f64], radiance: &[f64]) -> Vec<f64> {
    let n = weights.len() / SEQ;
    let mut h = vec![0.0; n * 3];
    for p in 0..n {
        for k in 0..SEQ {
            let w = weights[p * SEQ + k];
            for c in 0..3 {
                h[p * 3 + c] += w * radiance[(p * SEQ + k) * 3 + c];
            }
        }
    }
    h
}

/// Loss sum (not mean) over a batch, plus gradients accumulated into `grad`
/// scaled by `1 / norm`.
fn loss_and_grad(params: &VmmParams, batch: &PixelBatch, norm: f64, grad: Option<&mut VmmParams>) -> f64 {
    let cache = params.forward_cached(&batch.features);
    let h = blend(&cache.weights, &batch.radiance);
    let mut total = 0.0;
    let mut dh = vec![0.0; h.len()];
    for (i, (&hv, &t)) in h.iter().zip(&batch.target).enumerate() {
        let s = batch.scale[i / 3];
        let a = hv / s + LOG_L1_EPS;
        let d = a.ln() - (t / s + LOG_L1_EPS).ln();
        total += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        dh[i] = sign / (s * a) / norm;
    }
    if let Some(grad) = grad {
        let n = batch.len();
        let mut dw = vec![0.0; n * SEQ];
        for p in 0..n {
            for k in 0..SEQ {
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += dh[p * 3 + c] * batch.radiance[(p * SEQ + k) * 3 + c];
                }
                dw[p * SEQ + k] = acc;
            }
        }
        params.backward(&cache, &dw, grad);
    }
    total
}

/// Pixels per work unit; fixed so gradient sums do not depend on the thread count.
const GRAD_CHUNK: usize = 32;

/// Mean log-L1 loss of a batch and its exact gradient.
pub fn loss_with_grad(params: &VmmParams, batch: &PixelBatch, deterministic: bool) -> (f64, VmmParams) {
    let norm = (batch.len() * 3) as f64;
    let chunks: Vec<(usize, usize)> = (0..batch.len())
        .step_by(GRAD_CHUNK)
        .map(|s| (s, (s + GRAD_CHUNK).min(batch.len())))
        .collect();
    let work = |&(s, e): &(usize, usize)| {
        let mut g = VmmParams::zeros();
        g.zero();
        let l = loss_and_grad(params, &batch.slice(s, e), norm, Some(&mut g));
        (l, g)
    };
    let (total, grad) = if deterministic {
        let parts: Vec<(f64, VmmParams)> = chunks.par_iter().map(work).collect();
        let mut grad = VmmParams::zeros();
        grad.zero();
        let mut total = 0.0;
        for (l, g) in &parts {
            total += l;
            grad.add_scaled(g, 1.0);
        }
        (total, grad)
    } else {
        chunks.par_iter().map(work).reduce(
            || {
                let mut g = VmmParams::zeros();
                g.zero();
                (0.0, g)
            },
            |(la, mut ga), (lb, gb)| {
                ga.add_scaled(&gb, 1.0);
                (la + lb, ga)
            },
        )
    };
    (total / norm, grad)
}

/// Mean log-L1 loss of a batch without gradients.
pub fn batch_loss(params: &VmmParams, batch: &PixelBatch) -> f64 {
    let norm = (batch.len() * 3) as f64;
    loss_and_grad(params, batch, norm, None) / norm
}

/// `vmm_loss`: mean `|log(H/s + eps) - log(H_hat/s + eps)|`.
pub fn vmm_loss(h: &Video, h_hat: &Video, s: f64) -> Result<f64> {
    crate::metrics::log_l1(h, h_hat, s)
}

/// Merges a bracket with learned weights.
pub fn vmm_merge(bracket: &ExposureBracket, params: &VmmParams) -> Result<Video> {
    let mut frames = Vec::with_capacity(bracket.frame_count());
    for i in 0..bracket.frame_count() {
        let base = bracket.frame(i)[0];
        let mut batch = PixelBatch::default();
        for p in 0..base.pixel_count() {
            batch.push_pixel(bracket, None, i, p, 1.0);
        }
        let w = params.weights(&batch.features)?;
        let h = blend(&w, &batch.radiance);
        frames.push(Frame::new(
            base.width(),
            base.height(),
            h.iter().map(|&v| v.max(0.0) as f32).collect(),
        )?);
    }
    Video::new(frames, ColorSpace::LinearRadiance)
}

/// Stand-in for latent encode/decode error: a smooth per-exposure gain field of
/// +-`gain_amplitude`, a 3x3 box blur and additive Gaussian noise, then clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionProxy {
    pub gain_amplitude: f64,
    pub noise_std: f64,
    pub blur: bool,
}

impl Default for DistortionProxy {
    fn default() -> Self {
        Self {
            gain_amplitude: 0.05,
            noise_std: 0.005,
            blur: true,
        }
    }
}

fn box_blur3(f: &Frame) -> Frame {
    let (w, h) = (f.width(), f.height());
    Frame::from_fn(w, h, |x, y| {
        let mut acc = [0.0f32; 3];
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let p = f.pixel(xx, yy);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
        }
        acc.map(|v| v / 9.0)
    })
}

impl DistortionProxy {
    pub fn apply(&self, bracket: &ExposureBracket, rng: &Rng) -> Result<ExposureBracket> {
        let videos = Slot::ALL.map(|slot| {
            let r = rng.substream(slot as u64);
            let mut c = r.cursor();
            let fx = c.uniform_range(0.5, 2.0);
            let fy = c.uniform_range(0.5, 2.0);
            let phase = c.uniform_range(0.0, std::f64::consts::TAU);
            let noise = r.substream(1);
            let frames: Vec<Frame> = bracket
                .video(slot)
                .frames()
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let blurred = if self.blur { box_blur3(f) } else { f.clone() };
                    let (w, h) = (f.width() as f64, f.height() as f64);
                    let data = blurred
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            let p = j / 3;
                            let (x, y) = ((p % f.width()) as f64, (p / f.width()) as f64);
                            let gain = 1.0
                                + self.gain_amplitude
                                    * (std::f64::consts::TAU * (fx * x / w + fy * y / h) + phase).sin();
                            let n = self.noise_std * noise.normal(i as u64, j as u64);
                            (v as f64 * gain + n).clamp(0.0, 1.0) as f32
                        })
                        .collect();
                    Frame::new(f.width(), f.height(), data)
                })
                .collect::<Result<_>>()?;
            Video::new(frames, ColorSpace::LinearDisplay)
        });
        let [a, b, c] = videos;
        bracket.with_videos([a?, b?, c?])
    }
}

/// One training pair: a distorted bracket and the radiance it came from.
#[derive(Debug, Clone)]
pub struct VmmExample {
    pub bracket: ExposureBracket,
    pub gt: Video,
    pub scale: f64,
}

impl VmmExample {
    pub fn new(bracket: ExposureBracket, gt: Video) -> Result<Self> {
        if !bracket.video(Slot::Base).same_shape(&gt) {
            return Err(Error::Shape("bracket and ground truth differ in shape".into()));
        }
        let scale = gt.max_value() as f64;
        if !(scale > 0.0) {
            return Err(Error::InvalidValue("ground truth is all zero".into()));
        }
        Ok(Self { bracket, gt, scale })
    }
}

/// Builds distorted synthetic examples: random scene, reference exposure drawn
/// from the scene's valid range, clean 4 EV ladder, then the distortion proxy.
pub fn synthetic_dataset(count: usize, width: usize, height: usize, seed: u64, proxy: &DistortionProxy) -> Result<Vec<VmmExample>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let rng = Rng::new(seed, 0x5eed_0000 + i as u64);
            let scene = crate::synth::hdr_scene(width, height, &rng.substream(0));
            example_from_radiance(&Video::single(scene, ColorSpace::LinearRadiance)?, &rng, proxy)
        })
        .collect()
}

/// Turns one radiance video into a distorted training example.
pub fn example_from_radiance(gt: &Video, rng: &Rng, proxy: &DistortionProxy) -> Result<VmmExample> {
    let range = crate::bracket::exposure_range(&gt.frames()[0])?;
    let e0 = crate::bracket::sample_reference_exposure(range.e_min, range.e_max, &rng.substream(1))?.e0;
    let clean = crate::bracket::make_bracket(gt, e0, crate::bracket::DEFAULT_EV_SPACING)?;
    let distorted = proxy.apply(&clean, &rng.substream(2))?;
    VmmExample::new(distorted, gt.clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Pixels per step.
    pub batch: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 2000,
            batch: 256,
            seed: 0,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

/// Draws a random pixel batch from the dataset.
pub fn sample_batch(data: &[VmmExample], size: usize, cursor: &mut Cursor) -> PixelBatch {
    let mut b = PixelBatch::default();
    for _ in 0..size {
        let ex = &data[cursor.below(data.len())];
        let frame = cursor.below(ex.gt.frame_count());
        let p = cursor.below(ex.gt.frames()[frame].pixel_count());
        b.push_pixel(&ex.bracket, Some(&ex.gt.frames()[frame]), frame, p, ex.scale);
    }
    b
}

/// Adam on exact gradients of the merged log-L1 loss.
pub fn vmm_train(data: &[VmmExample], config: &TrainConfig) -> Result<(VmmParams, TrainReport)> {
    vmm_train_from(VmmParams::init(config.seed), data, config)
}

pub fn vmm_train_from(mut params: VmmParams, data: &[VmmExample], config: &TrainConfig) -> Result<(VmmParams, TrainReport)> {
    if data.is_empty() {
        return Err(Error::InvalidValue("training set is empty".into()));
    }
    let mut opt = Adam::new(config.lr);
    let mut cursor = Rng::new(config.seed, 0xba7c).cursor();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sample_batch(data, config.batch, &mut cursor);
        let (loss, grad) = loss_with_grad(&params, &batch, config.deterministic);
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("loss {loss}"),
            });
        }
        opt.step(&mut params, &grad, |_| false);
        losses.push(loss);
    }
    Ok((params, TrainReport { losses }))
}
