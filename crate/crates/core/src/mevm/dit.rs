//! The toy diffusion transformer and its exact backward pass.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, Attention, AttentionCache, LayerNorm, LayerNormCache, Linear, Module, Tensor};
use crate::paramfile;
use crate::rng::{Cursor, Rng};

use super::layout::Layout;
use super::rope::{index_encoding, rope_angles, sinusoidal, ExposureRopeParams, RopeConfig};

pub const MAGIC: &[u8; 4] = b"MEVT";

/// Timestep scale applied before the sinusoidal embedding.
const TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub channels: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub frames_per_segment: usize,
    pub patch: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    pub d_gamma: usize,
    pub rope: RopeConfig,
    pub ev: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            latent_height: 8,
            latent_width: 8,
            frames_per_segment: 2,
            patch: 2,
            d_model: 48,
            heads: 2,
            blocks: 2,
            mlp_hidden: 192,
            d_gamma: 16,
            rope: RopeConfig::default(),
            ev: 4.0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 || self.d_model / self.heads != self.rope.head_dim {
            return Err(Error::InvalidValue(format!(
                "d_model {} / heads {} must equal the rotary head dim {}",
                self.d_model, self.heads, self.rope.head_dim
            )));
        }
        RopeConfig::new(self.rope.head_dim)?;
        if self.latent_height % self.patch != 0 || self.latent_width % self.patch != 0 {
            return Err(Error::InvalidValue("latent size must be a multiple of the patch".into()));
        }
        if self.frames_per_segment == 0 || self.d_gamma % 2 != 0 {
            return Err(Error::InvalidValue("need >= 1 frame per segment and an even d_gamma".into()));
        }
        Ok(())
    }

    /// Values in one latent frame.
    pub fn frame_len(&self) -> usize {
        self.channels * self.latent_height * self.latent_width
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.latent_height / self.patch, self.latent_width / self.patch)
    }

    pub fn tokens_per_frame(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn payload(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Values in the conditioning segment.
    pub fn cond_len(&self) -> usize {
        self.frames_per_segment * self.frame_len()
    }

    /// Values in the three generated segments.
    pub fn generated_len(&self) -> usize {
        3 * self.cond_len()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.frames_per_segment, self.ev)
    }
}

/// Whether attention adds the learned exposure offset to the axial angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RopeMode {
    ExposureAware,
    /// Plain axial angles; the exposure parameters are ignored.
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DitBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub exposure: ExposureRopeParams,
    pub norm2: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl DitBlock {
    fn init(cfg: &ToyConfig, c: &mut Cursor) -> Self {
        Self {
            norm1: LayerNorm::new(cfg.d_model),
            attn: Attention::init(cfg.d_model, cfg.heads, c),
            exposure: ExposureRopeParams::init(cfg.d_gamma, cfg.rope.angle_len(), c),
            norm2: LayerNorm::new(cfg.d_model),
            mlp_in: Linear::init(cfg.d_model, cfg.mlp_hidden, c),
            mlp_out: Linear::init(cfg.mlp_hidden, cfg.d_model, c),
        }
    }

    fn zeros(cfg: &ToyConfig) -> Self {
        let mut b = Self {
            norm1: LayerNorm::new(cfg.d_model),
            attn: Attention::zeros(cfg.d_model, cfg.heads),
            exposure: ExposureRopeParams::zeros(cfg.d_gamma, cfg.rope.angle_len()),
            norm2: LayerNorm::new(cfg.d_model),
            mlp_in: Linear::zeros(cfg.d_model, cfg.mlp_hidden),
            mlp_out: Linear::zeros(cfg.mlp_hidden, cfg.d_model),
        };
        b.zero();
        b
    }
}

impl Module for DitBlock {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        self.norm1.tensors(&format!("{prefix}.norm1"), out);
        self.attn.tensors(&format!("{prefix}.attn"), out);
        self.exposure.tensors(&format!("{prefix}.exposure"), out);
        self.norm2.tensors(&format!("{prefix}.norm2"), out);
        self.mlp_in.tensors(&format!("{prefix}.mlp_in"), out);
        self.mlp_out.tensors(&format!("{prefix}.mlp_out"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.norm1.tensors_mut(out);
        self.attn.tensors_mut(out);
        self.exposure.tensors_mut(out);
        self.norm2.tensors_mut(out);
        self.mlp_in.tensors_mut(out);
        self.mlp_out.tensors_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDitParams {
    pub config: ToyConfig,
    pub patch_embed: Linear,
    pub time_in: Linear,
    pub time_out: Linear,
    pub blocks: Vec<DitBlock>,
    pub head: Linear,
}

impl Module for ToyDitParams {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        self.patch_embed.tensors(&p("patch_embed"), out);
        self.time_in.tensors(&p("time_in"), out);
        self.time_out.tensors(&p("time_out"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.tensors(&p(&format!("blocks.{i}")), out);
        }
        self.head.tensors(&p("head"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.patch_embed.tensors_mut(out);
        self.time_in.tensors_mut(out);
        self.time_out.tensors_mut(out);
        for b in self.blocks.iter_mut() {
            b.tensors_mut(out);
        }
        self.head.tensors_mut(out);
    }
}

struct BlockCache {
    norm1: LayerNormCache,
    attn: AttentionCache,
    angles: Vec<f64>,
    /// `Linear(encoding)` per concatenated frame, before gating.
    proj: Vec<f64>,
    norm2: LayerNormCache,
    n2: Vec<f64>,
    m1: Vec<f64>,
}

/// Forward activations of one sequence.
pub struct DitCache {
    mode: RopeMode,
    tokens: Vec<f64>,
    time_emb: Vec<f64>,
    time_pre: Vec<f64>,
    encodings: Vec<f64>,
    blocks: Vec<BlockCache>,
    final_h: Vec<f64>,
}

impl ToyDitParams {
    pub fn init(config: ToyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut c = Rng::new(seed, 0xd17).cursor();
        let d = config.d_model;
        Ok(Self {
            config,
            patch_embed: Linear::init(config.payload(), d, &mut c),
            time_in: Linear::init(d, d, &mut c),
            time_out: Linear::init(d, d, &mut c),
            blocks: (0..config.blocks).map(|_| DitBlock::init(&config, &mut c)).collect(),
            head: Linear::init(d, config.payload(), &mut c),
        })
    }

    /// Same structure with every value zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let cfg = self.config;
        let d = cfg.d_model;
        let mut z = Self {
            config: cfg,
            patch_embed: Linear::zeros(cfg.payload(), d),
            time_in: Linear::zeros(d, d),
            time_out: Linear::zeros(d, d),
            blocks: (0..cfg.blocks).map(|_| DitBlock::zeros(&cfg)).collect(),
            head: Linear::zeros(d, cfg.payload()),
        };
        z.zero();
        z
    }

    /// Splits `frames` latent frames into patch tokens, frame-major.
    pub fn patchify(&self, latents: &[f64], frames: usize) -> Vec<f64> {
        let cfg = &self.config;
        let (gh, gw) = cfg.grid();
        let (p, h, w) = (cfg.patch, cfg.latent_height, cfg.latent_width);
        let mut out = Vec::with_capacity(frames * gh * gw * cfg.payload());
        for f in 0..frames {
            let frame = &latents[f * cfg.frame_len()..(f + 1) * cfg.frame_len()];
            for ty in 0..gh {
                for tx in 0..gw {
                    for c in 0..cfg.channels {
                        for dy in 0..p {
                            for dx in 0..p {
                                out.push(frame[c * h * w + (ty * p + dy) * w + tx * p + dx]);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn unpatchify(&self, tokens: &[f64], frames: usize) -> Vec<f64> {
        let cfg = &self.config;
        let (gh, gw) = cfg.grid();
        let (p, h, w) = (cfg.patch, cfg.latent_height, cfg.latent_width);
        let mut out = vec![0.0; frames * cfg.frame_len()];
        let mut it = tokens.iter();
        for f in 0..frames {
            let frame = &mut out[f * cfg.frame_len()..(f + 1) * cfg.frame_len()];
            for ty in 0..gh {
                for tx in 0..gw {
                    for c in 0..cfg.channels {
                        for dy in 0..p {
                            for dx in 0..p {
                                frame[c * h * w + (ty * p + dy) * w + tx * p + dx] =
                                    *it.next().expect("token count");
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Axial angles of every token; `p_f` is the absolute concatenated frame index.
    fn base_angles(&self) -> Vec<f64> {
        let cfg = &self.config;
        let (gh, gw) = cfg.grid();
        let mut out = Vec::new();
        for f in 0..cfg.layout().total_frames() {
            for ty in 0..gh {
                for tx in 0..gw {
                    out.extend(rope_angles([f, ty, tx], &cfg.rope));
                }
            }
        }
        out
    }

    pub(crate) fn check_inputs(&self, cond: &[f64], noisy: &[f64], t: f64) -> Result<()> {
        let cfg = &self.config;
        if cond.len() != cfg.cond_len() || noisy.len() != cfg.generated_len() {
            return Err(Error::Shape(format!(
                "expected {} conditioning and {} generated values, got {} and {}",
                cfg.cond_len(),
                cfg.generated_len(),
                cond.len(),
                noisy.len()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidValue(format!("timestep {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Predicted velocity for the generated segments (`3 F` latent frames, ordered
    /// base, minus, plus). `cond` stays clean; `noisy` is the current interpolant.
    pub fn forward(&self, cond: &[f64], noisy: &[f64], t: f64, mode: RopeMode) -> Result<Vec<f64>> {
        self.check_inputs(cond, noisy, t)?;
        Ok(self.forward_cached(cond, noisy, t, mode).0)
    }

    pub(crate) fn forward_cached(&self, cond: &[f64], noisy: &[f64], t: f64, mode: RopeMode) -> (Vec<f64>, DitCache) {
        let cfg = &self.config;
        let layout = cfg.layout();
        let n_frames = layout.total_frames();
        let tpf = cfg.tokens_per_frame();
        let n_tok = n_frames * tpf;
        let half = cfg.rope.angle_len();
        let d = cfg.d_model;

        let mut latents = cond.to_vec();
        latents.extend_from_slice(noisy);
        let tokens = self.patchify(&latents, n_frames);
        let mut h = self.patch_embed.forward(&tokens, n_tok);

        let time_emb = sinusoidal(t * TIME_SCALE, d);
        let time_pre = self.time_in.forward(&time_emb, 1);
        let time_act: Vec<f64> = time_pre.iter().map(|&v| gelu(v)).collect();
        let te = self.time_out.forward(&time_act, 1);
        for row in h.chunks_exact_mut(d) {
            for (a, b) in row.iter_mut().zip(&te) {
                *a += b;
            }
        }

        let encodings: Vec<f64> = layout
            .index
            .iter()
            .flat_map(|idx| index_encoding(idx, cfg.d_gamma))
            .collect();
        let base = self.base_angles();

        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let proj = blk.exposure.proj.forward(&encodings, n_frames);
            let mut angles = base.clone();
            if mode == RopeMode::ExposureAware {
                for (tok, a) in angles.chunks_exact_mut(half).enumerate() {
                    let f = tok / tpf;
                    for k in 0..half {
                        a[k] += blk.exposure.gate[k] * proj[f * half + k];
                    }
                }
            }
            let (n1, norm1) = blk.norm1.forward(&h);
            let (att, attn) = blk.attn.forward(&n1, 1, n_tok, Some(&angles));
            for (a, b) in h.iter_mut().zip(&att) {
                *a += b;
            }
            let (n2, norm2) = blk.norm2.forward(&h);
            let m1 = blk.mlp_in.forward(&n2, n_tok);
            let g: Vec<f64> = m1.iter().map(|&v| gelu(v)).collect();
            let m2 = blk.mlp_out.forward(&g, n_tok);
            for (a, b) in h.iter_mut().zip(&m2) {
                *a += b;
            }
            caches.push(BlockCache {
                norm1,
                attn,
                angles,
                proj,
                norm2,
                n2,
                m1,
            });
        }

        let gen_start = layout.generated_start() * tpf;
        let out_tokens = self.head.forward(&h[gen_start * d..], n_tok - gen_start);
        let velocity = self.unpatchify(&out_tokens, 3 * cfg.frames_per_segment);
        (
            velocity,
            DitCache {
                mode,
                tokens,
                time_emb,
                time_pre,
                encodings,
                blocks: caches,
                final_h: h,
            },
        )
    }

    /// Accumulates `dL/dparams` for upstream gradient `d_velocity`.
    pub(crate) fn backward(&self, cache: &DitCache, d_velocity: &[f64], grad: &mut ToyDitParams) {
        let cfg = &self.config;
        let layout = cfg.layout();
        let n_frames = layout.total_frames();
        let tpf = cfg.tokens_per_frame();
        let n_tok = n_frames * tpf;
        let half = cfg.rope.angle_len();
        let d = cfg.d_model;
        let gen_start = layout.generated_start() * tpf;

        let d_out_tokens = self.patchify(d_velocity, 3 * cfg.frames_per_segment);
        let mut dh = vec![0.0; n_tok * d];
        let d_gen = self.head.backward(
            &cache.final_h[gen_start * d..],
            &d_out_tokens,
            n_tok - gen_start,
            &mut grad.head,
        );
        dh[gen_start * d..].copy_from_slice(&d_gen);

        for (i, blk) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[i];
            let gb = &mut grad.blocks[i];
            let g: Vec<f64> = bc.m1.iter().map(|&v| gelu(v)).collect();
            let mut dg = blk.mlp_out.backward(&g, &dh, n_tok, &mut gb.mlp_out);
            for (x, &m) in dg.iter_mut().zip(&bc.m1) {
                *x *= gelu_grad(m);
            }
            let dn2 = blk.mlp_in.backward(&bc.n2, &dg, n_tok, &mut gb.mlp_in);
            let dres = blk.norm2.backward(&bc.norm2, &dn2, &mut gb.norm2);
            for (a, b) in dh.iter_mut().zip(&dres) {
                *a += b;
            }
            let (dn1, dangles) = blk.attn.backward(&bc.attn, &dh, Some(&bc.angles), &mut gb.attn);
            let dres = blk.norm1.backward(&bc.norm1, &dn1, &mut gb.norm1);
            for (a, b) in dh.iter_mut().zip(&dres) {
                *a += b;
            }
            if cache.mode == RopeMode::ExposureAware {
                let dangles = dangles.expect("angles were used");
                let mut d_off = vec![0.0; n_frames * half];
                for (tok, da) in dangles.chunks_exact(half).enumerate() {
                    let f = tok / tpf;
                    for k in 0..half {
                        d_off[f * half + k] += da[k];
                    }
                }
                let mut d_proj = vec![0.0; n_frames * half];
                for f in 0..n_frames {
                    for k in 0..half {
                        let j = f * half + k;
                        gb.exposure.gate[k] += d_off[j] * bc.proj[j];
                        d_proj[j] = d_off[j] * blk.exposure.gate[k];
                    }
                }
                blk.exposure
                    .proj
                    .backward_into(&cache.encodings, &d_proj, &mut gb.exposure.proj, None);
            }
        }

        let mut dte = vec![0.0; d];
        for row in dh.chunks_exact(d) {
            for (a, b) in dte.iter_mut().zip(row) {
                *a += b;
            }
        }
        let time_act: Vec<f64> = cache.time_pre.iter().map(|&v| gelu(v)).collect();
        let mut d_act = self.time_out.backward(&time_act, &dte, 1, &mut grad.time_out);
        for (x, &p) in d_act.iter_mut().zip(&cache.time_pre) {
            *x *= gelu_grad(p);
        }
        self.time_in
            .backward_into(&cache.time_emb, &d_act, &mut grad.time_in, None);
        self.patch_embed
            .backward_into(&cache.tokens, &dh, &mut grad.patch_embed, None);
    }

    /// Gradient of `<forward(cond, noisy, t), d_velocity>` with respect to every
    /// parameter.
    pub fn velocity_vjp(
        &self,
        cond: &[f64],
        noisy: &[f64],
        t: f64,
        mode: RopeMode,
        d_velocity: &[f64],
    ) -> Result<ToyDitParams> {
        self.check_inputs(cond, noisy, t)?;
        if d_velocity.len() != noisy.len() {
            return Err(Error::Shape("velocity gradient length".into()));
        }
        let (_, cache) = self.forward_cached(cond, noisy, t, mode);
        let mut grad = self.zeros_like();
        self.backward(&cache, d_velocity, &mut grad);
        Ok(grad)
    }

    fn meta(&self) -> Vec<(&'static str, u32)> {
        let c = &self.config;
        vec![
            ("channels", c.channels as u32),
            ("latent_height", c.latent_height as u32),
            ("latent_width", c.latent_width as u32),
            ("frames_per_segment", c.frames_per_segment as u32),
            ("patch", c.patch as u32),
            ("d_model", c.d_model as u32),
            ("heads", c.heads as u32),
            ("blocks", c.blocks as u32),
            ("mlp_hidden", c.mlp_hidden as u32),
            ("d_gamma", c.d_gamma as u32),
            ("head_dim", c.rope.head_dim as u32),
            ("ev", c.ev as u32),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        paramfile::write(path, MAGIC, &self.meta(), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = paramfile::read(path, MAGIC)?;
        let get = |k: &str| {
            file.meta(k)
                .map(|v| v as usize)
                .ok_or_else(|| Error::format("parameter", path, format!("missing {k}")))
        };
        let config = ToyConfig {
            channels: get("channels")?,
            latent_height: get("latent_height")?,
            latent_width: get("latent_width")?,
            frames_per_segment: get("frames_per_segment")?,
            patch: get("patch")?,
            d_model: get("d_model")?,
            heads: get("heads")?,
            blocks: get("blocks")?,
            mlp_hidden: get("mlp_hidden")?,
            d_gamma: get("d_gamma")?,
            rope: RopeConfig::new(get("head_dim")?)?,
            ev: get("ev")? as f64,
        };
        config.validate()?;
        let mut p = Self::init(config, 0)?.zeros_like();
        file.load_into(&mut p, path)?;
        Ok(p)
    }
}
