//! `bracketforge`: SDR simulation, exposure brackets, HDR merging and evaluation.

mod config;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bracketforge_core::bracket::{exposure_range, make_bracket, sample_reference_exposure, ExposureBracket, Slot};
use bracketforge_core::hdrio::{self, BracketManifest, ManifestCrf};
use bracketforge_core::merge::merge_classical;
use bracketforge_core::metrics::{self, GtCalibration};
use bracketforge_core::mevm::{toy_sample, toy_train, ToyConfig, ToyDataset, ToyDitParams, ToyTrainConfig};
use bracketforge_core::nn::Module;
use bracketforge_core::sdrsim::{self, CrfParams, Exposure, ExposureMode, NoiseParams};
use bracketforge_core::vmm::{self, DistortionProxy, TrainConfig, VmmExample, VmmParams};
use bracketforge_core::{paramfile, ColorSpace, Frame, Rng, Video};

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "bracketforge", about = "SDR-to-HDR via exposure bracketing")]
struct Cli {
    /// Root seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force fixed-order reductions so results do not depend on the thread count.
    #[arg(long, global = true)]
    deterministic: bool,
    /// JSON file of flat dotted keys overriding defaults (flags win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Over,
    Under,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Classical,
    Vmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImageFormat {
    Pfm,
    Png,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade an HDR sequence into an 8-bit SDR input video.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        crf_seed: Option<u64>,
        /// Draw sensor-noise levels from this seed; no noise when omitted.
        #[arg(long)]
        noise_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a {-ev, 0, +ev} bracket from an HDR sequence.
    Bracket {
        #[arg(long)]
        input: PathBuf,
        /// Reference exposure, or "auto" to draw one from the scene's valid range.
        #[arg(long, default_value = "auto")]
        e0: String,
        #[arg(long)]
        ev: Option<f64>,
        #[arg(long, value_enum, default_value = "pfm")]
        format: ImageFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge a manifest's exposures into linear radiance (PFM).
    Merge {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "classical")]
        method: Method,
        /// Parameter file for `--method vmm`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the learned merger on distorted brackets.
    TrainVmm {
        /// Directory of HDR PFM scenes; procedural scenes when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted radiance against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Reinhard-tonemap PFM frames to PNG.
    Tonemap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one row of a PFM frame as CSV.
    Scanline {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy exposure-aware flow-matching transformer.
    ToyTrain {
        #[arg(long)]
        steps: Option<usize>,
        /// Keep the exposure gates frozen at zero.
        #[arg(long)]
        frozen_gate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the three exposures for a procedural sequence with a trained toy model.
    ToyDemo {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the embedded invariant checks.
    Selftest,
}

fn version_text() -> &'static str {
    static TEXT: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    TEXT.get_or_init(|| format!(
        "{} (parameter files: VMM1 v{v}, MEVT v{v})",
        env!("CARGO_PKG_VERSION"),
        v = paramfile::FORMAT_VERSION
    ))
}

fn main() -> ExitCode {
    let matches = match Cli::command().version(version_text()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let cfg = match Config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli, cfg: &Config) -> Result<ExitCode> {
    match &cli.command {
        Command::Simulate {
            input,
            mode,
            crf_seed,
            noise_seed,
            out,
        } => simulate(cfg, input, *mode, crf_seed.unwrap_or(cli.seed), *noise_seed, cli.seed, out)?,
        Command::Bracket {
            input,
            e0,
            ev,
            format,
            out,
        } => bracket(cli, cfg, input, e0, *ev, *format, out)?,
        Command::Merge {
            manifest,
            method,
            model,
            out,
        } => {
            if *method == Method::Vmm && model.is_none() {
                eprintln!("error: --method vmm requires --model");
                return Ok(ExitCode::from(1));
            }
            merge(manifest, *method, model.as_deref(), out)?
        }
        Command::TrainVmm { data, steps, out } => train_vmm(cli, cfg, data.as_deref(), *steps, out)?,
        Command::Eval { pred, gt, report } => eval(cfg, pred, gt, report)?,
        Command::Tonemap { input, out } => tonemap(input, out)?,
        Command::Scanline { frame, row, out } => {
            let f = hdrio::read_pfm(frame)?;
            let csv = metrics::scanline(&f, *row)?;
            std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::ToyTrain {
            steps,
            frozen_gate,
            out,
        } => toy_train_cmd(cli, cfg, *steps, *frozen_gate, out)?,
        Command::ToyDemo { model, steps, out } => toy_demo(cli, model, *steps, out)?,
        Command::Selftest => {
            let failures = selftest::run(&mut std::io::stdout().lock())?;
            if failures > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_pfm_dir(dir: &Path) -> Result<Vec<Frame>> {
    let paths = hdrio::list_frames(dir, "pfm")?;
    if paths.is_empty() {
        bail!("no .pfm frames in {}", dir.display());
    }
    paths.iter().map(|p| Ok(hdrio::read_pfm(p)?)).collect()
}

fn read_hdr_dir(dir: &Path) -> Result<Video> {
    Ok(Video::new(read_pfm_dir(dir)?, ColorSpace::LinearRadiance)?)
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("frame_{i:04}.{ext}")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes every frame into `dir` and returns the file names.
fn write_frames(video: &Video, dir: &Path, format: ImageFormat) -> Result<Vec<String>> {
    create_dir(dir)?;
    let mut names = Vec::new();
    for (i, f) in video.frames().iter().enumerate() {
        let name = match format {
            ImageFormat::Pfm => {
                let n = frame_name(i, "pfm");
                hdrio::write_pfm(f, dir.join(&n))?;
                n
            }
            ImageFormat::Png => {
                let n = frame_name(i, "png");
                hdrio::write_png8(f, dir.join(&n))?;
                n
            }
        };
        names.push(name);
    }
    Ok(names)
}

/// Noise is off unless requested: `--noise-seed` samples both levels, and config
/// keys override either one.
fn noise_params(cfg: &Config, noise_seed: Option<u64>) -> Result<NoiseParams> {
    let sampled = match noise_seed {
        Some(seed) => NoiseParams::sample(&Rng::new(seed, 1)),
        None => NoiseParams::new(0.0, 0.0, 0.5)?,
    };
    let s = if cfg.is_set("sdrsim.sigma_s") { cfg.f64("sdrsim.sigma_s", None) } else { sampled.sigma_s };
    let r = if cfg.is_set("sdrsim.sigma_r") { cfg.f64("sdrsim.sigma_r", None) } else { sampled.sigma_r };
    Ok(NoiseParams::new(s, r, cfg.f64("sdrsim.rho", None))?)
}

fn simulate(cfg: &Config, input: &Path, mode: Mode, crf_seed: u64, noise_seed: Option<u64>, seed: u64, out: &Path) -> Result<()> {
    let hdr = read_hdr_dir(input)?;
    let mode = match mode {
        Mode::Over => ExposureMode::Over,
        Mode::Under => ExposureMode::Under,
        Mode::Auto => ExposureMode::Auto,
    };
    let exposures = sdrsim::protocol_exposures(&hdr, mode)?;
    let crf = sdrsim::sample_crf(&Rng::new(crf_seed, 0));
    let noise = noise_params(cfg, noise_seed)?;
    let noise_seed = noise_seed.unwrap_or(seed);
    let sdr = sdrsim::simulate_sdr_input(&hdr, &Exposure::PerFrame(exposures.clone()), crf, noise, &Rng::new(noise_seed, 2))?;
    let names = write_frames(&sdr.video, out, ImageFormat::Png)?;
    let manifest = BracketManifest {
        exposures: vec![exposures[0]],
        ev_spacing: 0.0,
        paths: vec![names],
        crf: Some(ManifestCrf { n: crf.n, sigma: crf.sigma }),
        seed: Some(noise_seed),
        frame_exposures: Some(exposures),
    };
    hdrio::write_manifest(&manifest, out.join("manifest.json"))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bracket(cli: &Cli, cfg: &Config, input: &Path, e0: &str, ev: Option<f64>, format: ImageFormat, out: &Path) -> Result<()> {
    let hdr = read_hdr_dir(input)?;
    let ev = cfg.f64("bracket.ev", ev);
    let e0 = if e0 == "auto" {
        let range = exposure_range(&hdr.frames()[0])?;
        let r = sample_reference_exposure(range.e_min, range.e_max, &Rng::new(cli.seed, 0xb2ac))?;
        if r.degenerate {
            eprintln!("warning: scene has no valid exposure range; using E0 = {}", r.e0);
        }
        r.e0
    } else {
        e0.parse::<f64>()
            .with_context(|| format!("--e0 must be \"auto\" or a number, got {e0:?}"))?
    };
    let b = make_bracket(&hdr, e0, ev)?;
    let mut paths = Vec::new();
    for (slot, name) in [(Slot::Minus, "minus"), (Slot::Base, "base"), (Slot::Plus, "plus")] {
        let names = write_frames(b.video(slot), &out.join(name), format)?;
        paths.push(names.into_iter().map(|n| format!("{name}/{n}")).collect());
    }
    let manifest = BracketManifest {
        exposures: b.exposures().to_vec(),
        ev_spacing: ev,
        paths,
        crf: None,
        seed: Some(cli.seed),
        frame_exposures: None,
    };
    hdrio::write_manifest(&manifest, out.join("manifest.json"))?;
    Ok(())
}

fn read_stream(manifest: &BracketManifest, path: &Path, k: usize) -> Result<Video> {
    let frames: Vec<Frame> = (0..manifest.paths[k].len())
        .map(|i| {
            let p = manifest.resolve(path, k, i);
            let is_png = p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            Ok(if is_png { hdrio::read_png8(&p)? } else { hdrio::read_pfm(&p)? })
        })
        .collect::<Result<_>>()?;
    let video = Video::new(frames, ColorSpace::LinearDisplay)
        .context("bracket frames must lie in [0, 1]")?;
    match manifest.crf {
        Some(c) => {
            let crf = CrfParams::new(c.n, c.sigma)?;
            let encoded = Video::new(video.into_frames(), ColorSpace::CrfEncoded)?;
            Ok(sdrsim::invert_crf(&encoded, crf)?)
        }
        None => Ok(video),
    }
}

fn merge(manifest_path: &Path, method: Method, model: Option<&Path>, out: &Path) -> Result<()> {
    let mut manifest = hdrio::read_manifest(manifest_path)?;
    manifest.normalize();
    let merged = match manifest.exposures.len() {
        1 => {
            if method == Method::Vmm {
                bail!("the learned merger needs a three-exposure manifest");
            }
            // single stream: linearize and divide by the per-frame exposure
            let video = read_stream(&manifest, manifest_path, 0)?;
            let exposures = match &manifest.frame_exposures {
                Some(fe) => fe.clone(),
                None => vec![manifest.exposures[0]; video.frame_count()],
            };
            video.map_frames(ColorSpace::LinearRadiance, |i, f| {
                let e = exposures[i];
                f.map(|v| (v as f64 / e) as f32)
            })?
        }
        3 => {
            if manifest.frame_exposures.is_some() {
                bail!("per-frame exposures are only supported for single-stream manifests");
            }
            if !manifest.ladder_is_consistent(1e-6) {
                bail!(
                    "exposures {:?} do not form a 2^{} ladder",
                    manifest.exposures,
                    manifest.ev_spacing
                );
            }
            let videos = [0, 1, 2].map(|k| read_stream(&manifest, manifest_path, k));
            let [a, b, c] = videos;
            let e = &manifest.exposures;
            let bracket = ExposureBracket::new([a?, b?, c?], [e[0], e[1], e[2]], manifest.ev_spacing)?;
            match method {
                Method::Classical => merge_classical(&bracket)?,
                Method::Vmm => {
                    let Some(model) = model else {
                        bail!("--method vmm requires --model");
                    };
                    vmm::vmm_merge(&bracket, &VmmParams::load(model)?)?
                }
            }
        }
        n => bail!("expected 1 or 3 exposures in the manifest, found {n}"),
    };
    write_frames(&merged, out, ImageFormat::Pfm)?;
    Ok(())
}

fn train_vmm(cli: &Cli, cfg: &Config, data: Option<&Path>, steps: Option<usize>, out: &Path) -> Result<()> {
    let proxy = DistortionProxy::default();
    let examples: Vec<VmmExample> = match data {
        Some(dir) => read_pfm_dir(dir)?
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let gt = Video::single(f, ColorSpace::LinearRadiance)?;
                vmm::example_from_radiance(&gt, &Rng::new(cli.seed, 0x5eed_0000 + i as u64), &proxy)
            })
            .collect::<bracketforge_core::Result<_>>()?,
        None => {
            let size = cfg.usize("vmm.size", None)?;
            vmm::synthetic_dataset(cfg.usize("vmm.count", None)?, size, size, cli.seed, &proxy)?
        }
    };
    let config = TrainConfig {
        lr: cfg.f64("vmm.lr", None),
        steps: cfg.usize("vmm.steps", steps)?,
        batch: cfg.usize("vmm.batch", None)?,
        seed: cli.seed,
        deterministic: cli.deterministic,
    };
    let (params, report) = vmm::vmm_train(&examples, &config)?;
    params.save(out)?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        eprintln!("trained {} steps on {} examples: loss {first:.5} -> {last:.5}", config.steps, examples.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct FrameReport {
    frame: usize,
    pu_psnr_db: serde_json::Value,
    log_l1: f64,
}

#[derive(Serialize)]
struct EvalReport {
    a: f64,
    b: f64,
    pu_psnr_db: serde_json::Value,
    log_l1: f64,
    gt_scale: f64,
    per_frame: Vec<FrameReport>,
}

/// Finite dB as a number, +inf as the string "inf".
fn db_value(db: f64) -> serde_json::Value {
    if db.is_finite() {
        serde_json::json!(db)
    } else {
        serde_json::json!("inf")
    }
}

fn eval(cfg: &Config, pred: &Path, gt: &Path, report: &Path) -> Result<()> {
    let pred = read_hdr_dir(pred)?;
    let gt = read_hdr_dir(gt)?;
    if !pred.same_shape(&gt) {
        bail!(
            "prediction ({} frames of {}x{}) and ground truth ({} frames of {}x{}) differ",
            pred.frame_count(),
            pred.width(),
            pred.height(),
            gt.frame_count(),
            gt.width(),
            gt.height()
        );
    }
    let cal = GtCalibration {
        percentile: cfg.f64("metrics.gt_percentile", None),
        target: cfg.f64("metrics.gt_target", None),
        lo: cfg.f64("metrics.gt_lo", None),
        hi: cfg.f64("metrics.gt_hi", None),
    };
    let peak = cfg.f64("metrics.display_peak", None);
    let (gt, gt_scale) = metrics::preprocess_gt(&gt, &cal)?;
    let (fit, aligned) = metrics::affine_align(&pred, &gt)?;
    let s = gt.max_value() as f64;
    let per_frame = aligned
        .frames()
        .iter()
        .zip(gt.frames())
        .enumerate()
        .map(|(i, (p, g))| {
            let p = Video::single(p.clone(), ColorSpace::LinearRadiance)?;
            let g = Video::single(g.clone(), ColorSpace::LinearRadiance)?;
            Ok(FrameReport {
                frame: i,
                pu_psnr_db: db_value(metrics::pu_psnr(&p, &g, peak)?),
                log_l1: metrics::log_l1(&p, &g, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let r = EvalReport {
        a: fit.a,
        b: fit.b,
        pu_psnr_db: db_value(metrics::pu_psnr(&aligned, &gt, peak)?),
        log_l1: metrics::log_l1(&aligned, &gt, s)?,
        gt_scale,
        per_frame,
    };
    let mut text = serde_json::to_string_pretty(&r)?;
    text.push('\n');
    std::fs::write(report, text).with_context(|| format!("writing {}", report.display()))?;
    Ok(())
}

fn tonemap(input: &Path, out: &Path) -> Result<()> {
    let hdr = read_hdr_dir(input)?;
    let ldr = metrics::reinhard_tonemap(&hdr)?;
    write_frames(&ldr, out, ImageFormat::Png)?;
    Ok(())
}

fn toy_train_cmd(cli: &Cli, cfg: &Config, steps: Option<usize>, frozen_gate: bool, out: &Path) -> Result<()> {
    let data = ToyDataset::synthetic(ToyConfig::default(), cfg.usize("toy.sequences", None)?, cli.seed)?;
    let config = ToyTrainConfig {
        steps: cfg.usize("toy.steps", steps)?,
        batch: cfg.usize("toy.batch", None)?,
        lr: cfg.f64("toy.lr", None),
        seed: cli.seed,
        learn_gate: !frozen_gate,
        deterministic: cli.deterministic,
        ..ToyTrainConfig::default()
    };
    let (params, report) = toy_train(&data, &config)?;
    params.save(out)?;
    eprintln!(
        "trained {} steps ({} parameters): eval loss {:.5} -> {:.5}",
        config.steps,
        params.param_count(),
        report.initial_eval,
        report.final_eval
    );
    Ok(())
}

/// Writes latent frames (channel-major) as PFM; the constant channel is dropped.
fn write_latents(cfg: &ToyConfig, latents: &[f64], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let (w, h) = (cfg.latent_width, cfg.latent_height);
    for (i, l) in latents.chunks_exact(cfg.frame_len()).enumerate() {
        let f = Frame::from_fn(w, h, |x, y| [0, 1, 2].map(|c| l[c * w * h + y * w + x] as f32));
        hdrio::write_pfm(&f, dir.join(frame_name(i, "pfm")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DemoReport {
    steps: usize,
    mean_abs_error: f64,
    per_segment: [f64; 3],
}

fn toy_demo(cli: &Cli, model: &Path, steps: usize, out: &Path) -> Result<()> {
    let params = ToyDitParams::load(model)?;
    let cfg = params.config;
    let data = ToyDataset::synthetic(cfg, 1, cli.seed)?;
    let seq = &data.sequences[0];
    let sample = toy_sample(&seq.cond, &params, steps, cli.seed)?;
    let seg = cfg.cond_len();
    let mae = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let per_segment = [0, 1, 2].map(|k| mae(&sample[k * seg..(k + 1) * seg], &seq.target[k * seg..(k + 1) * seg]));
    create_dir(out)?;
    for (k, name) in ["base", "minus", "plus"].iter().enumerate() {
        write_latents(&cfg, &sample[k * seg..(k + 1) * seg], &out.join(name))?;
        write_latents(&cfg, &seq.target[k * seg..(k + 1) * seg], &out.join(format!("{name}_target")))?;
    }
    let report = DemoReport {
        steps,
        mean_abs_error: mae(&sample, &seq.target),
        per_segment,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(out.join("demo.json"), text)?;
    Ok(())
}
