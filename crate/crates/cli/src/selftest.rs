//! Embedded invariant checks run by `bracketforge selftest`.

use bracketforge_core::bracket::make_bracket;
use bracketforge_core::merge::merge_classical;
use bracketforge_core::mevm::{ExposureIndex, Layout, RopeMode, ToyConfig, ToyDitParams};
use bracketforge_core::metrics::{affine_align, pu21_encode, pu_psnr};
use bracketforge_core::rng::philox4x32_10;
use bracketforge_core::sdrsim::{add_sensor_noise, apply_crf, clip_quantize, invert_crf, CrfParams, NoiseParams};
use bracketforge_core::{hdrio, synth, ColorSpace, Frame, Rng, Video};

type Check = fn() -> Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn philox_known_answer() -> Result<(), String> {
    let out = philox4x32_10([0; 4], [0; 2]);
    ensure(out == [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8], || format!("{out:08x?}"))
}

fn crf_roundtrip() -> Result<(), String> {
    let p = CrfParams::new(0.9, 0.6).map_err(e)?;
    ensure((p.eval(0.5) - 0.754846).abs() < 1e-6, || format!("f(0.5) = {}", p.eval(0.5)))?;
    let ramp = Frame::from_fn(256, 1, |x, _| [x as f32 / 255.0; 3]);
    let v = Video::single(ramp, ColorSpace::LinearDisplay).map_err(e)?;
    let back = invert_crf(&apply_crf(&v, p).map_err(e)?, p).map_err(e)?;
    let err = v
        .values()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    ensure(err <= 1e-5, || format!("round-trip error {err}"))
}

fn quantize_idempotent() -> Result<(), String> {
    let f = Frame::from_fn(64, 4, |x, y| [x as f32 / 40.0, y as f32 * 0.31, 0.5]);
    let v = Video::single(f, ColorSpace::LinearRadiance).map_err(e)?;
    let once = clip_quantize(&v);
    ensure(clip_quantize(&once) == once, || "clip_quantize is not idempotent".into())
}

fn noise_is_deterministic() -> Result<(), String> {
    let v = Video::new(vec![Frame::filled(8, 8, [0.25; 3]); 3], ColorSpace::LinearDisplay).map_err(e)?;
    let p = NoiseParams::new(0.05, 0.02, 0.5).map_err(e)?;
    let a = add_sensor_noise(&v, p, &Rng::new(7, 0)).map_err(e)?;
    let b = add_sensor_noise(&v, p, &Rng::new(7, 0)).map_err(e)?;
    ensure(a == b && a != v, || "noise is not reproducible".into())
}

fn classical_merge_recovers_radiance() -> Result<(), String> {
    let hdr = synth::hdr_sequence(16, 16, 2, &Rng::new(3, 0));
    let bracket = make_bracket(&hdr, 0.25, 4.0).map_err(e)?;
    let merged = merge_classical(&bracket).map_err(e)?;
    let [lo, _, hi] = bracket.exposures();
    for (h, m) in hdr.values().zip(merged.values()) {
        let h = h as f64;
        // unclipped in at least one rung
        if h * hi < 1.0 || h * lo < 1.0 {
            let rel = (m as f64 - h).abs() / h;
            if rel > 1e-6 {
                return Err(format!("radiance {h} merged to {m}"));
            }
        }
    }
    Ok(())
}

fn affine_is_exact() -> Result<(), String> {
    let gt = synth::hdr_sequence(16, 16, 1, &Rng::new(4, 0));
    let pred = gt.map_frames(ColorSpace::LinearRadiance, |_, f| f.map(|v| 2.0 * v + 3.0)).map_err(e)?;
    let (fit, _) = affine_align(&pred, &gt).map_err(e)?;
    ensure((fit.a - 0.5).abs() < 1e-9 && (fit.b + 1.5).abs() < 1e-9, || format!("{fit:?}"))
}

fn pu_psnr_offset() -> Result<(), String> {
    let peak = pu21_encode(1000.0) - pu21_encode(0.005);
    ensure((peak - 420.0).abs() < 5.0, || format!("PU peak {peak}"))?;
    let gt = Video::single(Frame::filled(4, 4, [50.0; 3]), ColorSpace::LinearRadiance).map_err(e)?;
    let db = pu_psnr(&gt, &gt, 1000.0).map_err(e)?;
    ensure(db == f64::INFINITY, || format!("identical inputs gave {db} dB"))
}

fn rope_gate_zero() -> Result<(), String> {
    let cfg = ToyConfig {
        latent_height: 4,
        latent_width: 4,
        frames_per_segment: 1,
        ..ToyConfig::default()
    };
    let p = ToyDitParams::init(cfg, 1).map_err(e)?;
    let r = Rng::new(2, 0);
    let cond: Vec<f64> = (0..cfg.cond_len()).map(|i| r.uniform(0, i as u64)).collect();
    let noisy: Vec<f64> = (0..cfg.generated_len()).map(|i| r.normal(1, i as u64)).collect();
    let a = p.forward(&cond, &noisy, 0.4, RopeMode::ExposureAware).map_err(e)?;
    let b = p.forward(&cond, &noisy, 0.4, RopeMode::Plain).map_err(e)?;
    ensure(a == b, || "zero gate differs from plain rotary embedding".into())
}

fn layout_indices() -> Result<(), String> {
    let l = Layout::new(2, 4.0);
    let want = [
        ExposureIndex { exposure: 0.0, crf: 1.0, relative: 0.0 },
        ExposureIndex { exposure: -4.0, crf: 0.0, relative: 1.0 },
    ];
    ensure(l.index[0] == want[0] && l.index[5] == want[1], || format!("{:?}", l.index))
}

fn pfm_roundtrip() -> Result<(), String> {
    let f = synth::hdr_scene(7, 5, &Rng::new(5, 0));
    let mut buf = Vec::new();
    hdrio::write_pfm_to(&f, &mut buf).map_err(e)?;
    let back = hdrio::read_pfm_from(&mut buf.as_slice(), std::path::Path::new("<memory>")).map_err(e)?;
    ensure(back == f, || "PFM round trip changed pixels".into())
}

pub const CHECKS: &[(&str, Check)] = &[
    ("philox_known_answer", philox_known_answer),
    ("crf_roundtrip", crf_roundtrip),
    ("quantize_idempotent", quantize_idempotent),
    ("noise_deterministic", noise_is_deterministic),
    ("classical_merge", classical_merge_recovers_radiance),
    ("affine_exact", affine_is_exact),
    ("pu_psnr", pu_psnr_offset),
    ("rope_gate_zero", rope_gate_zero),
    ("layout_indices", layout_indices),
    ("pfm_roundtrip", pfm_roundtrip),
];

/// Runs every check, printing one line each; returns the number of failures.
pub fn run(out: &mut impl std::io::Write) -> std::io::Result<usize> {
    let mut failures = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => writeln!(out, "ok   {name}")?,
            Err(msg) => {
                failures += 1;
                writeln!(out, "FAIL {name}: {msg}")?;
            }
        }
    }
    writeln!(out, "{} checks, {failures} failed", CHECKS.len())?;
    Ok(failures)
}
