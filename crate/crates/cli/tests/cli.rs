use std::path::Path;
use std::process::{Command, Output};

use bracketforge_core::{hdrio, synth, Frame, Rng, Video};

fn bracketforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bracketforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_hdr(dir: &Path, frames: usize) -> Video {
    std::fs::create_dir_all(dir).unwrap();
    let v = synth::hdr_sequence(20, 12, frames, &Rng::new(5, 0));
    for (i, f) in v.frames().iter().enumerate() {
        hdrio::write_pfm(f, dir.join(format!("frame_{i:04}.pfm"))).unwrap();
    }
    v
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&bracketforge(&[])), 1);
    assert_eq!(code(&bracketforge(&["frobnicate"])), 1);
    assert_eq!(code(&bracketforge(&["merge", "--manifest", "m.json"])), 1);
    assert_eq!(code(&bracketforge(&["selftest", "--threads", "0"])), 1);
    assert_eq!(code(&bracketforge(&["scanline", "--frame", "x.pfm", "--row", "-3", "--out", "o"])), 1);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = s(&tmp.path().join("nope.json"));
    let out = bracketforge(&["merge", "--manifest", &missing, "--out", &s(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let bad = tmp.path().join("bad.pfm");
    std::fs::write(&bad, b"P7\n1 1\n-1\n").unwrap();
    let out = bracketforge(&["scanline", "--frame", &s(&bad), "--row", "0", "--out", &s(&tmp.path().join("r.csv"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"bracket.evv": 2}"#).unwrap();
    assert_eq!(code(&bracketforge(&["selftest", "--config", &s(&cfg)])), 1);
    std::fs::write(&cfg, r#"{"bracket.ev": 2}"#).unwrap();
    assert_eq!(code(&bracketforge(&["selftest", "--config", &s(&cfg)])), 0);
}

#[test]
fn version_names_parameter_formats() {
    let out = bracketforge(&["--version"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("VMM1") && text.contains("MEVT"), "{text}");
}

#[test]
fn selftest_passes() {
    let out = bracketforge(&["selftest"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.ends_with("10 checks, 0 failed\n"), "{text}");
}

#[test]
fn consistent_pfm_bracket_merges_back_within_one_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let hdr = write_hdr(&tmp.path().join("hdr"), 2);
    let br = tmp.path().join("br");
    let out = bracketforge(&["bracket", "--input", &s(&tmp.path().join("hdr")), "--e0", "0.02", "--out", &s(&br)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let merged = tmp.path().join("merged");
    let out = bracketforge(&["merge", "--manifest", &s(&br.join("manifest.json")), "--method", "classical", "--out", &s(&merged)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for (i, truth) in hdr.frames().iter().enumerate() {
        let got = hdrio::read_pfm(merged.join(format!("frame_{i:04}.pfm"))).unwrap();
        for (&h, &m) in truth.data().iter().zip(got.data()) {
            // unclipped in the darkest rung
            if h as f64 * 0.02 / 16.0 < 1.0 {
                assert!((m - h).abs() <= 0.01 * h, "{h} merged to {m}");
            }
        }
    }
}

#[test]
fn png_bracket_merges_back_within_one_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let hdr = write_hdr(&tmp.path().join("hdr"), 2);
    let br = tmp.path().join("br");
    let e0 = 0.5 / hdr.max_value() as f64;
    let out = bracketforge(&[
        "bracket", "--input", &s(&tmp.path().join("hdr")), "--e0", &e0.to_string(), "--format", "png", "--out", &s(&br),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let merged = tmp.path().join("merged");
    let out = bracketforge(&["merge", "--manifest", &s(&br.join("manifest.json")), "--out", &s(&merged)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Worst case per value: every rung off by half an 8-bit step, blended with
    // the hat weights of the quantized values.
    let exposures = [e0 / 16.0, e0, e0 * 16.0];
    let mut checked = 0;
    for (i, truth) in hdr.frames().iter().enumerate() {
        let got = hdrio::read_pfm(merged.join(format!("frame_{i:04}.pfm"))).unwrap();
        for (j, (&h, &m)) in truth.data().iter().zip(got.data()).enumerate() {
            let v = exposures.map(|e| ((h as f64 * e).clamp(0.0, 1.0) * 255.0).round() / 255.0);
            let usable: Vec<usize> = (0..3).filter(|&k| v[k] > 0.0 && v[k] < 1.0).collect();
            if usable.is_empty() {
                continue;
            }
            let w = |k: usize| if v[k] <= 0.5 { v[k] } else { 1.0 - v[k] }.max(1.0 / 255.0);
            let total: f64 = usable.iter().map(|&k| w(k)).sum();
            let bound: f64 = usable.iter().map(|&k| w(k) * 0.5 / 255.0 / exposures[k]).sum::<f64>() / total;
            assert!(
                (m as f64 - h as f64).abs() <= bound * (1.0 + 1e-4) + 1e-6 * h as f64,
                "frame {i} value {j}: {h} merged to {m}, bound {bound}"
            );
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn simulate_then_merge_then_eval_reports_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    write_hdr(&tmp.path().join("hdr"), 3);
    let sdr = tmp.path().join("sdr");
    let hdr = s(&tmp.path().join("hdr"));
    let out = bracketforge(&["simulate", "--input", &hdr, "--mode", "over", "--crf-seed", "1", "--out", &s(&sdr)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        assert!(sdr.join(format!("frame_{i:04}.png")).exists());
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(sdr.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frame_exposures"].as_array().unwrap().len(), 3);

    let lin = tmp.path().join("lin");
    let out = bracketforge(&["merge", "--manifest", &s(&sdr.join("manifest.json")), "--out", &s(&lin)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = tmp.path().join("report.json");
    let out = bracketforge(&["eval", "--pred", &s(&lin), "--gt", &hdr, "--report", &s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    let db = r["pu_psnr_db"].as_f64().unwrap();
    let per_frame = r["per_frame"].as_array().unwrap();
    assert!(db.is_finite() && db > 0.0, "{r}");
    assert!(r["log_l1"].as_f64().unwrap() > 0.0, "{r}");
    assert!(per_frame.iter().all(|f| f["pu_psnr_db"].as_f64().unwrap().is_finite()), "{r}");
    assert_eq!(r["per_frame"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_adds_noise_only_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    write_hdr(&tmp.path().join("hdr"), 2);
    let hdr = s(&tmp.path().join("hdr"));
    let run = |name: &str, extra: &[&str]| {
        let dir = tmp.path().join(name);
        let mut args = vec!["simulate", "--input", &hdr, "--mode", "auto", "--crf-seed", "3", "--out"];
        let d = s(&dir);
        args.push(&d);
        args.extend_from_slice(extra);
        assert_eq!(code(&bracketforge(&args)), 0);
        std::fs::read(dir.join("frame_0001.png")).unwrap()
    };
    let clean_a = run("a", &["--seed", "1"]);
    let clean_b = run("b", &["--seed", "2"]);
    assert_eq!(clean_a, clean_b);
    let noisy = run("c", &["--noise-seed", "9"]);
    assert_ne!(clean_a, noisy);
}

#[test]
fn scanline_and_tonemap() {
    let tmp = tempfile::tempdir().unwrap();
    let f = Frame::from_fn(4, 3, |x, y| [x as f32, y as f32, 0.5]);
    let pfm = tmp.path().join("in/frame_0000.pfm");
    std::fs::create_dir_all(pfm.parent().unwrap()).unwrap();
    hdrio::write_pfm(&f, &pfm).unwrap();

    let csv = tmp.path().join("row.csv");
    assert_eq!(code(&bracketforge(&["scanline", "--frame", &s(&pfm), "--row", "2", "--out", &s(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5, "{text}");
    assert!(text.lines().nth(4).unwrap().starts_with("3,"), "{text}");
    assert_eq!(code(&bracketforge(&["scanline", "--frame", &s(&pfm), "--row", "3", "--out", &s(&csv)])), 2);

    let ldr = tmp.path().join("ldr");
    let out = bracketforge(&["tonemap", "--in", &s(&tmp.path().join("in")), "--out", &s(&ldr)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let png = hdrio::read_png8(ldr.join("frame_0000.png")).unwrap();
    assert_eq!((png.width(), png.height()), (4, 3));
    assert!(png.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    // the curve is monotone along the red ramp
    let red: Vec<f32> = (0..4).map(|x| png.pixel(x, 0)[0]).collect();
    assert!(red.windows(2).all(|w| w[0] <= w[1]) && red[0] < red[3], "{red:?}");
}

#[test]
fn toy_train_and_demo_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"toy.sequences": 2, "toy.batch": 1}"#).unwrap();
    let model = tmp.path().join("toy.mevt");
    let out = bracketforge(&["toy-train", "--steps", "2", "--config", &s(&cfg), "--out", &s(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let demo = tmp.path().join("demo");
    let out = bracketforge(&["toy-demo", "--model", &s(&model), "--steps", "2", "--out", &s(&demo)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(demo.join("demo.json")).unwrap()).unwrap();
    assert_eq!(r["steps"], 2);
    assert!(r["mean_abs_error"].as_f64().unwrap().is_finite());
    for name in ["base", "minus", "plus", "base_target"] {
        assert!(demo.join(name).join("frame_0000.pfm").exists(), "{name}");
    }

    std::fs::write(&model, b"not a model").unwrap();
    let out = bracketforge(&["toy-demo", "--model", &s(&model), "--out", &s(&demo)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_vmm_then_merge_with_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"vmm.count": 4, "vmm.size": 8, "vmm.batch": 32}"#).unwrap();
    let model = tmp.path().join("m.vmm");
    let out = bracketforge(&["train-vmm", "--steps", "3", "--config", &s(&cfg), "--out", &s(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    write_hdr(&tmp.path().join("hdr"), 1);
    let br = tmp.path().join("br");
    let out = bracketforge(&["bracket", "--input", &s(&tmp.path().join("hdr")), "--out", &s(&br)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let merged = tmp.path().join("merged");
    let manifest = s(&br.join("manifest.json"));
    let out = bracketforge(&["merge", "--manifest", &manifest, "--method", "vmm", "--model", &s(&model), "--out", &s(&merged)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(merged.join("frame_0000.pfm").exists());
    // vmm without a model is a usage error
    assert_eq!(code(&bracketforge(&["merge", "--manifest", &manifest, "--method", "vmm", "--out", &s(&merged)])), 1);
}
