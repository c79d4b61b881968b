use bracketforge_core::bracket::{make_bracket, Slot};
use bracketforge_core::merge::merge_classical;
use bracketforge_core::metrics::{affine_align, log_l1, preprocess_gt, pu_psnr, GtCalibration};
use bracketforge_core::sdrsim::{
    clip_quantize, invert_crf, protocol_exposures, simulate_sdr_input, CrfParams, Exposure, ExposureMode, NoiseParams,
};
use bracketforge_core::{mean_luminance, synth, ColorSpace, Rng};

#[test]
fn noiseless_sdr_linearizes_back_to_exposed_radiance() {
    let hdr = synth::hdr_sequence(24, 16, 3, &Rng::new(1, 0));
    let e = protocol_exposures(&hdr, ExposureMode::Under).unwrap();
    let crf = CrfParams::new(0.9, 0.6).unwrap();
    let noise = NoiseParams::new(0.0, 0.0, 0.5).unwrap();
    let sdr = simulate_sdr_input(&hdr, &Exposure::PerFrame(e.clone()), crf, noise, &Rng::new(2, 0)).unwrap();
    assert_eq!(sdr.exposures, e);
    let lin = invert_crf(&sdr.video, crf).unwrap();
    for (i, (h, l)) in hdr.frames().iter().zip(lin.frames()).enumerate() {
        for (&a, &b) in h.data().iter().zip(l.data()) {
            let x = a as f64 * e[i];
            if x < 1.0 {
                // one 8-bit step in CRF space, mapped back through the inverse
                let y = crf.eval(x);
                let slack = (crf.invert((y + 0.5 / 255.0).min(1.0)) - x).abs() + 1e-6;
                assert!((b as f64 - x).abs() <= slack, "frame {i}: {x} came back as {b}");
            } else {
                assert_eq!(b, 1.0);
            }
        }
    }
}

#[test]
fn over_mode_targets_mean_luminance() {
    let hdr = synth::hdr_sequence(24, 16, 2, &Rng::new(3, 0));
    let e = protocol_exposures(&hdr, ExposureMode::Over).unwrap();
    assert_eq!(e[0], e[1]);
    let m = mean_luminance(&hdr.frames()[0]).unwrap();
    assert!((m * e[0] - 0.70).abs() < 1e-9);
}

#[test]
fn quantized_bracket_scores_far_above_one_exposure() {
    let hdr = synth::hdr_sequence(32, 32, 2, &Rng::new(4, 0));
    let (gt, s) = preprocess_gt(&hdr, &GtCalibration::default()).unwrap();
    let e0 = 0.25 / mean_luminance(&gt.frames()[0]).unwrap();
    let b = make_bracket(&gt, e0, 4.0).unwrap();
    let b = b.with_videos(Slot::ALL.map(|slot| clip_quantize(b.video(slot)))).unwrap();
    let merged = merge_classical(&b).unwrap();
    let clean = pu_psnr(&merged, &gt, 1000.0).unwrap();

    let only_base = b
        .video(Slot::Base)
        .map_frames(ColorSpace::LinearRadiance, |_, f| f.map(|v| (v as f64 / e0) as f32))
        .unwrap();
    let (_, aligned) = affine_align(&only_base, &gt).unwrap();
    let worse = pu_psnr(&aligned, &gt, 1000.0).unwrap();
    assert!(clean > worse + 10.0, "merged {clean} dB, single exposure {worse} dB");
    assert!(log_l1(&merged, &gt, s).unwrap() < log_l1(&aligned, &gt, s).unwrap());
}

#[test]
fn identical_prediction_is_a_perfect_score() {
    let hdr = synth::hdr_sequence(16, 16, 1, &Rng::new(5, 0));
    let (gt, s) = preprocess_gt(&hdr, &GtCalibration::default()).unwrap();
    assert_eq!(pu_psnr(&gt, &gt, 1000.0).unwrap(), f64::INFINITY);
    assert_eq!(log_l1(&gt, &gt, s).unwrap(), 0.0);
}
