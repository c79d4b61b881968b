use bracketforge_core::mevm::{RopeConfig, RopeMode, ToyConfig, ToyDitParams};
use bracketforge_core::nn::Module;
use bracketforge_core::Rng;

fn small() -> ToyConfig {
    ToyConfig {
        latent_height: 4,
        latent_width: 4,
        frames_per_segment: 2,
        d_model: 24,
        heads: 2,
        mlp_hidden: 32,
        d_gamma: 8,
        rope: RopeConfig::new(12).unwrap(),
        ..ToyConfig::default()
    }
}

fn perturb(params: &mut ToyDitParams, ti: usize, j: usize, delta: f64) {
    let mut ts = Vec::new();
    params.tensors_mut(&mut ts);
    ts[ti][j] += delta;
}

fn objective(p: &ToyDitParams, cond: &[f64], noisy: &[f64], t: f64, mode: RopeMode, w: &[f64]) -> f64 {
    let v = p.forward(cond, noisy, t, mode).unwrap();
    v.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Central differences against the analytic vector-Jacobian product.
fn check_gradients(params: &mut ToyDitParams, mode: RopeMode, seed: u64) {
    let cfg = params.config;
    let r = Rng::new(seed, 0);
    let cond: Vec<f64> = (0..cfg.cond_len()).map(|i| r.uniform(0, i as u64)).collect();
    let noisy: Vec<f64> = (0..cfg.generated_len()).map(|i| r.normal(1, i as u64)).collect();
    let w: Vec<f64> = (0..cfg.generated_len()).map(|i| r.normal(2, i as u64)).collect();
    let t = 0.3;
    let grad = params.velocity_vjp(&cond, &noisy, t, mode, &w).unwrap();
    let grads: Vec<Vec<f64>> = grad.named_tensors().iter().map(|t| t.data.to_vec()).collect();
    let names: Vec<String> = params.named_tensors().iter().map(|t| t.name.clone()).collect();

    let h = 1e-5;
    let mut c = Rng::new(seed, 1).cursor();
    let mut checked = 0;
    for (ti, name) in names.iter().enumerate() {
        let n = grads[ti].len();
        for _ in 0..n.min(6) {
            let j = c.below(n);
            perturb(params, ti, j, h);
            let up = objective(params, &cond, &noisy, t, mode, &w);
            perturb(params, ti, j, -2.0 * h);
            let down = objective(params, &cond, &noisy, t, mode, &w);
            perturb(params, ti, j, h);
            let fd = (up - down) / (2.0 * h);
            let g = grads[ti][j];
            // absolute floor covers the ~1e-10 roundoff of the difference quotient
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()) + 1e-8, "{name}[{j}]: analytic {g:e}, finite difference {fd:e}");
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} entries checked");
}

#[test]
fn toy_velocity_gradients_match_finite_differences() {
    let mut p = ToyDitParams::init(small(), 3).unwrap();
    check_gradients(&mut p, RopeMode::Plain, 10);
}

#[test]
fn gradients_with_open_exposure_gates() {
    let mut p = ToyDitParams::init(small(), 4).unwrap();
    let mut c = Rng::new(5, 0).cursor();
    for b in &mut p.blocks {
        for g in &mut b.exposure.gate {
            *g = 0.5 * c.normal();
        }
    }
    check_gradients(&mut p, RopeMode::ExposureAware, 11);
}

#[test]
fn closed_gates_get_gradient_but_projection_does_not() {
    let p = ToyDitParams::init(small(), 6).unwrap();
    let cfg = p.config;
    let cond = vec![0.3; cfg.cond_len()];
    let noisy: Vec<f64> = (0..cfg.generated_len()).map(|i| (i as f64 * 0.7).sin()).collect();
    let w = vec![1.0; cfg.generated_len()];
    let g = p.velocity_vjp(&cond, &noisy, 0.5, RopeMode::ExposureAware, &w).unwrap();
    for b in &g.blocks {
        assert!(b.exposure.gate.iter().any(|&x| x != 0.0));
        assert!(b.exposure.proj.w.iter().all(|&x| x == 0.0));
    }
}
