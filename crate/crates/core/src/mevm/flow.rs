//! Flow-matching objective, training loop and Euler sampler.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Adam, Module};
use crate::rng::Rng;

use super::data::{ToyDataset, ToySequence};
use super::dit::{RopeMode, ToyDitParams};

/// `t * v + (1 - t) * eps`.
pub fn flow_interpolant(v: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>> {
    if v.len() != eps.len() {
        return Err(Error::Shape(format!("interpolant of {} and {} values", v.len(), eps.len())));
    }
    Ok(v.iter().zip(eps).map(|(a, e)| t * a + (1.0 - t) * e).collect())
}

/// Mean `|pred - (v - eps)|`.
pub fn fm_loss(pred: &[f64], v: &[f64], eps: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(v)
        .zip(eps)
        .map(|((p, a), e)| (p - (a - e)).abs())
        .sum::<f64>()
        / n
}

fn fm_loss_grad(pred: &[f64], v: &[f64], eps: &[f64]) -> Vec<f64> {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(v)
        .zip(eps)
        .map(|((p, a), e)| {
            let r = p - (a - e);
            if r > 0.0 {
                1.0 / n
            } else if r < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Loss and parameter gradient of one `(sequence, t, eps)` draw.
pub fn sample_loss_grad(
    params: &ToyDitParams,
    seq: &ToySequence,
    t: f64,
    eps: &[f64],
    mode: RopeMode,
) -> Result<(f64, ToyDitParams)> {
    let noisy = flow_interpolant(&seq.target, eps, t)?;
    params.check_inputs(&seq.cond, &noisy, t)?;
    let (pred, cache) = params.forward_cached(&seq.cond, &noisy, t, mode);
    let loss = fm_loss(&pred, &seq.target, eps);
    let mut grad = params.zeros_like();
    params.backward(&cache, &fm_loss_grad(&pred, &seq.target, eps), &mut grad);
    Ok((loss, grad))
}

fn noise(rng: &Rng, row: u64, n: usize) -> Vec<f64> {
    (0..n as u64).map(|i| rng.normal(row, i)).collect()
}

/// Flow-matching loss on a fixed grid of timesteps and noise draws.
pub fn toy_eval_loss(params: &ToyDitParams, data: &ToyDataset, mode: RopeMode, draws: usize, seed: u64) -> Result<f64> {
    let rng = Rng::new(seed, 0xe7a1);
    let n = params.config.generated_len();
    let jobs: Vec<(usize, usize)> = (0..data.len()).flat_map(|s| (0..draws).map(move |j| (s, j))).collect();
    let losses = jobs
        .par_iter()
        .map(|&(s, j)| {
            let seq = &data.sequences[s];
            let t = (j as f64 + 0.5) / draws as f64;
            let eps = noise(&rng.substream(s as u64), j as u64, n);
            let noisy = flow_interpolant(&seq.target, &eps, t)?;
            let pred = params.forward(&seq.cond, &noisy, t, mode)?;
            Ok(fm_loss(&pred, &seq.target, &eps))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Train the exposure gates; when false they stay at their initial zero.
    pub learn_gate: bool,
    pub mode: RopeMode,
    pub deterministic: bool,
    /// Timestep/noise draws per sequence in the evaluation loss.
    pub eval_draws: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 4,
            lr: 1e-3,
            seed: 0,
            learn_gate: true,
            mode: RopeMode::ExposureAware,
            deterministic: true,
            eval_draws: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainReport {
    /// Mini-batch loss per step.
    pub losses: Vec<f64>,
    /// Fixed-grid evaluation loss before and after training.
    pub initial_eval: f64,
    pub final_eval: f64,
}

pub fn toy_train(data: &ToyDataset, config: &ToyTrainConfig) -> Result<(ToyDitParams, ToyTrainReport)> {
    toy_train_from(ToyDitParams::init(data.config, config.seed)?, data, config)
}

/// Adam with `t ~ U(0, 1)` and unit Gaussian noise per sample.
pub fn toy_train_from(
    mut params: ToyDitParams,
    data: &ToyDataset,
    config: &ToyTrainConfig,
) -> Result<(ToyDitParams, ToyTrainReport)> {
    if data.is_empty() || config.batch == 0 {
        return Err(Error::InvalidValue("need a non-empty dataset and batch".into()));
    }
    if data.config != params.config {
        return Err(Error::InvalidValue("dataset and model configs differ".into()));
    }
    let eval_seed = config.seed ^ 0x5eed;
    let initial_eval = toy_eval_loss(&params, data, config.mode, config.eval_draws, eval_seed)?;
    let mut opt = Adam::new(config.lr);
    let mut cursor = Rng::new(config.seed, 0xf10).cursor();
    let noise_rng = Rng::new(config.seed, 0xe95);
    let n = params.config.generated_len();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let draws: Vec<(usize, f64)> = (0..config.batch)
            .map(|_| (cursor.below(data.len()), cursor.uniform()))
            .collect();
        let step_rng = noise_rng.substream(step as u64);
        let run = |b: usize| {
            let (s, t) = draws[b];
            let eps = noise(&step_rng, b as u64, n);
            sample_loss_grad(&params, &data.sequences[s], t, &eps, config.mode)
        };
        let (loss, mut grad) = if config.deterministic {
            let parts = (0..config.batch).into_par_iter().map(run).collect::<Result<Vec<_>>>()?;
            let mut it = parts.into_iter();
            let (mut loss, mut grad) = it.next().expect("batch is non-empty");
            for (l, g) in it {
                loss += l;
                grad.add_scaled(&g, 1.0);
            }
            (loss, grad)
        } else {
            (0..config.batch)
                .into_par_iter()
                .map(run)
                .try_reduce_with(|(la, mut ga), (lb, gb)| {
                    ga.add_scaled(&gb, 1.0);
                    Ok((la + lb, ga))
                })
                .expect("batch is non-empty")?
        };
        let scale = 1.0 / config.batch as f64;
        let loss = loss * scale;
        let mut scaled = grad.zeros_like();
        scaled.add_scaled(&grad, scale);
        grad = scaled;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("flow-matching loss {loss}"),
            });
        }
        if config.learn_gate {
            opt.step(&mut params, &grad, |_| false);
        } else {
            opt.step(&mut params, &grad, |name| name.ends_with(".gate"));
        }
        losses.push(loss);
    }
    let final_eval = toy_eval_loss(&params, data, config.mode, config.eval_draws, eval_seed)?;
    Ok((
        params,
        ToyTrainReport {
            losses,
            initial_eval,
            final_eval,
        },
    ))
}

/// Euler integration of the learned velocity from `eps` (t = 0) to data (t = 1).
pub fn toy_sample_from(
    cond: &[f64],
    params: &ToyDitParams,
    steps: usize,
    eps: Vec<f64>,
    mode: RopeMode,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidValue("sampling needs at least one step".into()));
    }
    let mut x = eps;
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let v = params.forward(cond, &x, k as f64 * dt, mode)?;
        for (a, b) in x.iter_mut().zip(&v) {
            *a += dt * b;
        }
    }
    Ok(x)
}

/// Generated `[base, minus, plus]` latents for a CRF-encoded latent sequence.
pub fn toy_sample(cond: &[f64], params: &ToyDitParams, steps: usize, noise_seed: u64) -> Result<Vec<f64>> {
    let eps = noise(&Rng::new(noise_seed, 0x5a3), 0, params.config.generated_len());
    toy_sample_from(cond, params, steps, eps, RopeMode::ExposureAware)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mevm::dit::ToyConfig;

    #[test]
    fn interpolant_examples() {
        let v = [2.0, -1.0];
        let e = [0.0, 3.0];
        assert_eq!(flow_interpolant(&v, &e, 1.0).unwrap(), v.to_vec());
        assert_eq!(flow_interpolant(&v, &e, 0.0).unwrap(), e.to_vec());
        assert_eq!(flow_interpolant(&[2.0], &[0.0], 0.5).unwrap(), vec![1.0]);
        assert!(flow_interpolant(&v, &e[..1], 0.5).is_err());
    }

    #[test]
    fn loss_examples() {
        let v = [1.0, 2.0];
        let e = [0.5, -1.0];
        assert_eq!(fm_loss(&[0.5, 3.0], &v, &e), 0.0);
        assert_eq!(fm_loss(&[0.0, 0.0], &e, &e), 0.0);
        assert_eq!(fm_loss(&[0.0], &[3.0], &[1.0]), 2.0);
    }

    fn tiny() -> ToyDataset {
        let cfg = ToyConfig {
            latent_height: 4,
            latent_width: 4,
            frames_per_segment: 1,
            ..ToyConfig::default()
        };
        ToyDataset::synthetic(cfg, 2, 1).unwrap()
    }

    #[test]
    fn single_euler_step() {
        let d = tiny();
        let p = ToyDitParams::init(d.config, 3).unwrap();
        let cond = &d.sequences[0].cond;
        let eps: Vec<f64> = (0..d.config.generated_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = toy_sample_from(cond, &p, 1, eps.clone(), RopeMode::ExposureAware).unwrap();
        let v = p.forward(cond, &eps, 0.0, RopeMode::ExposureAware).unwrap();
        for ((a, e), b) in x.iter().zip(&eps).zip(&v) {
            assert_eq!(*a, e + b);
        }
        assert!(toy_sample_from(cond, &p, 0, eps, RopeMode::Plain).is_err());
        assert_eq!(toy_sample(cond, &p, 3, 7).unwrap(), toy_sample(cond, &p, 3, 7).unwrap());
    }

    #[test]
    fn training_is_reproducible_and_respects_frozen_gate() {
        let d = tiny();
        let cfg = ToyTrainConfig {
            steps: 3,
            batch: 2,
            learn_gate: false,
            ..ToyTrainConfig::default()
        };
        let (a, ra) = toy_train(&d, &cfg).unwrap();
        let (b, rb) = toy_train(&d, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert!(a.blocks.iter().all(|blk| blk.exposure.gate.iter().all(|&g| g == 0.0)));
        let (c, _) = toy_train(&d, &ToyTrainConfig { learn_gate: true, ..cfg }).unwrap();
        assert!(c.blocks.iter().any(|blk| blk.exposure.gate.iter().any(|&g| g != 0.0)));
    }
}
