use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::{normalization_stats, preconditioning, DenoiserConfig, DenoiserModel, POSE_DIM};
use super::canonical::canonicalize;
use super::refine::window_starts;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::motion::MotionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub seed: u64,
    #[serde(default)]
    pub weighting: LossWeighting,
}

/// Per-step weight on `|x0 - D|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossWeighting {
    /// Plain x0 objective.
    Uniform,
    /// Divide by `c_out^2`, i.e. unit-variance target for the network output.
    #[default]
    Balanced,
}

impl std::str::FromStr for LossWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(LossWeighting::Uniform),
            "balanced" => Ok(LossWeighting::Balanced),
            other => Err(Error::Config(format!("unknown loss weighting `{other}`"))),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: 4,
            width: 256,
            heads: 4,
            ffn: 512,
            epochs: 30,
            batch_size: 2,
            learning_rate: 5e-4,
            warmup_steps: 50,
            grad_clip: 1.0,
            seed: 0,
            weighting: LossWeighting::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-element loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.epoch_losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let (b1, b2) = (Self::B1 as f32, Self::B2 as f32);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let (inv_c2, eps) = (1.0 / c2, Self::EPS as f32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
        }
    }
}

/// Linear warmup, then cosine decay to zero at the last step.
fn lr_factor(step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * (step - warmup) as f64 / span).cos())
}

/// One loss/gradient evaluation of `lambda(t) |x0 - D(x_t, t)|^2` on a window.
/// Returns the mean per-element loss and accumulates `scale * dL/dparams`.
fn sample_step(
    model: &DenoiserModel,
    cache: &mut super::denoiser::Cache<f32>,
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
    grads: &mut [f32],
    scale: f64,
    weighting: LossWeighting,
) -> Result<f64> {
    let ab = schedule.alpha_bar[t];
    let x_t = schedule.q_sample(x0, t, noise)?;
    let (_, _, c_out) = preconditioning(ab, model.sigma_data);
    let d = model.predict_x0(&x_t, ab, cache);
    let lambda = match weighting {
        LossWeighting::Uniform => 1.0,
        LossWeighting::Balanced => 1.0 / (c_out * c_out),
    };
    let n = x0.len() as f64;
    let mut loss = 0.0;
    let mut dout = Vec::with_capacity(x0.len());
    for (p, y) in d.iter().zip(x0) {
        let r = p - y;
        loss += lambda * r * r;
        dout.push((2.0 * lambda * r * c_out / n * scale) as f32);
    }
    model.net.backward(&model.params, cache, &dout, grads);
    Ok(loss / n)
}

/// Cuts sequences into canonical windows of `window` frames, half
/// overlapping. Sequences shorter than a window are rejected.
pub fn prepare_dataset(sequences: &[MotionSequence], window: usize) -> Result<Vec<MotionSequence>> {
    let mut out = Vec::new();
    for (i, seq) in sequences.iter().enumerate() {
        if seq.len() < window {
            return Err(Error::Shape(format!(
                "training sequence {i} has {} frames, fewer than the window of {window}",
                seq.len()
            )));
        }
        for start in window_starts(seq.len(), window) {
            let part = MotionSequence {
                frames: seq.frames[start..start + window].to_vec(),
                fps: seq.fps,
                uncertainty: None,
                up: seq.up,
            };
            out.push(canonicalize(&part)?.0);
        }
    }
    Ok(out)
}

/// Trains an x0-predicting denoiser on canonical windows of equal length.
///
/// Deterministic for a given seed: shuffling, step and noise draws all come
/// from one ChaCha stream and gradients are reduced in a fixed order.
pub fn train_denoiser(
    dataset: &[MotionSequence],
    config: &TrainConfig,
    schedule: &NoiseSchedule,
    mut progress: impl FnMut(usize, f64),
) -> Result<(DenoiserModel, TrainReport)> {
    let window = dataset
        .first()
        .ok_or_else(|| Error::Config("training dataset is empty".into()))?
        .len();
    if let Some(bad) = dataset.iter().find(|s| s.len() != window) {
        return Err(Error::Shape(format!(
            "training windows must share one length: {window} vs {}",
            bad.len()
        )));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let dcfg = DenoiserConfig {
        layers: config.layers,
        width: config.width,
        heads: config.heads,
        ffn: config.ffn,
        window,
        steps: schedule.steps(),
        beta_min: schedule.beta_min,
        beta_max: schedule.beta_max,
        seed: config.seed,
    };
    dcfg.check()?;
    let (mean, std) = normalization_stats(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DenoiserModel::initialized(dcfg, mean, std, 1.0, &mut rng)?;
    let data: Vec<Vec<f64>> = dataset.iter().map(|s| model.normalize(s)).collect();
    let total: f64 = data.iter().flatten().map(|v| v * v).sum();
    model.sigma_data = (total / (data.len() * window * POSE_DIM) as f64).sqrt().max(1e-3);
    model.training = serde_json::to_string(config).expect("config serializes");

    let mut cache = model.cache(window);
    let mut grads = vec![0f32; model.params.len()];
    let mut adam = Adam::new(model.params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let total_steps = config.epochs * data.len().div_ceil(config.batch_size);
    let mut noise = vec![0.0; window * POSE_DIM];
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(config.epochs),
        steps: 0,
    };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let t = rng.random_range(0..schedule.steps());
                for v in noise.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                batch_loss += sample_step(&model, &mut cache, &data[i], t, schedule, &noise, &mut grads, 1.0 / batch.len() as f64, config.weighting)?;
            }
            let gnorm = grads.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt();
            if !batch_loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step: report.steps,
                    loss: batch_loss / batch.len() as f64,
                });
            }
            if gnorm > config.grad_clip {
                let s = (config.grad_clip / gnorm) as f32;
                grads.iter_mut().for_each(|g| *g *= s);
            }
            adam.update(&mut model.params, &grads, config.learning_rate * lr_factor(report.steps, config.warmup_steps, total_steps));
            report.steps += 1;
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / data.len() as f64;
        report.epoch_losses.push(mean_loss);
        progress(epoch, mean_loss);
    }
    Ok((model, report))
}
