//! Uncertainty-guided reverse diffusion.
//!
//! Starting from the (normalized, canonical) estimate, every step predicts
//! the clean motion and pulls each joint toward the estimate with a weight
//! that grows with the step and shrinks with the joint's uncertainty.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::canonical::canonicalize;
use super::denoiser::{Cache, DenoiserModel, POSE_DIM};
use super::schedule::{weight, NoiseSchedule};
use crate::error::{Error, Result};
use crate::heatmap::MAX_UNCERTAINTY;
use crate::motion::MotionSequence;
use crate::skeleton::WHOLE_BODY_JOINTS;

pub const DEFAULT_K: f64 = 0.1;
/// Shortened start step for quick refinement.
pub const FAST_T_START: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub k: f64,
    pub t_start: usize,
    pub seed: u64,
    /// Replaces the sigmoid weight with a constant (testing aid).
    #[serde(default)]
    pub weight_override: Option<f64>,
    #[serde(default)]
    pub step_noise: StepNoise,
}

/// How the guided estimate `m` of each step becomes the next state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepNoise {
    /// `x_{t-1} = m + sqrt(beta_tilde_t) xi`.
    #[default]
    Posterior,
    /// `x_{t-1} = sqrt(ab_{t-1}) m + sqrt(1 - ab_{t-1}) xi`: `m` is noised
    /// back to the marginal of step `t - 1`, the noise level the denoiser
    /// was trained on.
    Marginal,
}

impl std::str::FromStr for StepNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(StepNoise::Marginal),
            "posterior" => Ok(StepNoise::Posterior),
            other => Err(Error::Config(format!("unknown step noise `{other}`"))),
        }
    }
}

impl RefineOptions {
    pub fn new(seed: u64) -> Self {
        RefineOptions {
            k: DEFAULT_K,
            t_start: 1000,
            seed,
            weight_override: None,
            step_noise: StepNoise::default(),
        }
    }
}

/// Window start frames covering `len` frames with 50% overlap.
pub fn window_starts(len: usize, window: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let stride = (window / 2).max(1);
    let mut starts = Vec::new();
    let mut s = 0;
    while s + window < len {
        starts.push(s);
        s += stride;
    }
    starts.push(len - window);
    starts.dedup();
    starts
}

/// Refines one normalized window in place of the sampler loop.
///
/// `x_e` is `n x 171`, `u` is `n x 57`. With the weight forced to 1 the
/// result is `x_e` bit for bit.
pub fn refine_window(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    x_e: &[f64],
    u: &[f64],
    opts: &RefineOptions,
    rng: &mut ChaCha8Rng,
    cache: &mut Cache<f32>,
) -> Vec<f64> {
    let steps = schedule.steps();
    let mut x = x_e.to_vec();
    let mut w = vec![0.0; u.len()];
    for t in (1..=opts.t_start).rev() {
        let s = t - 1;
        let x0 = model.predict_x0(&x, schedule.alpha_bar[s], cache);
        for (wj, uj) in w.iter_mut().zip(u) {
            *wj = opts.weight_override.unwrap_or_else(|| weight(t as f64, *uj, steps, opts.k));
        }
        // Scale and noise taking the guided estimate to step s - 1.
        let (scale, sigma) = match (s, opts.step_noise) {
            (0, _) => (1.0, 0.0),
            (_, StepNoise::Marginal) => (schedule.alpha_bar[s - 1].sqrt(), (1.0 - schedule.alpha_bar[s - 1]).sqrt()),
            (_, StepNoise::Posterior) => (1.0, schedule.posterior_variance[s].sqrt()),
        };
        for i in 0..x.len() {
            let wi = w[i / 3];
            let mean = (1.0 - wi) * x0[i] + wi * x_e[i];
            x[i] = if s > 0 {
                let xi: f64 = StandardNormal.sample(rng);
                scale * mean + sigma * xi
            } else {
                mean
            };
        }
    }
    x
}

fn check_uncertainty(u: &[Vec<f64>]) -> Result<()> {
    for (t, row) in u.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !(0.0..=MAX_UNCERTAINTY + 1e-12).contains(v) {
                return Err(Error::Domain(format!(
                    "uncertainty {v} at frame {t}, joint {j} outside [0, {MAX_UNCERTAINTY}]"
                )));
            }
        }
    }
    Ok(())
}

/// Refines a whole sequence; long sequences are split into overlapping
/// windows and blended with linear (tent) weights.
pub fn refine(estimate: &MotionSequence, model: &DenoiserModel, schedule: &NoiseSchedule, opts: &RefineOptions) -> Result<MotionSequence> {
    model.check_schedule(schedule)?;
    if opts.t_start == 0 || opts.t_start > schedule.steps() {
        return Err(Error::Config(format!(
            "start step {} outside (0, {}]",
            opts.t_start,
            schedule.steps()
        )));
    }
    if !(opts.k > 0.0) {
        return Err(Error::Config(format!("weight slope {} must be > 0", opts.k)));
    }
    let u_rows = estimate
        .uncertainty
        .as_ref()
        .ok_or_else(|| Error::Domain("refinement needs per-joint uncertainty".into()))?;
    check_uncertainty(u_rows)?;
    let (canon, transform) = canonicalize(estimate)?;
    let len = canon.len();
    let x_e = model.normalize(&canon);
    let u: Vec<f64> = u_rows.iter().flatten().copied().collect();

    let window = model.config.window;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cache = model.cache(window);
    let mut acc = vec![0.0; len * POSE_DIM];
    let mut wsum = vec![0.0; len];
    for start in window_starts(len, window) {
        let end = (start + window).min(len);
        let mut xw = x_e[start * POSE_DIM..end * POSE_DIM].to_vec();
        let mut uw = u[start * WHOLE_BODY_JOINTS..end * WHOLE_BODY_JOINTS].to_vec();
        // Short input: hold the last frame, pinned as certain.
        while xw.len() < window * POSE_DIM {
            let last = xw[xw.len() - POSE_DIM..].to_vec();
            xw.extend(last);
            uw.extend(std::iter::repeat(0.0).take(WHOLE_BODY_JOINTS));
        }
        let refined = refine_window(model, schedule, &xw, &uw, opts, &mut rng, &mut cache);
        for f in start..end {
            let i = f - start;
            let tent = (i + 1).min(window - i) as f64;
            wsum[f] += tent;
            for k in 0..POSE_DIM {
                acc[f * POSE_DIM + k] += tent * refined[i * POSE_DIM + k];
            }
        }
    }
    for f in 0..len {
        for k in 0..POSE_DIM {
            acc[f * POSE_DIM + k] /= wsum[f];
        }
    }
    let refined = MotionSequence {
        frames: model.denormalize(&acc),
        fps: canon.fps,
        uncertainty: estimate.uncertainty.clone(),
        up: None,
    };
    transform.invert(&refined, estimate.up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::denoiser::DenoiserConfig;
    use nalgebra::{Rotation3, Vector3};

    fn small_model(window: usize) -> DenoiserModel {
        let cfg = DenoiserConfig {
            layers: 1,
            width: 16,
            heads: 2,
            ffn: 16,
            window,
            ..DenoiserConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = DenoiserModel::initialized(cfg, vec![0.0; POSE_DIM], vec![0.3; POSE_DIM], 1.0, &mut rng).unwrap();
        // Give the untrained net a nonzero output.
        for (i, v) in m.params.iter_mut().enumerate().rev().take(16 * POSE_DIM + POSE_DIM) {
            *v = ((i % 7) as f32 - 3.0) * 0.01;
        }
        m
    }

    fn sequence(len: usize, u: f64) -> MotionSequence {
        use crate::skeleton::{L_HIP, R_HIP};
        let frames = (0..len)
            .map(|t| {
                (0..WHOLE_BODY_JOINTS)
                    .map(|j| match j {
                        R_HIP => Vector3::new(-0.09, 0.9, 0.01 * t as f64),
                        L_HIP => Vector3::new(0.09, 0.9, 0.01 * t as f64),
                        _ => Vector3::new((j as f64).sin() * 0.3, 0.9 + (j as f64).cos() * 0.5, 0.01 * t as f64 + 0.001 * j as f64),
                    })
                    .collect()
            })
            .collect();
        MotionSequence::new(frames, 30.0)
            .unwrap()
            .with_uncertainty(vec![vec![u; WHOLE_BODY_JOINTS]; len])
            .unwrap()
    }

    fn max_diff(a: &MotionSequence, b: &MotionSequence) -> f64 {
        a.frames
            .iter()
            .flatten()
            .zip(b.frames.iter().flatten())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn windows_cover_sequence() {
        assert_eq!(window_starts(100, 196), vec![0]);
        assert_eq!(window_starts(196, 196), vec![0]);
        assert_eq!(window_starts(300, 196), vec![0, 98, 104]);
        assert_eq!(window_starts(392, 196), vec![0, 98, 196]);
    }

    #[test]
    fn forced_unit_weight_returns_estimate_exactly() {
        let model = small_model(8);
        let schedule = NoiseSchedule::default_linear();
        let x_e: Vec<f64> = (0..8 * POSE_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        let u = vec![0.05; 8 * WHOLE_BODY_JOINTS];
        let opts = RefineOptions {
            t_start: 50,
            weight_override: Some(1.0),
            ..RefineOptions::new(1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cache = model.cache(8);
        let out = refine_window(&model, &schedule, &x_e, &u, &opts, &mut rng, &mut cache);
        assert_eq!(out, x_e);

        let seq = sequence(11, 0.05);
        let back = refine(&seq, &model, &schedule, &opts).unwrap();
        assert!(max_diff(&back, &seq) < 1e-9);
    }

    #[test]
    fn deterministic_and_equivariant() {
        let model = small_model(8);
        let schedule = NoiseSchedule::default_linear();
        let opts = RefineOptions {
            t_start: 30,
            ..RefineOptions::new(9)
        };
        let seq = sequence(13, 0.03);
        let a = refine(&seq, &model, &schedule, &opts).unwrap();
        let b = refine(&seq, &model, &schedule, &opts).unwrap();
        assert_eq!(a, b);

        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), 37f64.to_radians());
        let shift = Vector3::new(1.5, 0.2, -3.0);
        let moved = MotionSequence {
            frames: seq.frames.iter().map(|f| f.iter().map(|p| r * p + shift).collect()).collect(),
            ..seq.clone()
        };
        let c = refine(&moved, &model, &schedule, &opts).unwrap();
        let a_moved = MotionSequence {
            frames: a.frames.iter().map(|f| f.iter().map(|p| r * p + shift).collect()).collect(),
            ..a.clone()
        };
        assert!(max_diff(&c, &a_moved) < 1e-6);
    }

    #[test]
    fn untrained_model_stays_bounded() {
        let model = small_model(8);
        let schedule = NoiseSchedule::default_linear();
        let seq = sequence(8, 0.0);
        let out = refine(&seq, &model, &schedule, &RefineOptions::new(2)).unwrap();
        let scale = seq.frames.iter().flatten().map(|p| p.norm()).fold(0.0, f64::max);
        for p in out.frames.iter().flatten() {
            assert!(p.iter().all(|v| v.is_finite()));
            assert!(p.norm() <= 10.0 * scale);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = small_model(8);
        let schedule = NoiseSchedule::default_linear();
        let mut seq = sequence(8, 0.0);
        let opts = RefineOptions::new(0);
        assert!(matches!(
            refine(&seq, &model, &schedule, &RefineOptions { t_start: 0, ..opts }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            refine(&seq, &model, &schedule, &RefineOptions { t_start: 1001, ..opts }),
            Err(Error::Config(_))
        ));
        let other = crate::prior::schedule::make_schedule(500, 1e-4, 0.02).unwrap();
        assert!(matches!(refine(&seq, &model, &other, &opts), Err(Error::Config(_))));
        seq.uncertainty.as_mut().unwrap()[0][0] = 0.2;
        assert!(matches!(refine(&seq, &model, &schedule, &opts), Err(Error::Domain(_))));
        seq.uncertainty = None;
        assert!(refine(&seq, &model, &schedule, &opts).is_err());
    }
}
