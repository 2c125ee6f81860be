use crate::error::{Error, Result};

/// Linear-beta DDPM schedule. Arrays are indexed by step `0..steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior variance of `q(x_{t-1} | x_t, x_0)`; zero at step 0.
    pub posterior_variance: Vec<f64>,
    pub beta_min: f64,
    pub beta_max: f64,
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "beta bounds must satisfy 0 < {beta_min} <= {beta_max} < 1"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let posterior_variance = (0..steps)
        .map(|t| {
            if t == 0 {
                0.0
            } else {
                beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t])
            }
        })
        .collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
        posterior_variance,
        beta_min,
        beta_max,
    })
}

impl NoiseSchedule {
    pub fn default_linear() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// Closed-form forward noising `sqrt(ab) x0 + sqrt(1 - ab) noise`.
    pub fn q_sample(&self, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        if t >= self.steps() {
            return Err(Error::Domain(format!("step {t} outside [0, {})", self.steps())));
        }
        if noise.len() != x0.len() {
            return Err(Error::Shape(format!(
                "noise has {} values, signal {}",
                noise.len(),
                x0.len()
            )));
        }
        let (a, s) = (self.alpha_bar[t].sqrt(), (1.0 - self.alpha_bar[t]).sqrt());
        Ok(x0.iter().zip(noise).map(|(x, n)| a * x + s * n).collect())
    }
}

/// Per-joint refinement weight `1 / (1 + exp(-k (t - T u)))`.
pub fn weight(t: f64, u: f64, steps: usize, k: f64) -> f64 {
    let z = k * (t - steps as f64 * u);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn default_schedule_shape() {
        let s = NoiseSchedule::default_linear();
        assert_eq!(s.steps(), 1000);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(*s.alpha_bar.last().unwrap() < 1e-4);
        assert!((1.0 - s.alpha_bar[0]).sqrt() <= 0.01);
        for t in 0..s.steps() {
            assert!(s.posterior_variance[t] >= 0.0);
            assert!(s.posterior_variance[t] <= 1.0 - s.alpha_bar[t]);
            assert!(s.alpha_bar[t] > 0.0 && s.alpha_bar[t] <= 1.0);
        }
    }

    #[test]
    fn single_step_and_constant_beta() {
        let s = make_schedule(1, 0.01, 0.5).unwrap();
        assert_eq!(s.alpha_bar, vec![1.0 - 0.01]);
        let c = 0.03;
        let s = make_schedule(50, c, c).unwrap();
        for t in 0..50 {
            assert!((s.alpha_bar[t] - (1.0 - c).powi(t as i32 + 1)).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_bounds() {
        assert!(matches!(make_schedule(0, 1e-4, 0.02), Err(Error::Config(_))));
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.03, 0.02).is_err());
        assert!(make_schedule(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn q_sample_examples() {
        let s = NoiseSchedule::default_linear();
        let x0 = vec![1.0, -2.0, 0.5];
        let xt = s.q_sample(&x0, 500, &[0.0; 3]).unwrap();
        for (a, b) in xt.iter().zip(&x0) {
            assert_eq!(*a, s.alpha_bar[500].sqrt() * b);
        }
        let xt = s.q_sample(&x0, 0, &[1.0; 3]).unwrap();
        for (a, b) in xt.iter().zip(&x0) {
            assert!((a - b).abs() <= 0.011 * b.abs().max(1.0));
        }
        assert!(s.q_sample(&x0, 1000, &[0.0; 3]).is_err());
        assert!(s.q_sample(&x0, 3, &[0.0; 2]).is_err());
    }

    #[test]
    fn q_sample_variance_monte_carlo() {
        let s = NoiseSchedule::default_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = 300;
        let x0 = [0.7];
        let n = 10_000;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let xt = s.q_sample(&x0, t, &[e]).unwrap()[0];
            let r = xt - s.alpha_bar[t].sqrt() * x0[0];
            sum2 += r * r;
        }
        let var = sum2 / n as f64;
        let want = 1.0 - s.alpha_bar[t];
        assert!((var - want).abs() / want < 0.05, "{var} vs {want}");
    }

    #[test]
    fn weight_examples() {
        assert!((weight(100.0, 0.05, 1000, 0.1) - 0.9933).abs() < 1e-4);
        assert_eq!(weight(50.0, 0.05, 1000, 0.1), 0.5);
        assert!((weight(0.0, 0.05, 1000, 0.1) - 0.0067).abs() < 1e-4);
        let a = weight(100.0, 0.05, 1000, 0.1);
        let b = weight(0.0, 0.05, 1000, 0.1);
        assert!((a + b - 1.0).abs() < 1e-12);
    }
}
