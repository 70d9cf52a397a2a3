use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 1e-2;

/// Linear DDPM schedule. Index `t - 1` holds the values for step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// `β_t = β_start + (t - 1) / (T - 1) · (β_end - β_start)` for `t = 1..=T`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::BadScheduleParams("need at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::BadScheduleParams(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else if i == steps - 1 {
                    beta_end
                } else {
                    beta_start + i as f64 / (steps - 1) as f64 * (beta_end - beta_start)
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior variance `σ_t² = β_t (1 - ᾱ_{t-1}) / (1 - ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Closed-form forward sample `g_t = √ᾱ_t g_0 + √(1 - ᾱ_t) ε`.
    pub fn q_sample(&self, g0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check(t)?;
        if eps.len() != g0.len() {
            return Err(Error::DimensionMismatch { expected: g0.len(), got: eps.len() });
        }
        let (a, b) = (self.alpha_bar(t).sqrt(), (1.0 - self.alpha_bar(t)).sqrt());
        Ok(g0.iter().zip(eps).map(|(g, e)| a * g + b * e).collect())
    }

    /// Reverse-step mean `(g_t - β_t / √(1 - ᾱ_t) · ε̂) / √α_t`.
    pub fn posterior_mean(&self, g_t: &[f64], t: usize, eps_hat: &[f64]) -> Result<Vec<f64>> {
        self.check(t)?;
        if eps_hat.len() != g_t.len() {
            return Err(Error::DimensionMismatch { expected: g_t.len(), got: eps_hat.len() });
        }
        let c = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt();
        let inv = 1.0 / self.alpha(t).sqrt();
        Ok(g_t.iter().zip(eps_hat).map(|(g, e)| (g - c * e) * inv).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 100);
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(100), 1e-2);
        assert!(s.beta.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.02, 0.5).unwrap();
        assert_eq!(s.beta, vec![0.02]);
        assert_eq!(s.alpha_bar(1), 0.98);
    }

    #[test]
    fn alpha_bar_recursion_is_exact() {
        let s = NoiseSchedule::default();
        for t in 1..=100 {
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * (1.0 - s.beta(t)));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(100) > 0.0);
    }

    #[test]
    fn bad_params() {
        for (t, a, b) in [(0, 1e-4, 1e-2), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)] {
            assert!(matches!(NoiseSchedule::linear(t, a, b), Err(Error::BadScheduleParams(_))));
        }
    }

    #[test]
    fn q_sample_examples() {
        let s = NoiseSchedule::default();
        let g0 = [0.5, -1.0, 2.0];
        let gt = s.q_sample(&g0, 40, &[0.0; 3]).unwrap();
        for (a, b) in gt.iter().zip(g0) {
            assert_eq!(*a, s.alpha_bar(40).sqrt() * b);
        }
        let tiny = NoiseSchedule::linear(10, 1e-12, 1e-12).unwrap();
        let g1 = tiny.q_sample(&g0, 1, &[1.0, 1.0, 1.0]).unwrap();
        for (a, b) in g1.iter().zip(g0) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(matches!(s.q_sample(&g0, 1, &[0.0; 2]), Err(Error::DimensionMismatch { .. })));
        assert!(s.q_sample(&g0, 0, &[0.0; 3]).is_err());
        assert!(s.q_sample(&g0, 101, &[0.0; 3]).is_err());
    }

    #[test]
    fn posterior_variance_vanishes_at_first_step() {
        let s = NoiseSchedule::default();
        assert_eq!(s.posterior_variance(1), 0.0);
        assert!(s.posterior_variance(50) > 0.0 && s.posterior_variance(50) < s.beta(50));
    }
}
