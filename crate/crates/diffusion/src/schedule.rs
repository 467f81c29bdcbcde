use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("timestep {t} out of range 0..{steps}")]
    Timestep { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

/// Linear beta ramp. The ramp is defined for `reference_steps` steps; with
/// fewer steps each beta is multiplied by `reference_steps / steps` so the
/// total noise reached stays about the same.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reference_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            reference_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: &ScheduleConfig) -> Result<Self, ScheduleError> {
        if config.steps == 0 {
            return Err(ScheduleError::Invalid("zero steps".into()));
        }
        let scale = config.reference_steps.max(config.steps) as f64 / config.steps as f64;
        let (b0, b1) = (config.beta_start * scale, config.beta_end * scale);
        if !(b0 > 0.0 && b0 <= b1 && b1 < 1.0) {
            return Err(ScheduleError::Invalid(format!("betas {b0}..{b1}")));
        }
        let n = config.steps;
        let betas: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    b0
                } else {
                    b0 + (b1 - b0) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, ScheduleError> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(ScheduleError::Timestep { t, steps: self.steps() })
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·ε` for one value.
pub fn q_sample_scalar(x0: f64, alpha_bar: f64, eps: f64) -> f64 {
    alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * eps
}

/// Forward noising of a batch; `t[i]` applies to batch item `i`.
pub fn q_sample<F: Scalar>(
    x0: &Tensor<F>,
    t: &[usize],
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>, ScheduleError> {
    if x0.shape() != eps.shape() {
        return Err(ScheduleError::Shape(format!("{:?} vs {:?}", x0.shape(), eps.shape())));
    }
    if x0.shape().first() != Some(&t.len()) {
        return Err(ScheduleError::Shape(format!(
            "{} timesteps for batch {:?}",
            t.len(),
            x0.shape()
        )));
    }
    let per = x0.len() / t.len().max(1);
    let mut out = Vec::with_capacity(x0.len());
    for (i, &ti) in t.iter().enumerate() {
        let ab = schedule.alpha_bar(ti)?;
        let (a, b) = (F::of(ab.sqrt()), F::of((1.0 - ab).sqrt()));
        for j in i * per..(i + 1) * per {
            out.push(a * x0.data()[j] + b * eps.data()[j]);
        }
    }
    Ok(Tensor::from_vec(x0.shape(), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants() {
        for steps in [1000, 100, 50] {
            let s = NoiseSchedule::new(&ScheduleConfig {
                steps,
                ..Default::default()
            })
            .unwrap();
            assert_eq!(s.steps(), steps);
            assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
            assert!(s.betas.windows(2).all(|w| w[0] <= w[1]));
            assert!(s.alpha_bars.windows(2).all(|w| w[0] > w[1]));
            assert!(s.alpha_bars[0] <= 1.0 && *s.alpha_bars.last().unwrap() > 0.0);
            assert!(
                *s.alpha_bars.last().unwrap() < 1e-3,
                "{steps}: {}",
                s.alpha_bars.last().unwrap()
            );
        }
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(NoiseSchedule::new(&ScheduleConfig {
            steps: 10,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn reference_length_is_unscaled() {
        let s = NoiseSchedule::new(&ScheduleConfig {
            steps: 1000,
            ..Default::default()
        })
        .unwrap();
        assert!((s.betas[0] - 1e-4).abs() < 1e-15);
        assert!((s.betas[999] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn hand_value() {
        assert!((q_sample_scalar(1.0, 0.9, 0.5) - 1.10679).abs() < 1e-5);
        assert_eq!(q_sample_scalar(0.7, 1.0, 123.0), 0.7);
    }

    #[test]
    fn out_of_range() {
        let s = NoiseSchedule::new(&ScheduleConfig::default()).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        assert_eq!(
            q_sample(&x, &[100], &x, &s),
            Err(ScheduleError::Timestep { t: 100, steps: 100 })
        );
    }
}
