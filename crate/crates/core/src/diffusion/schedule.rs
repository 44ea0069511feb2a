use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Construction parameters for a linear-beta schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            beta_start: 1e-4,
            beta_end: 0.5,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<VarianceSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Per-step noise coefficients. Timesteps are 1-based in every accessor;
/// storage is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    pub betas: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<VarianceSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let alpha: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(VarianceSchedule {
        betas,
        alpha,
        alpha_bar,
    })
}

impl VarianceSchedule {
    /// Builds a schedule from explicit per-step alphas.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::invalid("alphas must lie in (0, 1]"));
        }
        let betas = alpha.iter().map(|a| 1.0 - a).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }
}
