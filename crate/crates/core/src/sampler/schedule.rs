use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise schedule: linear from `alpha1` at step 1 to `beta1` at step
/// `L1`, then `alpha2` for `L2` steps, then `alpha3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealingSchedule {
    /// Total iterations L.
    #[serde(rename = "L")]
    pub steps: usize,
    #[serde(rename = "L1")]
    pub phase1: usize,
    #[serde(rename = "L2")]
    pub phase2: usize,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl AnnealingSchedule {
    /// Remask fractions: L=20, L1=10, L2=10, 0.9 → 0.1, then 0.125, then 0.0625.
    pub fn mask_default() -> Self {
        AnnealingSchedule { steps: 20, phase1: 10, phase2: 10, alpha1: 0.9, beta1: 0.1, alpha2: 0.125, alpha3: 0.0625 }
    }

    /// Noise levels: 0.4 → 0.02 over 10 steps, 0.01 for 5, then 0.
    pub fn noise_default() -> Self {
        AnnealingSchedule { steps: 20, phase1: 10, phase2: 5, alpha1: 0.4, beta1: 0.02, alpha2: 0.01, alpha3: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase1 < 1 {
            return Err(Error::InvalidArgument("schedule phase L1 must be at least 1".into()));
        }
        if self.phase1 + self.phase2 > self.steps {
            return Err(Error::InvalidArgument(format!(
                "schedule phases L1={} + L2={} exceed L={}",
                self.phase1, self.phase2, self.steps
            )));
        }
        for v in [self.alpha1, self.beta1, self.alpha2, self.alpha3] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("schedule level {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Level at 1-based step `i`.
    pub fn level(&self, i: usize) -> Result<f64> {
        if i < 1 {
            return Err(Error::InvalidArgument("schedule steps are 1-based".into()));
        }
        self.validate()?;
        let (l1, l2) = (self.phase1, self.phase2);
        Ok(if i <= l1 {
            if l1 == 1 {
                self.alpha1
            } else {
                self.beta1 + (l1 - i) as f64 / (l1 - 1) as f64 * (self.alpha1 - self.beta1)
            }
        } else if i <= l1 + l2 {
            self.alpha2
        } else {
            self.alpha3
        })
    }
}

/// Tokens to remask at step `i`: `floor(N·level + 0.5)`, clamped so that
/// preserved positions are never remasked.
pub fn mask_count(i: usize, sched: &AnnealingSchedule, n: usize, preserved: usize) -> Result<usize> {
    if preserved > n {
        return Err(Error::InvalidArgument(format!("{preserved} preserved of {n} positions")));
    }
    let x = n as f64 * sched.level(i)?;
    let count = (x + 0.5).floor() as usize;
    Ok(count.min(n - preserved))
}

/// σ at step `i`.
pub fn noise_level(i: usize, sched: &AnnealingSchedule) -> Result<f64> {
    sched.level(i)
}
