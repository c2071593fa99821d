use crate::error::{Error, Result};

/// Cumulative signal-retention coefficients `alpha_bar[t]` for `t = 0..=T`.
///
/// `alpha_bar[t]` is the running product of `1 - beta_s` for `s = 1..=t`
/// (the DDPM cumulative product), so the forward process reads
/// `x_t = sqrt(alpha_bar[t]) x_0 + sqrt(1 - alpha_bar[t]) eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl NoiseSchedule {
    /// Linear betas from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::invalid(format!(
                "betas must satisfy 0 < {beta_start} <= {beta_end} < 1"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(num_steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 0..num_steps {
            let beta = if num_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * s as f64 / (num_steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// Builds a schedule from explicit cumulative coefficients.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::invalid("schedule needs alpha_bar[0..=T] with T >= 1"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::invalid(format!("alpha_bar[0] = {} must be 1", alpha_bar[0])));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return Err(Error::invalid(format!(
                    "alpha_bar must be strictly decreasing in (0, 1]: alpha_bar[{}] = {}",
                    t + 1,
                    w[1]
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or_else(|| {
            Error::invalid(format!("timestep {t} outside 0..={}", self.num_steps()))
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_monotone_with_unit_start() {
        let s = NoiseSchedule::default();
        assert_eq!(s.num_steps(), 1000);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!(s.values().windows(2).all(|w| w[1] < w[0]));
        assert!(s.values().iter().all(|&a| a > 0.0 && a <= 1.0));
        // 1 - beta_1
        assert!((s.alpha_bar(1).unwrap() - 0.9999).abs() < 1e-15);
        assert!(s.alpha_bar(1001).is_err());
    }

    #[test]
    fn default_tail_matches_product() {
        // Independent evaluation of prod(1 - beta_s) in log space.
        let s = NoiseSchedule::default();
        let log: f64 = (0..1000)
            .map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln())
            .sum();
        assert!((s.alpha_bar(1000).unwrap() - log.exp()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_monotone() {
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.5]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![0.9, 0.5]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.0]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.81, 0.25]).is_ok());
    }
}
