use serde::{Deserialize, Serialize};

use super::search::CorrespondenceMap;
use crate::error::{Error, Result};
use crate::types::SoftMask;

pub const DEFAULT_BETA: f32 = 0.8;
pub const WEAK_BETA: f32 = 0.9;
pub const DEFAULT_CF_LOW: f32 = 0.2;
pub const DEFAULT_CF_HIGH: f32 = 0.6;

/// Mixing weight and the confusion band it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub beta: f32,
    pub cf_low: f32,
    pub cf_high: f32,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            cf_low: DEFAULT_CF_LOW,
            cf_high: DEFAULT_CF_HIGH,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f32| v.is_finite() && (0.0..=1.0).contains(&v);
        if !unit(self.beta) {
            return Err(Error::invalid(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !unit(self.cf_low) || !unit(self.cf_high) || self.cf_low > self.cf_high {
            return Err(Error::invalid(format!(
                "confusion band [{}, {}] is not a sub-interval of [0, 1]",
                self.cf_low, self.cf_high
            )));
        }
        Ok(())
    }

    pub fn in_band(&self, v: f32) -> bool {
        v >= self.cf_low && v <= self.cf_high
    }
}

/// Pulls confused pixels toward the probability at their matched location:
/// `S*[j] = beta S[j] + (1 - beta) S[delta_j]` where `cf_low <= S[j] <= cf_high`,
/// unchanged elsewhere.
pub fn mix_probabilities(mask: &SoftMask, delta: &CorrespondenceMap, cfg: &MixConfig) -> Result<SoftMask> {
    cfg.validate()?;
    if mask.dims() != delta.grid() {
        return Err(Error::shape(format!(
            "mask {:?} vs correspondence {:?}",
            mask.dims(),
            delta.grid()
        )));
    }
    let s = mask.values();
    let beta = f64::from(cfg.beta);
    let out = s
        .iter()
        .zip(delta.indices())
        .map(|(&v, &j)| {
            if cfg.in_band(v) {
                let other = s[j];
                let mixed = (beta * f64::from(v) + (1.0 - beta) * f64::from(other)) as f32;
                // Rounding must not swallow a move toward a different value.
                if mixed == v && other != v && beta < 1.0 {
                    if other > v {
                        v.next_up()
                    } else {
                        v.next_down()
                    }
                } else {
                    mixed.clamp(0.0, 1.0)
                }
            } else {
                v
            }
        })
        .collect();
    let (h, w) = mask.dims();
    SoftMask::new(h, w, out)
}
