use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correspondence::{MixConfig, DEFAULT_BETA, DEFAULT_CF_HIGH, DEFAULT_CF_LOW, DEFAULT_POS_WEIGHT};
use crate::diffusion::{DEFAULT_TIMESTEP, DEFAULT_TRAIN_STEPS};
use crate::error::{Error, Result};
use crate::evaluation::{IouMode, DEFAULT_BG_THRESHOLD};
use crate::injection::{InjectionWeight, DEFAULT_BIN_THRESHOLD};

pub const VOC_CLASSES: [&str; 21] = [
    "background",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Toy,
    Recorded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Toy,
    Recorded,
}

/// Run settings, read from a TOML table.
///
/// Keys: `t_s`, `beta`, `cf = [low, high]`, `alpha_inject` (absolute weight;
/// when absent the weight is `alpha_scale * sqrt(d)`), `alpha_scale`,
/// `tau_bin`, `tau_bg`, `backend` and `extractor` (`toy` | `recorded`),
/// `seed`, `workers` (0 = all cores), `attn_resolutions` (square attention
/// grid sides), `pos_weight`, `feature_stride`, `classes` (label order,
/// background first), `iou_mode` (`accumulated` | `per_image`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub t_s: usize,
    pub beta: f32,
    pub cf: [f32; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_inject: Option<f32>,
    pub alpha_scale: f32,
    pub tau_bin: f32,
    pub tau_bg: f32,
    pub backend: BackendKind,
    pub extractor: ExtractorKind,
    pub seed: u64,
    /// Not part of any output: results do not depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    pub attn_resolutions: Vec<usize>,
    pub pos_weight: f32,
    pub feature_stride: usize,
    pub classes: Vec<String>,
    pub iou_mode: IouMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_s: DEFAULT_TIMESTEP,
            beta: DEFAULT_BETA,
            cf: [DEFAULT_CF_LOW, DEFAULT_CF_HIGH],
            alpha_inject: None,
            alpha_scale: 1.0,
            tau_bin: DEFAULT_BIN_THRESHOLD,
            tau_bg: DEFAULT_BG_THRESHOLD,
            backend: BackendKind::Toy,
            extractor: ExtractorKind::Toy,
            seed: 0,
            workers: 0,
            attn_resolutions: vec![64, 32, 16, 8],
            pos_weight: DEFAULT_POS_WEIGHT,
            feature_stride: 1,
            classes: VOC_CLASSES.iter().map(|s| s.to_string()).collect(),
            iou_mode: IouMode::Accumulated,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses a TOML document, applies `key=value` overrides in order and
    /// validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mix(&self) -> MixConfig {
        MixConfig {
            beta: self.beta,
            cf_low: self.cf[0],
            cf_high: self.cf[1],
        }
    }

    pub fn injection_weight(&self) -> InjectionWeight {
        match self.alpha_inject {
            Some(a) => InjectionWeight::Absolute(a),
            None => InjectionWeight::SqrtDimScaled(self.alpha_scale),
        }
    }

    pub fn attention_grids(&self) -> Vec<(usize, usize)> {
        self.attn_resolutions.iter().map(|&r| (r, r)).collect()
    }

    pub fn label_of(&self, class: &str) -> Result<u8> {
        self.classes
            .iter()
            .position(|c| c == class)
            .filter(|&i| i > 0)
            .map(|i| i as u8)
            .ok_or_else(|| Error::Config(format!("unknown foreground class {class:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.t_s == 0 || self.t_s > DEFAULT_TRAIN_STEPS {
            return fail(format!("t_s {} outside 1..={DEFAULT_TRAIN_STEPS}", self.t_s));
        }
        self.mix().validate().map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in [("tau_bin", self.tau_bin), ("tau_bg", self.tau_bg)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{k} {v} outside [0, 1]"));
            }
        }
        let weight = self.alpha_inject.unwrap_or(self.alpha_scale);
        if !weight.is_finite() || weight < 0.0 {
            return fail(format!("injection weight {weight} must be finite and non-negative"));
        }
        if self.attn_resolutions.is_empty() || self.attn_resolutions.contains(&0) {
            return fail("attn_resolutions must be non-empty and positive".into());
        }
        if self.feature_stride == 0 {
            return fail("feature_stride must be positive".into());
        }
        if !self.pos_weight.is_finite() || self.pos_weight < 0.0 {
            return fail(format!("pos_weight {}", self.pos_weight));
        }
        if self.classes.len() < 2 || self.classes.len() > 255 {
            return fail(format!("{} classes; need background plus 1..=254", self.classes.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.t_s, c.beta, c.cf), (400, 0.8, [0.2, 0.6]));
        assert_eq!(c.classes.len(), 21);
        assert_eq!(c.label_of("cat").unwrap(), 8);
        assert!(c.label_of("background").is_err());
    }

    #[test]
    fn file_and_overrides() {
        let text = "t_s = 300\nbeta = 0.9\nbackend = \"recorded\"\n";
        let c = RunConfig::from_toml(text, &["t_s=500".into(), "cf=[0.1, 0.7]".into(), "extractor=recorded".into()]).unwrap();
        assert_eq!(c.t_s, 500);
        assert_eq!(c.beta, 0.9);
        assert_eq!(c.cf, [0.1, 0.7]);
        assert_eq!(c.backend, BackendKind::Recorded);
        assert_eq!(c.extractor, ExtractorKind::Recorded);
    }

    #[test]
    fn rejects_bad_values() {
        for o in ["t_s=0", "t_s=1001", "beta=1.5", "cf=[0.7, 0.2]", "tau_bg=2", "bogus=1", "attn_resolutions=[]", "feature_stride=0", "t_s"] {
            assert!(RunConfig::from_toml("", &[o.into()]).is_err(), "{o}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            alpha_inject: Some(3.0),
            seed: 9,
            ..Default::default()
        };
        let back = RunConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, RunConfig { workers: 0, ..c });
    }

    #[test]
    fn workers_never_serialized() {
        let c = RunConfig { workers: 4, ..Default::default() };
        assert!(!c.to_toml().contains("workers"));
    }
}
