//! Pipeline configuration and its flat `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::timebase::FrameGrid;
use crate::{Error, Result};

/// How pooling weights are derived from the segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightingMode {
    /// Softmax-suppressed overlap-aware weights.
    #[default]
    OverlapAware,
    /// Raw activity probabilities (ablation).
    Direct,
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightingMode::OverlapAware => write!(f, "overlap_aware"),
            WeightingMode::Direct => write!(f, "direct"),
        }
    }
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap_aware" => Ok(WeightingMode::OverlapAware),
            "direct" => Ok(WeightingMode::Direct),
            other => Err(Error::InvalidConfig(format!(
                "unknown weighting_mode '{other}' (expected overlap_aware or direct)"
            ))),
        }
    }
}

/// All pipeline tunables.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub frame_step: f64,
    pub window_duration: f64,
    pub hop: f64,
    pub k_max: usize,
    /// Activity threshold for local speakers and final binarization.
    pub tau_active: f64,
    /// Cosine distance above which a mapped local becomes a new speaker.
    pub delta_new: f64,
    /// Minimum activity duration (seconds) for a centroid update.
    pub rho_update: f64,
    /// Softmax sharpness of the overlap-aware weights.
    pub beta: f64,
    /// Confidence exponent of the overlap-aware weights.
    pub gamma: f64,
    /// Output latency in seconds, between hop and window_duration.
    pub latency: f64,
    pub weighting_mode: WeightingMode,
    pub pad_warmup: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_step: 0.016,
            window_duration: 5.0,
            hop: 0.5,
            k_max: 4,
            tau_active: 0.5,
            delta_new: 1.0,
            rho_update: 0.1,
            beta: 10.0,
            gamma: 3.0,
            latency: 0.5,
            weighting_mode: WeightingMode::OverlapAware,
            pad_warmup: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn grid(&self) -> FrameGrid {
        FrameGrid {
            frame_step: self.frame_step,
            window_duration: self.window_duration,
            hop: self.hop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if !(self.tau_active > 0.0 && self.tau_active < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau_active must be in (0, 1), got {}",
                self.tau_active
            )));
        }
        if !(self.delta_new > 0.0 && self.delta_new < 2.0) {
            return Err(Error::InvalidConfig(format!(
                "delta_new must be in (0, 2), got {}",
                self.delta_new
            )));
        }
        if self.rho_update < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "rho_update must be non-negative, got {}",
                self.rho_update
            )));
        }
        if self.gamma < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma must be at least 1, got {}",
                self.gamma
            )));
        }
        if self.latency < self.hop - 1e-12 || self.latency > self.window_duration + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "latency {} must lie within [hop={}, window_duration={}]",
                self.latency, self.hop, self.window_duration
            )));
        }
        Ok(())
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "frame_step = {}\nwindow_duration = {}\nhop = {}\nk_max = {}\n\
             tau_active = {}\ndelta_new = {}\nrho_update = {}\nbeta = {}\n\
             gamma = {}\nlatency = {}\nweighting_mode = {}\npad_warmup = {}\nseed = {}\n",
            self.frame_step,
            self.window_duration,
            self.hop,
            self.k_max,
            self.tau_active,
            self.delta_new,
            self.rho_update,
            self.beta,
            self.gamma,
            self.latency,
            self.weighting_mode,
            self.pad_warmup,
            self.seed
        )
    }

    /// Parse a flat `key = value` config; unknown keys are rejected,
    /// missing keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ParseError {
                line: idx + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| Error::ParseError {
                line: idx + 1,
                message,
            };
            let parse_f64 =
                |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number '{v}'")));
            match key {
                "frame_step" => config.frame_step = parse_f64(value)?,
                "window_duration" => config.window_duration = parse_f64(value)?,
                "hop" => config.hop = parse_f64(value)?,
                "k_max" => {
                    config.k_max = value
                        .parse()
                        .map_err(|_| bad(format!("bad integer '{value}'")))?
                }
                "tau_active" => config.tau_active = parse_f64(value)?,
                "delta_new" => config.delta_new = parse_f64(value)?,
                "rho_update" => config.rho_update = parse_f64(value)?,
                "beta" => config.beta = parse_f64(value)?,
                "gamma" => config.gamma = parse_f64(value)?,
                "latency" => config.latency = parse_f64(value)?,
                "weighting_mode" => config.weighting_mode = value.parse()?,
                "pad_warmup" => {
                    config.pad_warmup = value
                        .parse()
                        .map_err(|_| bad(format!("bad bool '{value}'")))?
                }
                "seed" => {
                    config.seed = value
                        .parse()
                        .map_err(|_| bad(format!("bad integer '{value}'")))?
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_through_text() {
        let c = PipelineConfig {
            tau_active: 0.42,
            latency: 2.5,
            weighting_mode: WeightingMode::Direct,
            seed: 99,
            ..Default::default()
        };
        let parsed = PipelineConfig::from_config_str(&c.to_config_string()).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# comment\n\ntau_active = 0.6\n";
        let c = PipelineConfig::from_config_str(text).unwrap();
        assert_eq!(c.tau_active, 0.6);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_config_str("tau_active = 1.5").is_err());
        assert!(PipelineConfig::from_config_str("latency = 0.1").is_err());
        assert!(PipelineConfig::from_config_str("latency = 9.0").is_err());
        assert!(PipelineConfig::from_config_str("mystery = 1").is_err());
        assert!(PipelineConfig::from_config_str("delta_new = 2.0").is_err());
    }
}
