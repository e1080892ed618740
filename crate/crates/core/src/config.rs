//! Experiment configuration.
//!
//! The file is TOML with the sections `[data]`, `[model]`, `[train]`,
//! `[turbulence]` and `[eval]`. Every key is required; `Config::default()`
//! holds the documented defaults and `Config::to_toml` renders them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{GeneratorConfig, TurbulenceLayer};
use crate::error::{Result, StuaError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub turbulence: TurbulenceConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// CSV inputs, read when `source = "csv"`. Relative paths resolve
    /// against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_csv: Option<String>,
    /// Interval length for CSV ingestion.
    pub interval_minutes: u32,
    /// Synthetic generator settings, the `[data.generator]` table.
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Intervals per period.
    pub p: usize,
    /// Number of daily periods.
    pub q: usize,
    /// Weight of the gravity term in the adjacency.
    pub rho: f64,
    /// Intensity floor inside the gravity log.
    pub flow_floor: f64,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Period embedding width `L_e`.
    pub embed_dim: usize,
    /// Context field embedding width `L_ce`.
    pub field_dim: usize,
    /// Pairwise interaction width `L_ie`.
    pub interaction_dim: usize,
    pub fm_gcn_layers: usize,
    pub fm_gcn_hidden: usize,
    pub c2_layers: usize,
    pub c2_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    /// Enables the data-quality term of the loss.
    pub quality_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceConfig {
    pub layers: Vec<TurbulenceLayer>,
    pub noisy_fraction: f64,
    pub ood_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mape_floor: f64,
    /// Independent OOD corruptions drawn per test window.
    pub ood_draws: usize,
    pub plots: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 6,
            q: 3,
            rho: 0.6,
            flow_floor: 1.0,
            gcn_layers: 2,
            gcn_hidden: 16,
            lstm_layers: 2,
            lstm_hidden: 16,
            embed_dim: 8,
            field_dim: 4,
            interaction_dim: 4,
            fm_gcn_layers: 2,
            fm_gcn_hidden: 8,
            c2_layers: 2,
            c2_hidden: 8,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            decay_rate: 0.98,
            decay_every: 10,
            epochs: 200,
            batch_size: 8,
            train_fraction: 0.6,
            test_fraction: 0.3,
            val_fraction: 0.1,
            seed: 42,
            quality_enabled: true,
        }
    }
}

impl Default for TurbulenceConfig {
    fn default() -> Self {
        Self {
            layers: vec![
                TurbulenceLayer::Pure,
                TurbulenceLayer::Noisy,
                TurbulenceLayer::Ood,
            ],
            noisy_fraction: 0.05,
            ood_fraction: 0.5,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mape_floor: 1.0,
            ood_draws: 5,
            plots: true,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            regions_csv: None,
            mobility_csv: None,
            context_csv: None,
            interval_minutes: 60,
            generator: GeneratorConfig::default(),
        }
    }
}


impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| StuaError::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative csv paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| StuaError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for slot in [
            &mut cfg.data.regions_csv,
            &mut cfg.data.mobility_csv,
            &mut cfg.data.context_csv,
        ] {
            if let Some(p) = slot.as_mut() {
                if Path::new(p.as_str()).is_relative() {
                    *p = base.join(p.as_str()).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable FNV-1a hash of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_toml().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(StuaError::InvalidConfig(msg));
        let m = &self.model;
        if m.p == 0 {
            return bad("model.p must be positive".into());
        }
        if m.rho < 0.0 || !m.rho.is_finite() {
            return bad("model.rho must be finite and non-negative".into());
        }
        if m.flow_floor <= 0.0 {
            return bad("model.flow_floor must be positive".into());
        }
        for (key, v) in [
            ("model.gcn_layers", m.gcn_layers),
            ("model.gcn_hidden", m.gcn_hidden),
            ("model.lstm_layers", m.lstm_layers),
            ("model.lstm_hidden", m.lstm_hidden),
            ("model.embed_dim", m.embed_dim),
            ("model.field_dim", m.field_dim),
            ("model.interaction_dim", m.interaction_dim),
            ("model.fm_gcn_layers", m.fm_gcn_layers),
            ("model.fm_gcn_hidden", m.fm_gcn_hidden),
            ("model.c2_layers", m.c2_layers),
            ("model.c2_hidden", m.c2_hidden),
        ] {
            if v == 0 {
                return bad(format!("{key} must be positive"));
            }
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0) {
            return bad("train.learning_rate must be positive".into());
        }
        if !(t.decay_rate > 0.0) || t.decay_every == 0 {
            return bad("train.decay_rate and train.decay_every must be positive".into());
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        let fractions = [t.train_fraction, t.test_fraction, t.val_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("train fractions must lie in [0, 1] and sum to 1".into());
        }
        let tb = &self.turbulence;
        if tb.layers.is_empty() {
            return bad("turbulence.layers must not be empty".into());
        }
        if tb.noisy_fraction < 0.0 || tb.ood_fraction < 0.0 {
            return bad("turbulence fractions must be non-negative".into());
        }
        if self.eval.mape_floor < 0.0 {
            return bad("eval.mape_floor must be non-negative".into());
        }
        if self.data.interval_minutes == 0 || 1440 % self.data.interval_minutes != 0 {
            return bad("data.interval_minutes must divide a day".into());
        }
        if self.data.source == DataSource::Csv {
            for (key, v) in [
                ("data.regions_csv", &self.data.regions_csv),
                ("data.mobility_csv", &self.data.mobility_csv),
                ("data.context_csv", &self.data.context_csv),
            ] {
                if v.is_none() {
                    return bad(format!("missing field `{key}` for csv source"));
                }
            }
        }
        self.data.generator.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn missing_key_is_named() {
        let text = Config::default()
            .to_toml()
            .replace("learning_rate = 0.001\n", "");
        let err = Config::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, StuaError::InvalidConfig(_)));
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut cfg = Config::default();
        cfg.train.val_fraction = 0.2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reference_defaults() {
        let cfg = Config::default();
        assert_eq!((cfg.model.p, cfg.model.q, cfg.model.rho), (6, 3, 0.6));
        assert_eq!((cfg.model.gcn_layers, cfg.model.lstm_layers), (2, 2));
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!((cfg.train.decay_rate, cfg.train.decay_every), (0.98, 10));
        assert_eq!(
            (
                cfg.train.train_fraction,
                cfg.train.test_fraction,
                cfg.train.val_fraction
            ),
            (0.6, 0.3, 0.1)
        );
    }
}
