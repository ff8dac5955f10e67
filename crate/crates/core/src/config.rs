//! TOML run configuration shared by the CLI and the service.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::{Backbone, DetectorConfig, InjectionSpec};
use crate::data::CsvSchema;
use crate::energy_balance::{ColumnConfig, SurfaceParams};
use crate::evaluation::{BenchmarkConfig, BenchmarkScenario};
use crate::features::DEFAULT_LAG_WINDOW;
use crate::gbdt::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub cadence_minutes: i64,
    pub schema: CsvSchema,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            cadence_minutes: 60,
            schema: CsvSchema::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    pub column: ColumnConfig,
    pub surface: SurfaceParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSettings {
    pub backbone: Backbone,
    /// Starting thresholds and quarantine policy; tuning overwrites the
    /// thresholds.
    pub policy: DetectorConfig,
    /// Share of stations used to fit the predictor; the rest receive
    /// injected faults for threshold tuning.
    pub model_station_fraction: f64,
    pub injection: Vec<InjectionSpec>,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            backbone: Backbone::Gbdt(TrainConfig::default()),
            policy: DetectorConfig::default(),
            model_station_fraction: 0.7,
            injection: InjectionSpec::default_suite(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub store: String,
    pub artifacts: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            store: "rwis-store".into(),
            artifacts: "rwis-artifacts".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Master seed; component seeds are derived from it.
    pub seed: u64,
    pub lag_window: usize,
    pub data: DataConfig,
    pub physics: PhysicsConfig,
    pub correction: TrainConfig,
    pub detector: DetectorSettings,
    pub scenario: BenchmarkScenario,
    pub benchmark: BenchmarkConfig,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            lag_window: DEFAULT_LAG_WINDOW,
            data: DataConfig::default(),
            physics: PhysicsConfig::default(),
            correction: TrainConfig::default(),
            detector: DetectorSettings::default(),
            scenario: BenchmarkScenario::default(),
            benchmark: BenchmarkConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: String| ConfigError::Invalid(e);
        if self.lag_window < 3 {
            // the fallback trend reads three slots
            return Err(bad("lag_window must be at least 3".into()));
        }
        if self.data.cadence_minutes <= 0 {
            return Err(bad("cadence_minutes must be positive".into()));
        }
        self.physics.column.validate().map_err(|e| bad(e.to_string()))?;
        self.physics.surface.validate().map_err(|e| bad(e.to_string()))?;
        self.correction.validate().map_err(|e| bad(e.to_string()))?;
        if let Backbone::Gbdt(c) = &self.detector.backbone {
            c.validate().map_err(|e| bad(e.to_string()))?;
        }
        self.detector.policy.validate().map_err(|e| bad(e.to_string()))?;
        if !(self.detector.model_station_fraction > 0.0 && self.detector.model_station_fraction < 1.0) {
            return Err(bad("model_station_fraction must lie in (0, 1)".into()));
        }
        for s in &self.detector.injection {
            s.validate().map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }

    /// Applies the master seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.correction.seed = crate::derive_seed(seed, 1);
        if let Backbone::Gbdt(c) = &mut self.detector.backbone {
            c.seed = crate::derive_seed(seed, 2);
        }
        self.scenario.seed = seed;
        self.benchmark.correction.seed = crate::derive_seed(seed, 1);
        self.benchmark.detector.seed = crate::derive_seed(seed, 2);
        self
    }
}
