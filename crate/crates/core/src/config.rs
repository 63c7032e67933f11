//! Run configuration: a flat `key = value` file with CLI overrides.
//!
//! Defaults mirror the deployed parameter set (15 s collection every 60 s,
//! 15-window refinement batches, hourly journals). Secrets never live in the
//! file; provider and map API keys are named environment variables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::llm::ledger::{parse_price, UnitPrices};
use crate::llm::provider::{HallucinatingProvider, PipelineMock, ReplayProvider};
use crate::llm::{Gateway, PromptCatalog, ProviderBinding, RetryPolicy, Role};
use crate::motion::MotionThresholds;
use crate::trace::DutyCycleConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {0}", path = .1.display())]
    Io(#[source] std::io::Error, PathBuf),
    #[error("config line {0}: expected `key = value`, got {1:?}")]
    Syntax(usize, String),
    #[error("config key {0}: {1}")]
    BadValue(String, String),
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("provider role {0} has no binding; set provider.{0}.kind")]
    MissingRole(String),
    #[error("environment variable {1} for {0} is not set")]
    MissingSecret(String, String),
    #[error("{0}")]
    Invalid(String),
}

/// How a provider role is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Replay,
    Mock,
}

/// One role's configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Environment variable naming the API secret.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub price_in: String,
    pub price_out: String,
    /// Optional seeded hallucination injection for mock providers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hallucinate_rate: Option<f64>,
    pub hallucinate_seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            model: "offline-mock".to_string(),
            endpoint: None,
            api_key_env: None,
            price_in: "0.15".to_string(),
            price_out: "0.60".to_string(),
            hallucinate_rate: None,
            hallucinate_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapProviderKind {
    Live,
    Fixture,
}

/// Effective run configuration. Every field has a config-file key; flags
/// override file values.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub duty: DutyCycleConfig,
    /// Refinement batch size n.
    pub batch_size: usize,
    /// Journaling horizon in seconds.
    pub horizon_seconds: f64,
    pub utc_offset_minutes: i32,
    /// Keep every k-th window (1 = keep all).
    pub sampling_stride: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub cache_path: PathBuf,
    pub map_provider: MapProviderKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_fixture_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_style: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_api_key_env: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_fixture_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_catalog: Option<PathBuf>,
    pub providers: BTreeMap<String, ProviderConfig>,
    #[serde(skip)]
    pub motion_thresholds: MotionThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut providers = BTreeMap::new();
        for role in Role::ALL {
            providers.insert(role.as_str().to_string(), ProviderConfig::default());
        }
        RunConfig {
            duty: DutyCycleConfig::default(),
            batch_size: 15,
            horizon_seconds: 3600.0,
            utc_offset_minutes: 0,
            sampling_stride: 1,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            cache_path: PathBuf::from("context-cache.tsv"),
            map_provider: MapProviderKind::Fixture,
            map_fixture_dir: None,
            map_endpoint: None,
            map_style: None,
            map_api_key_env: None,
            llm_fixture_dir: None,
            prompt_catalog: None,
            providers,
            motion_thresholds: MotionThresholds::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::BadValue(key.to_string(), e.to_string()))
}

impl RunConfig {
    /// Loads a flat `key = value` config file. Blank lines and `#` comments
    /// are ignored; unknown keys are errors.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e, path.to_path_buf()))?;
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax(idx + 1, raw.to_string()))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment (file line or CLI override).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "duty.collect_seconds" => self.duty.collect_duration_t = parse_num(key, value)?,
            "duty.period_seconds" => self.duty.period_big_t = parse_num(key, value)?,
            "batch.size" => self.batch_size = parse_num(key, value)?,
            "horizon.seconds" => self.horizon_seconds = parse_num(key, value)?,
            "time.utc_offset_minutes" => self.utc_offset_minutes = parse_num(key, value)?,
            "sampling.stride" => self.sampling_stride = parse_num(key, value)?,
            "concurrency.max_in_flight" => self.max_in_flight = parse_num(key, value)?,
            "retry.max" => self.retry.max_retries = parse_num(key, value)?,
            "retry.backoff_ms" => self.retry.initial_backoff_ms = parse_num(key, value)?,
            "cache.path" => self.cache_path = PathBuf::from(value),
            "map.provider" => {
                self.map_provider = match value {
                    "live" => MapProviderKind::Live,
                    "fixture" => MapProviderKind::Fixture,
                    other => {
                        return Err(ConfigError::BadValue(
                            key.to_string(),
                            format!("expected live|fixture, got {other}"),
                        ))
                    }
                }
            }
            "map.fixture_dir" => self.map_fixture_dir = Some(PathBuf::from(value)),
            "map.endpoint" => self.map_endpoint = Some(value.to_string()),
            "map.style" => self.map_style = Some(value.to_string()),
            "map.api_key_env" => self.map_api_key_env = Some(value.to_string()),
            "fixtures.llm_dir" => self.llm_fixture_dir = Some(PathBuf::from(value)),
            "prompts.catalog" => self.prompt_catalog = Some(PathBuf::from(value)),
            _ => {
                if let Some(rest) = key.strip_prefix("provider.") {
                    return self.set_provider_key(key, rest, value);
                }
                if let Some(rest) = key.strip_prefix("motion.") {
                    return self.set_motion_key(key, rest, value);
                }
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
        }
        Ok(())
    }

    fn set_provider_key(&mut self, full: &str, rest: &str, value: &str) -> Result<(), ConfigError> {
        let (role, field) = rest
            .split_once('.')
            .ok_or_else(|| ConfigError::UnknownKey(full.to_string()))?;
        if !Role::ALL.iter().any(|r| r.as_str() == role) {
            return Err(ConfigError::BadValue(
                full.to_string(),
                format!("unknown role {role}; expected one of map_vlm, ssid_llm, main_llm"),
            ));
        }
        let entry = self.providers.entry(role.to_string()).or_default();
        match field {
            "kind" => {
                entry.kind = match value {
                    "live" => ProviderKind::Live,
                    "replay" => ProviderKind::Replay,
                    "mock" => ProviderKind::Mock,
                    other => {
                        return Err(ConfigError::BadValue(
                            full.to_string(),
                            format!("expected live|replay|mock, got {other}"),
                        ))
                    }
                }
            }
            "model" => entry.model = value.to_string(),
            "endpoint" => entry.endpoint = Some(value.to_string()),
            "api_key_env" => entry.api_key_env = Some(value.to_string()),
            "price_in" => entry.price_in = value.to_string(),
            "price_out" => entry.price_out = value.to_string(),
            "hallucinate_rate" => entry.hallucinate_rate = Some(parse_num(full, value)?),
            "hallucinate_seed" => entry.hallucinate_seed = parse_num(full, value)?,
            _ => return Err(ConfigError::UnknownKey(full.to_string())),
        }
        Ok(())
    }

    fn set_motion_key(&mut self, full: &str, rest: &str, value: &str) -> Result<(), ConfigError> {
        let th = &mut self.motion_thresholds;
        let slot = match rest {
            "stationary.max_steps" => &mut th.stationary_max_steps,
            "stationary.max_accel" => &mut th.stationary_max_accel,
            "stationary.max_dh" => &mut th.stationary_max_dh,
            "stationary.max_speed" => &mut th.stationary_max_speed,
            "limited.max_steps" => &mut th.limited_max_steps,
            "limited.max_dh" => &mut th.limited_max_dh,
            "limited.max_speed" => &mut th.limited_max_speed,
            "jogging.min_steps" => &mut th.jogging_min_steps,
            "jogging.min_speed" => &mut th.jogging_min_speed,
            "jogging.max_speed" => &mut th.jogging_max_speed,
            "walking.min_steps" => &mut th.walking_min_steps,
            "walking.max_speed" => &mut th.walking_max_speed,
            "cycling.min_steps" => &mut th.cycling_min_steps,
            "cycling.min_speed" => &mut th.cycling_min_speed,
            "vehicle.max_steps" => &mut th.vehicle_max_steps,
            "vehicle.min_speed" => &mut th.vehicle_min_speed,
            "vehicle.any_speed" => &mut th.vehicle_any_speed,
            "escalator.max_steps" => &mut th.escalator_max_steps,
            "escalator.min_dh" => &mut th.escalator_min_dh,
            "escalator.max_speed" => &mut th.escalator_max_speed,
            _ => return Err(ConfigError::UnknownKey(full.to_string())),
        };
        *slot = parse_num(full, value)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.duty.validate().map_err(ConfigError::Invalid)?;
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch.size must be >= 1".into()));
        }
        if self.horizon_seconds <= 0.0 {
            return Err(ConfigError::Invalid("horizon.seconds must be > 0".into()));
        }
        if self.sampling_stride == 0 {
            return Err(ConfigError::Invalid("sampling.stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<PromptCatalog, ConfigError> {
        match &self.prompt_catalog {
            Some(path) => PromptCatalog::load(path)
                .map_err(|e| ConfigError::Invalid(format!("prompt catalog: {e}"))),
            None => Ok(PromptCatalog::default_catalog()),
        }
    }

    fn read_secret(&self, role: &str, env: &Option<String>) -> Result<Option<String>, ConfigError> {
        match env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ConfigError::MissingSecret(role.to_string(), var.clone())),
        }
    }

    /// Builds the completion gateway from the provider bindings.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let catalog = self.load_catalog()?;
        let mut gateway = Gateway::new(catalog, self.retry, self.max_in_flight);
        for role in Role::ALL {
            let name = role.as_str();
            let cfg = self
                .providers
                .get(name)
                .ok_or_else(|| ConfigError::MissingRole(name.to_string()))?;
            let provider: Box<dyn crate::llm::Provider> = match cfg.kind {
                ProviderKind::Mock => match cfg.hallucinate_rate {
                    Some(rate) => Box::new(HallucinatingProvider::new(
                        PipelineMock,
                        rate,
                        cfg.hallucinate_seed,
                    )),
                    None => Box::new(PipelineMock),
                },
                ProviderKind::Replay => {
                    let dir = self.llm_fixture_dir.clone().ok_or_else(|| {
                        ConfigError::Invalid(format!(
                            "provider.{name}.kind = replay requires fixtures.llm_dir"
                        ))
                    })?;
                    Box::new(ReplayProvider::new(dir))
                }
                ProviderKind::Live => {
                    let endpoint = cfg.endpoint.clone().ok_or_else(|| {
                        ConfigError::Invalid(format!(
                            "provider.{name}.kind = live requires provider.{name}.endpoint"
                        ))
                    })?;
                    let key = self.read_secret(name, &cfg.api_key_env)?;
                    Box::new(crate::llm::provider::LiveProvider::new(endpoint, key))
                }
            };
            gateway.bind(
                role,
                ProviderBinding {
                    model: cfg.model.clone(),
                    provider,
                    live: cfg.kind == ProviderKind::Live,
                },
            );
            let prices = UnitPrices {
                input_per_mtok: parse_price(&cfg.price_in).map_err(|e| {
                    ConfigError::BadValue(format!("provider.{name}.price_in"), e.to_string())
                })?,
                output_per_mtok: parse_price(&cfg.price_out).map_err(|e| {
                    ConfigError::BadValue(format!("provider.{name}.price_out"), e.to_string())
                })?,
            };
            gateway.set_price(&cfg.model, prices);
        }
        Ok(gateway)
    }

    /// Builds the map provider.
    pub fn build_map_provider(&self) -> Result<Box<dyn crate::geo::MapProvider>, ConfigError> {
        match self.map_provider {
            MapProviderKind::Fixture => {
                let dir = self.map_fixture_dir.clone().ok_or_else(|| {
                    ConfigError::Invalid("map.provider = fixture requires map.fixture_dir".into())
                })?;
                Ok(Box::new(crate::geo::FixtureMapProvider::new(dir)))
            }
            MapProviderKind::Live => {
                let endpoint = self.map_endpoint.clone().ok_or_else(|| {
                    ConfigError::Invalid("map.provider = live requires map.endpoint".into())
                })?;
                let key = self.read_secret("map", &self.map_api_key_env)?;
                Ok(Box::new(crate::geo::LiveMapProvider::new(
                    endpoint,
                    self.map_style.clone(),
                    key,
                    self.retry.max_retries,
                    self.retry.initial_backoff_ms,
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_deployed_parameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.duty.collect_duration_t, 15.0);
        assert_eq!(cfg.duty.period_big_t, 60.0);
        assert_eq!(cfg.batch_size, 15);
        assert_eq!(cfg.horizon_seconds, 3600.0);
        assert_eq!(cfg.retry.max_retries, 2);
        assert_eq!(cfg.max_in_flight, 4);
    }

    #[test]
    fn load_parses_flat_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nduty.collect_seconds = 10\nbatch.size = 5\nprovider.main_llm.model = big-model\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.duty.collect_duration_t, 10.0);
        assert_eq!(cfg.batch_size, 5);
        assert_eq!(cfg.providers["main_llm"].model, "big-model");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.set("nope.key", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            cfg.set("provider.wizard.kind", "mock"),
            Err(ConfigError::BadValue(..))
        ));
    }

    #[test]
    fn invalid_duty_cycle_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.set("duty.collect_seconds", "90").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn replay_without_fixture_dir_is_an_error() {
        let mut cfg = RunConfig::default();
        cfg.set("provider.main_llm.kind", "replay").unwrap();
        assert!(matches!(cfg.build_gateway(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn missing_secret_names_the_variable() {
        let mut cfg = RunConfig::default();
        cfg.set("provider.main_llm.kind", "live").unwrap();
        cfg.set("provider.main_llm.endpoint", "http://localhost:1/v1")
            .unwrap();
        cfg.set("provider.main_llm.api_key_env", "DEFINITELY_UNSET_VAR_XYZ")
            .unwrap();
        match cfg.build_gateway() {
            Err(ConfigError::MissingSecret(role, var)) => {
                assert_eq!(role, "main_llm");
                assert_eq!(var, "DEFINITELY_UNSET_VAR_XYZ");
            }
            Err(other) => panic!("expected MissingSecret, got {other}"),
            Ok(_) => panic!("expected MissingSecret, got a gateway"),
        }
    }

    #[test]
    fn motion_threshold_overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("motion.walking.min_steps", "40").unwrap();
        assert_eq!(cfg.motion_thresholds.walking_min_steps, 40.0);
    }
}
