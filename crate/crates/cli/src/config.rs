//! The single TOML file every subcommand reads.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use hometwin::consumption::ConsumptionConfig;
use hometwin::event_log::validate_topic_name;
use hometwin::heater::{ACTIONS_TOPIC, TEMPERATURE_TOPIC};
use hometwin::ingestion::{
    read_appliance_csv, read_weather_csv, synth_appliances, synth_weather, ApplianceRow,
};
use hometwin::schedule::month_abbrev;
use hometwin::{RoomSpec, SchedulePolicy, SimConfig, WeatherRow};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dataset: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Datasets {
    /// Appliance power CSV with a `Time` column and one kW column per machine.
    pub appliances: Option<PathBuf>,
    /// Hourly `month,day,hour,temperature` CSV.
    pub weather: Option<PathBuf>,
    /// Seed for the synthetic stand-ins used when a path is absent.
    pub seed: u64,
    pub synthetic_rows: usize,
}

impl Default for Datasets {
    fn default() -> Self {
        Self {
            appliances: None,
            weather: None,
            seed: 7,
            synthetic_rows: 3600,
        }
    }
}

/// Replay speed factors; `inf` means no pacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Replay {
    pub batch_speed: f64,
    pub demo_speed: f64,
}

impl Default for Replay {
    fn default() -> Self {
        Self {
            batch_speed: f64::INFINITY,
            demo_speed: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gateway {
    pub bind: String,
}

impl Default for Gateway {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mqtt {
    pub enabled: bool,
    pub bind: String,
}

impl Default for Mqtt {
    fn default() -> Self {
        Self {
            enabled: false,
            bind: "127.0.0.1:1883".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Where the event log keeps its topic files.
    pub data_dir: PathBuf,
    /// Traces, routine files and the evaluation report go here.
    pub output_dir: PathBuf,
    pub bus_capacity: usize,
    /// Months evaluated, 1-based.
    pub months: Vec<u32>,
    pub policy: SchedulePolicy,
    pub simulation: SimConfig,
    pub rooms: Vec<RoomSpec>,
    pub consumption: ConsumptionConfig,
    pub datasets: Datasets,
    pub replay: Replay,
    pub gateway: Gateway,
    pub mqtt: Mqtt,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            output_dir: "out".into(),
            bus_capacity: hometwin::bus::DEFAULT_CAPACITY,
            months: vec![1, 2, 3, 4],
            policy: SchedulePolicy::default(),
            simulation: SimConfig::default(),
            rooms: RoomSpec::defaults(),
            consumption: ConsumptionConfig::default(),
            datasets: Datasets::default(),
            replay: Replay::default(),
            gateway: Gateway::default(),
            mqtt: Mqtt::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates `path`. Relative paths inside the file are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.datasets.appliances {
            fix(p);
        }
        if let Some(p) = &mut self.datasets.weather {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.rooms.is_empty() {
            return invalid("no rooms configured".into());
        }
        if self.months.is_empty() {
            return invalid("no months configured".into());
        }
        if self.bus_capacity == 0 {
            return invalid("bus_capacity must be positive".into());
        }
        self.policy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut months = BTreeSet::new();
        for &m in &self.months {
            month_abbrev(m).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !months.insert(m) {
                return invalid(format!("month {m} listed twice"));
            }
        }
        let reserved = self.reserved_topics();
        let mut names = BTreeSet::new();
        for room in &self.rooms {
            validate_topic_name(&room.name)
                .map_err(|e| ConfigError::Invalid(format!("room name: {e}")))?;
            if reserved.contains(&room.name) {
                return invalid(format!("room name `{}` clashes with a topic", room.name));
            }
            if !names.insert(room.name.as_str()) {
                return invalid(format!("room `{}` listed twice", room.name));
            }
        }
        for speed in [self.replay.batch_speed, self.replay.demo_speed] {
            if speed.is_nan() || speed <= 0.0 {
                return invalid(format!("replay speed {speed} must be positive"));
            }
        }
        Ok(())
    }

    /// Topics owned by the services, which room traces must not reuse.
    fn reserved_topics(&self) -> BTreeSet<String> {
        let c = &self.consumption;
        let mut set: BTreeSet<String> = c.output_topics().into_iter().collect();
        set.extend([
            c.equipment_topic.clone(),
            c.users_topic.clone(),
            c.errors_topic.clone(),
            TEMPERATURE_TOPIC.to_owned(),
            ACTIONS_TOPIC.to_owned(),
        ]);
        set
    }

    pub fn room(&self, name: &str) -> Option<&RoomSpec> {
        self.rooms.iter().find(|r| r.name == name)
    }

    pub fn log_dir(&self) -> PathBuf {
        self.data_dir.join("log")
    }

    pub fn trace_csv(&self) -> PathBuf {
        self.output_dir.join("simulation.csv")
    }

    /// The appliance rows to replay, from the configured file or generated.
    pub fn appliance_rows(&self) -> Result<Vec<ApplianceRow>, ConfigError> {
        let bad = |e: hometwin::ingestion::IngestError| ConfigError::Dataset(e.to_string());
        let (rows, skipped) = match &self.datasets.appliances {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                read_appliance_csv(file, &Default::default()).map_err(bad)?
            }
            None => {
                let csv = synth_appliances(self.datasets.seed, self.datasets.synthetic_rows);
                read_appliance_csv(csv.as_bytes(), &Default::default()).map_err(bad)?
            }
        };
        if skipped > 0 {
            log::warn!("skipped {skipped} malformed appliance rows");
        }
        Ok(rows)
    }

    /// Hourly weather, from the configured file or generated for a whole
    /// year so the chosen months never change the data.
    pub fn weather_rows(&self) -> Result<Vec<WeatherRow>, ConfigError> {
        let bad = |e: hometwin::ingestion::IngestError| ConfigError::Dataset(e.to_string());
        match &self.datasets.weather {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                read_weather_csv(file).map_err(bad)
            }
            None => {
                let months: Vec<u32> = (1..=12).collect();
                let csv = synth_weather(self.datasets.seed, &months)
                    .map_err(|e| ConfigError::Dataset(e.to_string()))?;
                read_weather_csv(csv.as_bytes()).map_err(bad)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = Config::default();
        let text = config.to_toml();
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(back.to_toml(), text);
        assert_eq!(back.policy.target_c, 20.0);
        assert_eq!(back.policy.deadline.to_string(), "18:00");
        assert_eq!(back.policy.away_start.to_string(), "08:00");
        assert_eq!(back.policy.step_minutes, 15);
        assert_eq!(back.simulation.sample_every_s, 100);
        assert!(back.replay.batch_speed.is_infinite());
        assert_eq!(back.replay.demo_speed, 60.0);
        assert_eq!(back.rooms.len(), 3);
    }

    #[test]
    fn empty_file_is_the_default() {
        let config = Config::from_toml("").unwrap();
        assert_eq!(config.months, [1, 2, 3, 4]);
        assert_eq!(config.consumption.palette.base.code(), 1);
    }

    #[test]
    fn partial_tables_fill_in() {
        let config = Config::from_toml(
            "months = [1]\n[policy]\ntarget_c = 21.5\n[consumption]\npalette = \"blue\"\nthresholds = [0.2, 0.4, 0.8, 1.6]\n",
        )
        .unwrap();
        assert_eq!(config.policy.target_c, 21.5);
        assert_eq!(config.policy.deadline.to_string(), "18:00");
        assert_eq!(config.consumption.palette.base.code(), 3);
        assert_eq!(config.consumption.thresholds.cuts(), [0.2, 0.4, 0.8, 1.6]);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "colour = 1\n",
            "months = []\n",
            "months = [13]\n",
            "months = [1, 1]\n",
            "rooms = []\n",
            "[consumption]\nthresholds = [0.5, 0.1, 1.0, 2.0]\n",
            "[policy]\naway_start = \"19:00\"\n",
            "[replay]\ndemo_speed = 0.0\n",
        ] {
            assert!(Config::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn room_names_must_be_unique_and_free() {
        let mut config = Config::default();
        config.rooms[1].name = config.rooms[0].name.clone();
        assert!(config.validate().is_err());
        let mut config = Config::default();
        config.rooms[0].name = "Oven".into();
        assert!(config.validate().is_err());
        let mut config = Config::default();
        config.rooms[0].name = "../up".into();
        assert!(config.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("home.toml");
        std::fs::write(&path, "data_dir = \"d\"\n[datasets]\nweather = \"w.csv\"\n").unwrap();
        let config = Config::load(&path).unwrap();
        assert_eq!(config.data_dir, dir.path().join("d"));
        assert_eq!(config.output_dir, dir.path().join("out"));
        assert_eq!(config.datasets.weather, Some(dir.path().join("w.csv")));
    }

    #[test]
    fn synthetic_weather_covers_the_year() {
        let rows = Config::default().weather_rows().unwrap();
        assert_eq!(rows.len(), 365 * 24);
    }
}
