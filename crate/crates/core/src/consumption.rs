//! Appliance consumption colouring service.
//!
//! In realtime mode every equipment reading is mapped to one of five shades
//! of the user's chosen colour and written to the machine's output topic. A
//! `limited` command pauses that and instead publishes one colour per
//! machine from its average power over a date window, until a `realtime`
//! command resumes live colouring.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_log::{EventLog, LogError};
use crate::payload::{FieldValue, Payload};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsumptionError {
    #[error("power must be non-negative and finite, got {0}")]
    NegativePower(f64),
    #[error("thresholds must be four strictly ascending non-negative values")]
    BadThresholds,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{reason}")]
pub struct CommandError {
    pub reason: String,
}

impl CommandError {
    fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaseColor {
    #[default]
    Red = 1,
    Green = 2,
    Blue = 3,
}

impl BaseColor {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BaseColor::Red),
            2 => Some(BaseColor::Green),
            3 => Some(BaseColor::Blue),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// An RGB triple rendered as `"r,g,b"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub [u8; 3]);

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b] = self.0;
        write!(f, "{r},{g},{b}")
    }
}

/// Five shades of one base colour; shade `i` has `51 (i + 1)` on the base
/// channel and zero elsewhere, so shade 4 is the pure colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Palette {
    pub base: BaseColor,
}

impl Palette {
    pub const SHADES: usize = 5;

    pub fn shade(&self, index: usize) -> Rgb {
        let level = (51 * (index.min(Self::SHADES - 1) + 1)) as u8;
        let mut rgb = [0u8; 3];
        rgb[self.base.code() as usize - 1] = level;
        Rgb(rgb)
    }
}

/// Four ascending kW cut points splitting `[0, ∞)` into five bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdTable([f64; 4]);

impl ThresholdTable {
    pub fn new(cuts: [f64; 4]) -> Result<Self, ConsumptionError> {
        let ascending = cuts.windows(2).all(|w| w[0] < w[1]);
        if !ascending || cuts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(ConsumptionError::BadThresholds);
        }
        Ok(Self(cuts))
    }

    pub fn cuts(&self) -> [f64; 4] {
        self.0
    }

    /// Number of cut points at or below `power_kw`.
    pub fn band(&self, power_kw: f64) -> usize {
        self.0.iter().filter(|c| **c <= power_kw).count()
    }
}

impl Default for ThresholdTable {
    fn default() -> Self {
        Self([0.1, 0.5, 1.0, 2.0])
    }
}

impl TryFrom<Vec<f64>> for ThresholdTable {
    type Error = ConsumptionError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let cuts: [f64; 4] = v.try_into().map_err(|_| ConsumptionError::BadThresholds)?;
        Self::new(cuts)
    }
}

impl From<ThresholdTable> for Vec<f64> {
    fn from(t: ThresholdTable) -> Self {
        t.0.to_vec()
    }
}

pub fn power_to_color(
    power_kw: f64,
    thresholds: &ThresholdTable,
    palette: &Palette,
) -> Result<Rgb, ConsumptionError> {
    if !power_kw.is_finite() || power_kw < 0.0 {
        return Err(ConsumptionError::NegativePower(power_kw));
    }
    Ok(palette.shade(thresholds.band(power_kw)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserCommand {
    SetColor(BaseColor),
    Limited { from: NaiveDate, to: NaiveDate },
    Realtime,
}

fn parse_date(payload: &Payload, key: &str) -> Result<NaiveDate, CommandError> {
    let text = payload
        .text(key)
        .ok_or_else(|| CommandError::new(format!("`{key}` must be a yyyy-MM-dd string")))?;
    let well_formed = text.len() == 10
        && text.bytes().enumerate().all(|(i, b)| {
            if i == 4 || i == 7 {
                b == b'-'
            } else {
                b.is_ascii_digit()
            }
        });
    if !well_formed {
        return Err(CommandError::new(format!(
            "`{key}` value `{text}` is not in yyyy-MM-dd format"
        )));
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|_| CommandError::new(format!("`{key}` value `{text}` is not a calendar date")))
}

impl UserCommand {
    /// Interprets a `users` message. `command` wins over `color` when both
    /// are present; unknown keys are ignored.
    pub fn from_payload(payload: &Payload) -> Result<Self, CommandError> {
        if let Some(command) = payload.get("command") {
            return match command.as_str() {
                Some("limited") => {
                    let from = parse_date(payload, "from_date")?;
                    let to = parse_date(payload, "to_date")?;
                    if from > to {
                        return Err(CommandError::new(format!(
                            "from_date {from} is after to_date {to}"
                        )));
                    }
                    Ok(UserCommand::Limited { from, to })
                }
                Some("realtime") => Ok(UserCommand::Realtime),
                Some(other) => Err(CommandError::new(format!("unknown command `{other}`"))),
                None => Err(CommandError::new("`command` must be a string")),
            };
        }
        match payload.get("color") {
            Some(FieldValue::Number(n)) if n.fract() == 0.0 && (1.0..=3.0).contains(n) => Ok(
                UserCommand::SetColor(BaseColor::from_code(*n as u8).expect("code in 1..=3")),
            ),
            Some(other) => Err(CommandError::new(format!(
                "color must be 1, 2 or 3, got {}",
                other.key_string()
            ))),
            None => Err(CommandError::new(
                "message has neither `command` nor `color`",
            )),
        }
    }
}

impl UserCommand {
    /// The message as a user would send it.
    pub fn payload(&self) -> Payload {
        match self {
            UserCommand::SetColor(base) => Payload::new().with("color", u32::from(base.code())),
            UserCommand::Limited { from, to } => Payload::new()
                .with("command", "limited")
                .with("from_date", from.format("%Y-%m-%d").to_string())
                .with("to_date", to.format("%Y-%m-%d").to_string()),
            UserCommand::Realtime => Payload::new().with("command", "realtime"),
        }
    }
}

pub fn parse_user_command(json_text: &str) -> Result<UserCommand, CommandError> {
    let payload = Payload::parse(json_text).map_err(|e| CommandError::new(e.to_string()))?;
    UserCommand::from_payload(&payload)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    Realtime,
    Limited { from: NaiveDate, to: NaiveDate },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsumptionConfig {
    pub equipment_topic: String,
    pub users_topic: String,
    pub errors_topic: String,
    pub thresholds: ThresholdTable,
    pub palette: Palette,
    /// Equipment name in readings → output topic.
    pub machine_topics: BTreeMap<String, String>,
}

impl Default for ConsumptionConfig {
    fn default() -> Self {
        let machine_topics = [
            ("Dish.", "Dishwasher"),
            ("Oven", "Oven"),
            ("Fridge", "Fridge"),
            ("Micro.", "Microwave"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect();
        Self {
            equipment_topic: "equipment".into(),
            users_topic: "users".into(),
            errors_topic: "service-errors".into(),
            thresholds: ThresholdTable::default(),
            palette: Palette::default(),
            machine_topics,
        }
    }
}

impl ConsumptionConfig {
    pub fn machine_topic<'a>(&'a self, equipment: &'a str) -> &'a str {
        self.machine_topics
            .get(equipment)
            .map_or(equipment, String::as_str)
    }

    pub fn output_topics(&self) -> Vec<String> {
        let mut topics: Vec<_> = self.machine_topics.values().cloned().collect();
        topics.sort();
        topics.dedup();
        topics
    }
}

/// A colour publication: `{"color": "r,g,b", "equipment": <machine>}` on the
/// machine's topic.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorUpdate {
    pub topic: String,
    pub color: Rgb,
}

impl ColorUpdate {
    pub fn payload(&self) -> Payload {
        Payload::new()
            .with("equipment", self.topic.as_str())
            .with("color", self.color.to_string())
    }
}

/// Snapshot of the service for observers such as the gateway.
#[derive(Debug, Clone, Serialize)]
pub struct ServiceStatus {
    #[serde(flatten)]
    pub mode: Mode,
    pub palette: Palette,
    /// Last colour published per machine topic.
    pub colors: BTreeMap<String, String>,
    pub equipment_processed: u64,
    pub commands_processed: u64,
}

/// The service's state machine, independent of any I/O loop.
#[derive(Debug, Clone)]
pub struct ConsumptionService {
    config: ConsumptionConfig,
    mode: Mode,
    palette: Palette,
    latest_power: BTreeMap<String, f64>,
}

impl ConsumptionService {
    pub fn new(config: ConsumptionConfig) -> Self {
        let palette = config.palette;
        Self {
            config,
            mode: Mode::Realtime,
            palette,
            latest_power: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn palette(&self) -> Palette {
        self.palette
    }

    pub fn config(&self) -> &ConsumptionConfig {
        &self.config
    }

    fn color(&self, topic: &str, power: f64) -> Result<ColorUpdate, ConsumptionError> {
        Ok(ColorUpdate {
            topic: topic.to_owned(),
            color: power_to_color(power, &self.config.thresholds, &self.palette)?,
        })
    }

    /// Handles one equipment reading. Readings are always remembered; a
    /// colour is produced only in realtime mode.
    pub fn on_reading(&mut self, reading: &Payload) -> Result<Option<ColorUpdate>, String> {
        let name = reading
            .text("equipment")
            .ok_or("reading has no `equipment` string")?;
        let power = reading
            .number("power")
            .ok_or("reading has no numeric `power`")?;
        if !power.is_finite() || power < 0.0 {
            return Err(format!("reading for {name} has invalid power {power}"));
        }
        let topic = self.config.machine_topic(name).to_owned();
        self.latest_power.insert(topic.clone(), power);
        match self.mode {
            Mode::Realtime => self
                .color(&topic, power)
                .map(Some)
                .map_err(|e| e.to_string()),
            Mode::Limited { .. } => Ok(None),
        }
    }

    /// Applies a user command. `averages` is consulted only for `Limited`
    /// and yields `(equipment, mean kW)` for the window.
    pub fn on_command(
        &mut self,
        command: UserCommand,
        averages: impl FnOnce(NaiveDate, NaiveDate) -> Result<Vec<(String, f64)>, LogError>,
    ) -> Result<Vec<ColorUpdate>, String> {
        match command {
            UserCommand::SetColor(base) => {
                self.palette = Palette { base };
                Ok(Vec::new())
            }
            UserCommand::Limited { from, to } => {
                self.mode = Mode::Limited { from, to };
                let rows = averages(from, to).map_err(|e| e.to_string())?;
                rows.iter()
                    .map(|(name, avg)| {
                        self.color(self.config.machine_topic(name), *avg)
                            .map_err(|e| e.to_string())
                    })
                    .collect()
            }
            UserCommand::Realtime => {
                let was_limited = matches!(self.mode, Mode::Limited { .. });
                self.mode = Mode::Realtime;
                if !was_limited {
                    return Ok(Vec::new());
                }
                // Resume from the machines' current state.
                self.latest_power
                    .iter()
                    .map(|(topic, power)| self.color(topic, *power).map_err(|e| e.to_string()))
                    .collect()
            }
        }
    }
}

/// Running service loop over the log.
pub struct ServiceHandle {
    stop: Arc<AtomicBool>,
    status: Arc<RwLock<ServiceStatus>>,
    worker: Option<JoinHandle<Result<(), LogError>>>,
}

impl ServiceHandle {
    pub fn status(&self) -> ServiceStatus {
        self.status.read().expect("status poisoned").clone()
    }

    pub fn status_ref(&self) -> Arc<RwLock<ServiceStatus>> {
        self.status.clone()
    }

    pub fn is_finished(&self) -> bool {
        self.worker.as_ref().is_none_or(JoinHandle::is_finished)
    }

    pub fn stop(mut self) -> Result<(), LogError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), LogError> {
        self.stop.store(true, Ordering::SeqCst);
        match self.worker.take() {
            Some(w) => w.join().unwrap_or_else(|_| {
                Err(LogError::Io(std::io::Error::other(
                    "service thread panicked",
                )))
            }),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Err(e) = self.shutdown() {
            log::error!("consumption service stopped with error: {e}");
        }
    }
}

const POLL: Duration = Duration::from_millis(5);
const BATCH: usize = 512;

/// Starts the service over `log`, consuming `equipment` and `users` from the
/// given offsets. Colours are appended to per-machine log topics; failures
/// are appended to the errors topic and the loop keeps going.
pub fn run_service(
    log: &EventLog,
    config: ConsumptionConfig,
    from_offsets: (u64, u64),
) -> Result<ServiceHandle, LogError> {
    for topic in [
        &config.equipment_topic,
        &config.users_topic,
        &config.errors_topic,
    ] {
        log.create_topic(topic)?;
    }
    for topic in config.output_topics() {
        log.create_topic(&topic)?;
    }
    let mut service = ConsumptionService::new(config);
    let status = Arc::new(RwLock::new(ServiceStatus {
        mode: service.mode(),
        palette: service.palette(),
        colors: BTreeMap::new(),
        equipment_processed: 0,
        commands_processed: 0,
    }));
    let stop = Arc::new(AtomicBool::new(false));
    let worker = {
        let (log, status, stop) = (log.clone(), status.clone(), stop.clone());
        std::thread::Builder::new()
            .name("consumption-service".into())
            .spawn(move || -> Result<(), LogError> {
                let (mut eq_cursor, mut cmd_cursor) = from_offsets;
                let cfg = service.config().clone();
                let report = |log: &EventLog, msg: String| -> Result<(), LogError> {
                    log::warn!("consumption service: {msg}");
                    log.append(&cfg.errors_topic, Payload::new().with("error", msg))
                        .map(|_| ())
                };
                let emit = |log: &EventLog, updates: Vec<ColorUpdate>| -> Result<(), LogError> {
                    for u in updates {
                        log.append(&u.topic, u.payload())?;
                        status
                            .write()
                            .expect("status poisoned")
                            .colors
                            .insert(u.topic.clone(), u.color.to_string());
                    }
                    Ok(())
                };
                loop {
                    let stopping = stop.load(Ordering::SeqCst);
                    // Commands first, so a pause takes effect before any
                    // further readings are coloured.
                    let commands = log.read_from(&cfg.users_topic, cmd_cursor, BATCH)?;
                    for event in &commands {
                        cmd_cursor = event.offset + 1;
                        let outcome = UserCommand::from_payload(&event.payload)
                            .map_err(|e| format!("bad command at offset {}: {e}", event.offset))
                            .and_then(|cmd| {
                                service.on_command(cmd, |from, to| {
                                    log.avg_by_key(
                                        &cfg.equipment_topic,
                                        "equipment",
                                        "power",
                                        "time",
                                        from,
                                        to,
                                    )
                                })
                            });
                        match outcome {
                            Ok(updates) => emit(&log, updates)?,
                            Err(msg) => report(&log, msg)?,
                        }
                        let mut s = status.write().expect("status poisoned");
                        s.mode = service.mode();
                        s.palette = service.palette();
                        s.commands_processed += 1;
                    }
                    if !commands.is_empty() {
                        continue;
                    }
                    let readings = log.read_from(&cfg.equipment_topic, eq_cursor, BATCH)?;
                    for event in &readings {
                        eq_cursor = event.offset + 1;
                        match service.on_reading(&event.payload) {
                            Ok(Some(update)) => emit(&log, vec![update])?,
                            Ok(None) => {}
                            Err(msg) => report(&log, format!("offset {}: {msg}", event.offset))?,
                        }
                        // Checked per reading so a command is never starved by a long backlog.
                        if log.len(&cfg.users_topic)? > cmd_cursor {
                            break;
                        }
                    }
                    status.write().expect("status poisoned").equipment_processed = eq_cursor;
                    if !readings.is_empty() {
                        continue;
                    }
                    if stopping {
                        return Ok(());
                    }
                    log.wait_for(&cfg.users_topic, cmd_cursor, POLL)?;
                }
            })
            .expect("spawn service thread")
    };
    Ok(ServiceHandle {
        stop,
        status,
        worker: Some(worker),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> (ThresholdTable, Palette) {
        (ThresholdTable::default(), Palette::default())
    }

    #[test]
    fn shade_formula() {
        let red = Palette::default();
        assert_eq!(red.shade(0).to_string(), "51,0,0");
        assert_eq!(red.shade(4).to_string(), "255,0,0");
        assert_eq!(
            Palette {
                base: BaseColor::Blue
            }
            .shade(0)
            .to_string(),
            "0,0,51"
        );
        assert_eq!(
            Palette {
                base: BaseColor::Green
            }
            .shade(2)
            .to_string(),
            "0,153,0"
        );
    }

    #[test]
    fn power_bands() {
        let (t, p) = defaults();
        assert_eq!(power_to_color(0.01, &t, &p).unwrap().to_string(), "51,0,0");
        assert_eq!(power_to_color(3.33, &t, &p).unwrap().to_string(), "255,0,0");
        assert_eq!(t.band(0.5), 2);
        assert_eq!(t.band(0.0), 0);
        assert_eq!(t.band(1.6667), 3);
        assert!(matches!(
            power_to_color(-0.1, &t, &p),
            Err(ConsumptionError::NegativePower(_))
        ));
    }

    #[test]
    fn thresholds_validate() {
        assert!(ThresholdTable::new([0.1, 0.1, 1.0, 2.0]).is_err());
        assert!(ThresholdTable::new([-0.1, 0.5, 1.0, 2.0]).is_err());
        assert!(ThresholdTable::try_from(vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn parses_the_three_command_forms() {
        let cmd = parse_user_command(
            r#"{"command": "limited", "from_date": "2022-01-01",  "to_date": "2022-01-31"}"#,
        )
        .unwrap();
        assert_eq!(
            cmd,
            UserCommand::Limited {
                from: "2022-01-01".parse().unwrap(),
                to: "2022-01-31".parse().unwrap()
            }
        );
        assert_eq!(
            parse_user_command(r#"{"color": 2}"#).unwrap(),
            UserCommand::SetColor(BaseColor::Green)
        );
        assert_eq!(
            parse_user_command(r#"{"command": "realtime"}"#).unwrap(),
            UserCommand::Realtime
        );
        assert_eq!(
            parse_user_command(r#"{"command": "realtime", "extra": 1}"#).unwrap(),
            UserCommand::Realtime
        );
    }

    #[test]
    fn rejects_bad_commands() {
        for bad in [
            r#"{"command":"limited","from_date":"2022-02-01","to_date":"2022-01-01"}"#,
            r#"{"command":"limited","from_date":"2022-1-01","to_date":"2022-01-31"}"#,
            r#"{"command":"limited","from_date":"2022-02-30","to_date":"2022-03-01"}"#,
            r#"{"command":"limited","from_date":"2022-01-01"}"#,
            r#"{"command":"pause"}"#,
            r#"{"color": 4}"#,
            r#"{"color": 1.5}"#,
            r#"{"color": "2"}"#,
            r#"{"hello": 1}"#,
            "not json",
        ] {
            assert!(parse_user_command(bad).is_err(), "{bad}");
        }
    }

    fn reading(name: &str, power: f64) -> Payload {
        Payload::new()
            .with("equipment", name)
            .with("power", power)
            .with("time", 1451624400_i64)
    }

    #[test]
    fn state_machine_modes() {
        let mut svc = ConsumptionService::new(ConsumptionConfig::default());
        let out = svc.on_reading(&reading("Oven", 0.02)).unwrap().unwrap();
        assert_eq!(out.topic, "Oven");
        assert_eq!(
            out.payload().to_canonical(),
            r#"{"color":"51,0,0","equipment":"Oven"}"#
        );

        let window = |_, _| {
            Ok(vec![
                ("Dish.".to_owned(), 1.6667),
                ("Oven".to_owned(), 0.02),
            ])
        };
        let d: NaiveDate = "2016-01-01".parse().unwrap();
        let out = svc
            .on_command(UserCommand::Limited { from: d, to: d }, window)
            .unwrap();
        assert_eq!(
            out[0],
            ColorUpdate {
                topic: "Dishwasher".into(),
                color: Rgb([204, 0, 0])
            }
        );
        assert!(svc.on_reading(&reading("Oven", 3.0)).unwrap().is_none());

        svc.on_command(
            UserCommand::SetColor(BaseColor::Blue),
            |_, _| unreachable!(),
        )
        .unwrap();
        let resumed = svc
            .on_command(UserCommand::Realtime, |_, _| unreachable!())
            .unwrap();
        assert_eq!(
            resumed,
            vec![ColorUpdate {
                topic: "Oven".into(),
                color: Rgb([0, 0, 255])
            }]
        );
        let out = svc.on_reading(&reading("Micro.", 0.01)).unwrap().unwrap();
        assert_eq!(out.color.to_string(), "0,0,51");
        assert_eq!(out.topic, "Microwave");
    }

    #[test]
    fn status_serializes_flat() {
        let status = ServiceStatus {
            mode: Mode::Limited {
                from: "2022-01-01".parse().unwrap(),
                to: "2022-01-31".parse().unwrap(),
            },
            palette: Palette {
                base: BaseColor::Green,
            },
            colors: BTreeMap::from([("Oven".to_owned(), "0,51,0".to_owned())]),
            equipment_processed: 4,
            commands_processed: 2,
        };
        assert_eq!(
            serde_json::to_string(&status).unwrap(),
            r#"{"mode":"limited","from":"2022-01-01","to":"2022-01-31","palette":"green","colors":{"Oven":"0,51,0"},"equipment_processed":4,"commands_processed":2}"#
        );
    }

    proptest! {
        #[test]
        fn band_is_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let t = ThresholdTable::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t.band(lo) <= t.band(hi));
        }

        #[test]
        fn palette_change_keeps_band(power in 0.0f64..10.0, code in 1u8..=3) {
            let t = ThresholdTable::default();
            let before = power_to_color(power, &t, &Palette::default()).unwrap();
            let after = power_to_color(power, &t, &Palette { base: BaseColor::from_code(code).unwrap() }).unwrap();
            prop_assert_eq!(before.0.iter().max(), after.0.iter().max());
        }
    }
}
