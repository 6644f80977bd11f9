//! Use case 2: deciding when to switch a room's heater on.
//!
//! For each temperature sample of the day the service looks up, in the
//! room's simulated heat-up trace, how long the room needs to go from the
//! current outdoor temperature to the target. Once the time left until the
//! occupant returns is no longer than that, the heater is switched on, at
//! most once per day.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bus::{Bus, BusError};
use crate::event_log::{Event, EventLog, LogError};
use crate::ingestion::{publish_into_log, weather_days, weather_messages, IngestError, WeatherRow};
use crate::payload::{format_number, Payload};
use crate::schedule::{month_abbrev, remaining_seconds, ClockTime, ScheduleError, SchedulePolicy};

pub const TRACE_TIME_FIELD: &str = "measured_time";
pub const TRACE_TEMP_FIELD: &str = "temperature";
pub const TEMPERATURE_TOPIC: &str = "temperature";
pub const ACTIONS_TOPIC: &str = "heater-actions";
pub const ROUTINE_HEADER: [&str; 3] = ["date", "action-time", "temperature"];

#[derive(Debug, Error)]
pub enum HeaterError {
    #[error("trace {topic} never reaches {target_c} °C")]
    TargetUnreachable { topic: String, target_c: f64 },
    #[error("{current_c} °C is above everything in trace {topic}")]
    AlreadyWarm { topic: String, current_c: f64 },
    #[error("malformed temperature message: {0}")]
    BadMessage(String),
    #[error("temperature sample before any day marker")]
    NoDay,
    #[error("bad routine file: {0}")]
    BadRoutine(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Start time, first temperature and last (highest) temperature of a
/// monotone trace topic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceBounds {
    pub start_s: f64,
    pub min_c: f64,
    pub max_c: f64,
}

pub fn trace_bounds(log: &EventLog, topic: &str) -> Result<TraceBounds, HeaterError> {
    let field = |e: &Event, name: &str| {
        e.payload.number(name).ok_or_else(|| LogError::Schema {
            topic: topic.to_owned(),
            offset: e.offset,
            field: name.to_owned(),
        })
    };
    log.scan(topic, |events| {
        let (Some(first), Some(last)) = (events.first(), events.last()) else {
            return Err(LogError::EmptyTopic(topic.to_owned()));
        };
        Ok(TraceBounds {
            start_s: field(first, TRACE_TIME_FIELD)?,
            min_c: field(first, TRACE_TEMP_FIELD)?,
            max_c: field(last, TRACE_TEMP_FIELD)?,
        })
    })?
    .map_err(Into::into)
}

/// Trace time at which the room first reaches `temp_c`; temperatures below
/// the trace start map to the start.
fn crossing_time(
    log: &EventLog,
    topic: &str,
    bounds: &TraceBounds,
    temp_c: f64,
) -> Result<f64, HeaterError> {
    if temp_c < bounds.min_c {
        return Ok(bounds.start_s);
    }
    let event = log.first_crossing(topic, TRACE_TEMP_FIELD, temp_c)?;
    event.payload.number(TRACE_TIME_FIELD).ok_or_else(|| {
        LogError::Schema {
            topic: topic.to_owned(),
            offset: event.offset,
            field: TRACE_TIME_FIELD.to_owned(),
        }
        .into()
    })
}

/// Seconds the simulated room needed to warm from `current_c` to `target_c`.
pub fn required_heating_seconds(
    log: &EventLog,
    trace_topic: &str,
    current_c: f64,
    target_c: f64,
) -> Result<f64, HeaterError> {
    let bounds = trace_bounds(log, trace_topic)?;
    if target_c > bounds.max_c {
        return Err(HeaterError::TargetUnreachable {
            topic: trace_topic.to_owned(),
            target_c,
        });
    }
    if current_c > bounds.max_c {
        return Err(HeaterError::AlreadyWarm {
            topic: trace_topic.to_owned(),
            current_c,
        });
    }
    let to = crossing_time(log, trace_topic, &bounds, target_c)?;
    let from = crossing_time(log, trace_topic, &bounds, current_c)?;
    Ok((to - from).max(0.0))
}

/// Switch-on order, published on `heater-actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeaterAction {
    pub room: String,
    pub date: String,
    pub time: ClockTime,
    pub temperature_c: f64,
}

impl HeaterAction {
    /// `{"on": true, "time": "HH:MM"}`, tagged with the room and day.
    pub fn payload(&self) -> Payload {
        Payload::new()
            .with("on", true)
            .with("time", self.time.to_string())
            .with("room", self.room.as_str())
            .with("date", self.date.as_str())
    }
}

/// Per-room decision state. The time to reach the target is looked up once.
#[derive(Debug, Clone)]
pub struct DecisionState {
    pub room: String,
    pub trace_topic: String,
    pub t_target_s: f64,
    bounds: TraceBounds,
    policy: SchedulePolicy,
    pub fired_today: bool,
    pub current_date: Option<String>,
    last_sample: Option<(ClockTime, f64)>,
}

impl DecisionState {
    pub fn new(
        log: &EventLog,
        room: &str,
        trace_topic: &str,
        policy: &SchedulePolicy,
    ) -> Result<Self, HeaterError> {
        policy.validate()?;
        let bounds = trace_bounds(log, trace_topic)?;
        if policy.target_c > bounds.max_c {
            return Err(HeaterError::TargetUnreachable {
                topic: trace_topic.to_owned(),
                target_c: policy.target_c,
            });
        }
        let t_target_s = crossing_time(log, trace_topic, &bounds, policy.target_c)?;
        Ok(Self {
            room: room.to_owned(),
            trace_topic: trace_topic.to_owned(),
            t_target_s,
            bounds,
            policy: policy.clone(),
            fired_today: false,
            current_date: None,
            last_sample: None,
        })
    }

    /// Seconds needed from `current_c`, using the cached target time.
    /// Already-warm readings need none.
    pub fn required_seconds(&self, log: &EventLog, current_c: f64) -> Result<f64, HeaterError> {
        if current_c > self.bounds.max_c {
            return Ok(0.0);
        }
        let from = crossing_time(log, &self.trace_topic, &self.bounds, current_c)?;
        Ok((self.t_target_s - from).max(0.0))
    }

    /// Feeds one `temperature` message: a day marker or a sample.
    pub fn evaluate_sample(
        &mut self,
        log: &EventLog,
        msg: &Payload,
    ) -> Result<Option<HeaterAction>, HeaterError> {
        if let Some(day) = msg.text("day") {
            self.current_date = Some(day.to_owned());
            self.fired_today = false;
            self.last_sample = None;
            return Ok(None);
        }
        let temp = msg
            .number("temperature")
            .ok_or_else(|| HeaterError::BadMessage(msg.to_canonical()))?;
        let time: ClockTime = msg
            .text("time")
            .ok_or_else(|| HeaterError::BadMessage(msg.to_canonical()))?
            .parse()?;
        let date = self.current_date.clone().ok_or(HeaterError::NoDay)?;
        self.last_sample = Some((time, temp));
        if self.fired_today {
            return Ok(None);
        }
        let remaining = remaining_seconds(time, self.policy.deadline) as f64;
        if remaining > self.required_seconds(log, temp)? {
            return Ok(None);
        }
        self.fired_today = true;
        Ok(Some(HeaterAction {
            room: self.room.clone(),
            date,
            time,
            temperature_c: temp,
        }))
    }
}

/// One line of a heater-routine file.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutineRow {
    pub date: String,
    pub action_time: ClockTime,
    pub temperature_c: f64,
}

impl RoutineRow {
    /// Heater-on hours until the deadline.
    pub fn on_hours(&self, deadline: ClockTime) -> f64 {
        remaining_seconds(self.action_time, deadline) as f64 / 3600.0
    }
}

pub fn routine_file_name(room: &str, month: u32) -> String {
    format!("heater-routine-{room}-{month}.csv")
}

/// Rounded to hundredths and written in shortest form, e.g. `14.7`.
pub fn format_temperature(t: f64) -> String {
    let rounded = (t * 100.0).round() / 100.0;
    format_number(if rounded == 0.0 { 0.0 } else { rounded })
}

pub fn write_routine(rows: &[RoutineRow], out: impl Write) -> Result<(), HeaterError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROUTINE_HEADER)?;
    for row in rows {
        w.write_record([
            row.date.clone(),
            row.action_time.to_string(),
            format_temperature(row.temperature_c),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_routine(input: impl Read) -> Result<Vec<RoutineRow>, HeaterError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(ROUTINE_HEADER) {
        return Err(HeaterError::BadRoutine(format!(
            "unexpected header {:?}",
            r.headers()?
        )));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let bad = |what: &str| HeaterError::BadRoutine(format!("{what} in {record:?}"));
        rows.push(RoutineRow {
            date: record[0].to_owned(),
            action_time: record[1].parse().map_err(|_| bad("bad action-time"))?,
            temperature_c: record[2].parse().map_err(|_| bad("bad temperature"))?,
        });
    }
    Ok(rows)
}

/// Runs the decision loop over a sequence of `temperature` messages. Fired
/// actions are appended to `heater-actions`. Returns one row per day; a day
/// without a firing sample is recorded at the deadline with its last reading.
pub fn decide(
    log: &EventLog,
    state: &mut DecisionState,
    messages: impl IntoIterator<Item = Payload>,
) -> Result<Vec<RoutineRow>, HeaterError> {
    let mut rows: Vec<RoutineRow> = Vec::new();
    let mut open_day: Option<String> = None;
    let close_day = |state: &DecisionState, day: String, rows: &mut Vec<RoutineRow>| {
        if !state.fired_today {
            let temperature_c = state.last_sample.map_or(f64::NAN, |(_, t)| t);
            rows.push(RoutineRow {
                date: day,
                action_time: state.policy.deadline,
                temperature_c,
            });
        }
    };
    for msg in messages {
        if msg.text("day").is_some() {
            if let Some(day) = open_day.take() {
                close_day(state, day, &mut rows);
            }
        }
        let action = state.evaluate_sample(log, &msg)?;
        if msg.text("day").is_some() {
            open_day = state.current_date.clone();
        }
        if let Some(action) = action {
            log.append(ACTIONS_TOPIC, action.payload())?;
            rows.push(RoutineRow {
                date: action.date,
                action_time: action.time,
                temperature_c: action.temperature_c,
            });
        }
    }
    if let Some(day) = open_day {
        close_day(state, day, &mut rows);
    }
    Ok(rows)
}

/// Replays `month` of the weather onto the bus, copies it into the log
/// through a source bridge and returns the log offsets of that month's feed.
pub fn replay_month_to_log(
    rows: &[WeatherRow<f64>],
    month: u32,
    policy: &SchedulePolicy,
    bus: &Bus,
    log: &EventLog,
) -> Result<std::ops::Range<u64>, HeaterError> {
    let days = weather_days(rows, month, policy)?;
    let messages: Vec<(String, Payload)> = weather_messages(&days)
        .into_iter()
        .map(|m| (TEMPERATURE_TOPIC.to_owned(), m))
        .collect();
    log.create_topic(TEMPERATURE_TOPIC)?;
    let start = log.len(TEMPERATURE_TOPIC)?;
    let sent = publish_into_log(bus, log, &messages)?;
    Ok(start..start + sent)
}

/// One (room, month) run reading the feed back from the log.
pub fn run_from_log(
    log: &EventLog,
    room: &str,
    trace_topic: &str,
    feed: std::ops::Range<u64>,
    policy: &SchedulePolicy,
) -> Result<Vec<RoutineRow>, HeaterError> {
    let mut state = DecisionState::new(log, room, trace_topic, policy)?;
    let events = log.read_from(
        TEMPERATURE_TOPIC,
        feed.start,
        (feed.end - feed.start) as usize,
    )?;
    decide(log, &mut state, events.into_iter().map(|e| e.payload))
}

/// Full use case 2 for one room and month: weather replay, decisions and
/// the routine file in `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn run_month(
    room: &str,
    trace_topic: &str,
    month: u32,
    weather: &[WeatherRow<f64>],
    bus: &Bus,
    log: &EventLog,
    policy: &SchedulePolicy,
    out_dir: &Path,
) -> Result<PathBuf, HeaterError> {
    month_abbrev(month)?;
    // Fail before consuming anything if the trace is unusable.
    DecisionState::new(log, room, trace_topic, policy)?;
    let feed = replay_month_to_log(weather, month, policy, bus, log)?;
    let rows = run_from_log(log, room, trace_topic, feed, policy)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(routine_file_name(room, month));
    write_routine(&rows, std::fs::File::create(&path)?)?;
    Ok(path)
}
