//! Dataset replayers standing in for the residence's sensors.
//!
//! Appliance power readings and outdoor weather are read from CSV files and
//! published on the bus as the JSON messages the services expect; the
//! simulator's trace CSV is published the same way so the bus stays the only
//! entry point into storage.

mod appliances;
mod sim_output;
mod synth;
mod weather;

use std::time::Duration;

use thiserror::Error;

use crate::bridge::{source_bridge, BridgeError};
use crate::bus::{Bus, BusError};
use crate::event_log::{EventLog, LogError};
use crate::payload::Payload;
use crate::schedule::ScheduleError;

pub use appliances::{
    appliance_messages, read_appliance_csv, replay_appliances, ApplianceCsvOptions, ApplianceRow,
    DEFAULT_APPLIANCE_ORDER,
};
pub use sim_output::{
    load_sim_output, parse_sim_output, publish_sim_output, sim_messages, RoomColumn,
};
pub use synth::{synth_appliances, synth_weather};
pub use weather::{
    interpolate, interpolate_quarter_hour, read_weather_csv, replay_weather, weather_days,
    weather_messages, DaySeries, WeatherRow,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("CSV has no appliance columns")]
    NoAppliances,
    #[error("month {0} not present in weather data")]
    MonthNotFound(u32),
    #[error("rows {from} and {to} are not consecutive hours")]
    Gap { from: String, to: String },
    #[error("bad row {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("step of {0} minutes does not divide an hour")]
    BadStep(u32),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("bridging lost {lost} of {sent} messages")]
    Lossy { sent: u64, lost: u64 },
    #[error("timed out waiting for bridges to drain")]
    Timeout,
}

/// Replay pacing: one row (or message) per second divided by the factor.
/// An infinite factor disables pacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplaySpeed(pub f64);

impl ReplaySpeed {
    pub const INSTANT: ReplaySpeed = ReplaySpeed(f64::INFINITY);

    pub fn delay(self) -> Option<Duration> {
        if self.0.is_finite() && self.0 > 0.0 {
            Some(Duration::from_secs_f64(1.0 / self.0))
        } else {
            None
        }
    }

    pub(crate) fn pause(self) {
        if let Some(d) = self.delay() {
            std::thread::sleep(d);
        }
    }
}

/// Counters returned by a replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub rows: u64,
    pub messages: u64,
    pub skipped: u64,
}

const DRAIN_TIMEOUT: Duration = Duration::from_secs(120);

/// Publishes `(topic, payload)` messages on the bus and waits until source
/// bridges have copied every one into the log topic of the same name.
/// Fails if anything was dropped or dead-lettered on the way.
pub fn publish_into_log(
    bus: &Bus,
    log: &EventLog,
    messages: &[(String, Payload)],
) -> Result<u64, IngestError> {
    replay_into_log(bus, log, messages, ReplaySpeed::INSTANT)
}

/// [`publish_into_log`] with pacing between messages.
pub fn replay_into_log(
    bus: &Bus,
    log: &EventLog,
    messages: &[(String, Payload)],
    speed: ReplaySpeed,
) -> Result<u64, IngestError> {
    let mut topics: Vec<&str> = messages.iter().map(|(t, _)| t.as_str()).collect();
    topics.sort_unstable();
    topics.dedup();
    let bridges = topics
        .iter()
        .map(|t| source_bridge(bus, t, log, t))
        .collect::<Result<Vec<_>, _>>()?;
    // Publish in chunks no larger than half a queue and let the bridges
    // catch up in between, so a fast replay cannot overrun them.
    let chunk = (bus.capacity() / 2).max(1);
    let mut published = vec![0u64; topics.len()];
    let slot = |topic: &str| topics.binary_search(&topic).expect("topic collected above");
    for batch in messages.chunks(chunk) {
        for (topic, payload) in batch {
            speed.pause();
            // Publishing to a closed bus is a silent no-op, so stop here.
            if bus.is_closed() {
                return Err(BusError::Shutdown.into());
            }
            bus.publish(topic, payload.to_canonical())?;
            published[slot(topic)] += 1;
        }
        for (bridge, count) in bridges.iter().zip(&published) {
            bridge
                .wait_accounted(*count, DRAIN_TIMEOUT)
                .ok_or(IngestError::Timeout)?;
        }
    }
    let mut lost = 0;
    for bridge in bridges {
        let report = bridge.stop()?;
        lost += report.dropped + report.dead_lettered;
    }
    let sent = messages.len() as u64;
    if lost > 0 {
        return Err(IngestError::Lossy { sent, lost });
    }
    Ok(sent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(n: i64) -> Vec<(String, Payload)> {
        (0..n)
            .map(|i| ("feed".to_owned(), Payload::new().with("n", i)))
            .collect()
    }

    #[test]
    fn chunked_replay_loses_nothing_on_a_tiny_bus() {
        let (bus, log) = (Bus::with_capacity(4), EventLog::in_memory());
        assert_eq!(publish_into_log(&bus, &log, &msgs(500)).unwrap(), 500);
        let stored = log.read_all("feed").unwrap();
        assert!(stored
            .iter()
            .enumerate()
            .all(|(i, e)| e.payload.number("n") == Some(i as f64)));
    }

    #[test]
    fn closing_the_bus_stops_a_paced_replay() {
        let (bus, log) = (Bus::new(), EventLog::in_memory());
        let closer = {
            let bus = bus.clone();
            std::thread::spawn(move || {
                std::thread::sleep(Duration::from_millis(50));
                bus.close();
            })
        };
        let started = std::time::Instant::now();
        let err = replay_into_log(&bus, &log, &msgs(1000), ReplaySpeed(100.0)).unwrap_err();
        closer.join().unwrap();
        assert!(matches!(err, IngestError::Bus(BusError::Shutdown)), "{err}");
        assert!(started.elapsed() < Duration::from_secs(2));
    }
}
