use std::io::Read;
use std::path::Path;

use crate::bus::Bus;
use crate::event_log::EventLog;
use crate::payload::Payload;

use super::IngestError;

/// Maps one trace CSV column to the bus topic that carries it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoomColumn {
    pub column: String,
    pub topic: String,
}

impl RoomColumn {
    pub fn new(column: impl Into<String>, topic: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            topic: topic.into(),
        }
    }
}

/// `(topic, {"measured_time": <s>, "temperature": <C>})` for every row and
/// mapped column, row-major in map order. Unmapped columns are ignored.
pub fn sim_messages(
    input: impl Read,
    map: &[RoomColumn],
) -> Result<Vec<(String, Payload)>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let time_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("time"))
        .ok_or_else(|| IngestError::MissingColumn("time".into()))?;
    let mapped: Vec<(usize, &str)> = map
        .iter()
        .map(|m| {
            headers
                .iter()
                .position(|h| h == m.column)
                .map(|i| (i, m.topic.as_str()))
                .ok_or_else(|| IngestError::MissingColumn(m.column.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record?;
        let line = n as u64 + 2;
        let bad = |reason: String| IngestError::BadRow { line, reason };
        let time: i64 = record[time_idx]
            .parse()
            .map_err(|_| bad(format!("bad time `{}`", &record[time_idx])))?;
        for (i, topic) in &mapped {
            let temp: f64 = record[*i]
                .parse()
                .map_err(|_| bad(format!("bad temperature `{}`", &record[*i])))?;
            if !temp.is_finite() {
                return Err(bad("non-finite temperature".into()));
            }
            out.push((
                topic.to_string(),
                Payload::new()
                    .with("measured_time", time)
                    .with("temperature", temp),
            ));
        }
    }
    Ok(out)
}

pub fn publish_sim_output(
    input: impl Read,
    map: &[RoomColumn],
    bus: &Bus,
) -> Result<u64, IngestError> {
    let msgs = sim_messages(input, map)?;
    for (topic, payload) in &msgs {
        bus.publish(topic, payload.to_canonical())?;
    }
    Ok(msgs.len() as u64)
}

/// Publishes each mapped column of a trace CSV to its room topic.
pub fn parse_sim_output(
    csv_path: &Path,
    map: &[RoomColumn],
    bus: &Bus,
) -> Result<u64, IngestError> {
    publish_sim_output(std::fs::File::open(csv_path)?, map, bus)
}

/// Loads a trace CSV into the log through the bus, replacing any previous
/// contents of the mapped topics. Returns the number of events stored.
pub fn load_sim_output(
    csv_path: &Path,
    map: &[RoomColumn],
    bus: &Bus,
    log: &EventLog,
) -> Result<u64, IngestError> {
    let msgs = sim_messages(std::fs::File::open(csv_path)?, map)?;
    for m in map {
        log.drop_topic(&m.topic)?;
    }
    super::publish_into_log(bus, log, &msgs)
}
