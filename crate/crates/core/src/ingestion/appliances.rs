use std::io::Read;
use std::path::Path;

use crate::bus::Bus;
use crate::payload::Payload;

use super::{IngestError, ReplaySpeed, ReplayStats};

/// Publish order within a row for the usual four machines.
pub const DEFAULT_APPLIANCE_ORDER: [&str; 4] = ["Dish.", "Oven", "Fridge", "Micro."];

/// One CSV row: a unix-seconds timestamp and kW per appliance, in publish order.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplianceRow {
    pub time: i64,
    pub power_kw: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct ApplianceCsvOptions {
    /// Header of the timestamp column, matched case-insensitively.
    pub time_column: String,
    /// Appliances listed here are published first, in this order; any other
    /// columns follow in header order.
    pub order: Vec<String>,
}

impl Default for ApplianceCsvOptions {
    fn default() -> Self {
        Self {
            time_column: "time".into(),
            order: DEFAULT_APPLIANCE_ORDER
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Parses an appliance CSV. Malformed rows are skipped and counted.
pub fn read_appliance_csv(
    input: impl Read,
    opts: &ApplianceCsvOptions,
) -> Result<(Vec<ApplianceRow>, u64), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok((Vec::new(), 0));
    }
    let time_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(&opts.time_column))
        .ok_or_else(|| IngestError::MissingColumn(opts.time_column.clone()))?;
    let mut columns: Vec<(usize, String)> = Vec::new();
    for name in &opts.order {
        if let Some(i) = headers.iter().position(|h| h == name) {
            columns.push((i, name.clone()));
        }
    }
    for (i, h) in headers.iter().enumerate() {
        if i != time_idx && !columns.iter().any(|(j, _)| *j == i) {
            columns.push((i, h.to_owned()));
        }
    }
    if columns.is_empty() {
        return Err(IngestError::NoAppliances);
    }

    let mut rows: Vec<ApplianceRow> = Vec::new();
    let mut skipped = 0;
    for (n, record) in reader.records().enumerate() {
        let line = n as u64 + 2;
        let parsed = record.map_err(IngestError::from).and_then(|record| {
            let bad = |reason: String| IngestError::BadRow { line, reason };
            if record.len() != headers.len() {
                return Err(bad(format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    record.len()
                )));
            }
            let time: i64 = record[time_idx]
                .parse()
                .map_err(|_| bad(format!("bad time `{}`", &record[time_idx])))?;
            if let Some(prev) = rows.last() {
                if time <= prev.time {
                    return Err(bad(format!("time {time} not after {}", prev.time)));
                }
            }
            let mut power_kw = Vec::with_capacity(columns.len());
            for (i, name) in &columns {
                let v: f64 = record[*i]
                    .parse()
                    .map_err(|_| bad(format!("bad power `{}`", &record[*i])))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(bad(format!(
                        "power {v} for {name} must be finite and non-negative"
                    )));
                }
                power_kw.push((name.clone(), v));
            }
            Ok(ApplianceRow { time, power_kw })
        });
        match parsed {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("skipping appliance row: {e}");
                skipped += 1;
            }
        }
    }
    Ok((rows, skipped))
}

/// The per-appliance messages for one row:
/// `{"equipment": <name>, "power": <kW>, "time": <unix seconds>}`.
pub fn appliance_messages(row: &ApplianceRow) -> Vec<Payload> {
    row.power_kw
        .iter()
        .map(|(name, power)| {
            Payload::new()
                .with("equipment", name.as_str())
                .with("power", *power)
                .with("time", row.time)
        })
        .collect()
}

/// Publishes every row of the CSV on `topic`, pacing rows by `speed`.
pub fn replay_appliances(
    csv_path: &Path,
    bus: &Bus,
    topic: &str,
    speed: ReplaySpeed,
    opts: &ApplianceCsvOptions,
) -> Result<ReplayStats, IngestError> {
    let file = std::fs::File::open(csv_path)?;
    let (rows, skipped) = read_appliance_csv(file, opts)?;
    let mut stats = ReplayStats {
        skipped,
        ..Default::default()
    };
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            speed.pause();
        }
        for msg in appliance_messages(row) {
            bus.publish(topic, msg.to_canonical())?;
            stats.messages += 1;
        }
        stats.rows += 1;
    }
    Ok(stats)
}
