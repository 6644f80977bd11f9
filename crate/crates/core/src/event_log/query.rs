//! The three query shapes the twin services run against stored topics.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate};

use super::{Event, EventLog, LogError, Result};

/// One row of a grouped average: the group key and the mean of the value field.
pub type KeyAverage = (String, f64);

/// UTC calendar date of a unix-seconds timestamp.
pub fn utc_date(unix_seconds: f64) -> Option<NaiveDate> {
    if !unix_seconds.is_finite() {
        return None;
    }
    DateTime::from_timestamp(unix_seconds.floor() as i64, 0).map(|dt| dt.date_naive())
}

fn schema(event: &Event, field: &str) -> LogError {
    LogError::Schema {
        topic: event.topic.clone(),
        offset: event.offset,
        field: field.to_owned(),
    }
}

impl EventLog {
    /// Mean of `value_field` per distinct `group_field`, over events whose
    /// UTC date (from the unix-seconds `time_field`) lies in `[from, to]`.
    /// Keys are compared as exact strings; output is sorted by key.
    pub fn avg_by_key(
        &self,
        topic: &str,
        group_field: &str,
        value_field: &str,
        time_field: &str,
        from: NaiveDate,
        to: NaiveDate,
    ) -> Result<Vec<KeyAverage>> {
        if from > to {
            return Err(LogError::InvalidRange);
        }
        self.scan(topic, |events| {
            let mut groups: BTreeMap<String, (f64, u64)> = BTreeMap::new();
            for event in events {
                let date = event
                    .payload
                    .number(time_field)
                    .and_then(utc_date)
                    .ok_or_else(|| schema(event, time_field))?;
                if date < from || date > to {
                    continue;
                }
                let key = event
                    .payload
                    .get(group_field)
                    .ok_or_else(|| schema(event, group_field))?;
                let value = event
                    .payload
                    .number(value_field)
                    .ok_or_else(|| schema(event, value_field))?;
                let slot = groups.entry(key.key_string()).or_insert((0.0, 0));
                slot.0 += value;
                slot.1 += 1;
            }
            Ok(groups
                .into_iter()
                .map(|(k, (sum, n))| (k, sum / n as f64))
                .collect())
        })?
    }

    /// First event in offset order whose `value_field` is at least `threshold`.
    pub fn first_crossing(&self, topic: &str, value_field: &str, threshold: f64) -> Result<Event> {
        self.first_where(topic, value_field, threshold)?
            .ok_or_else(|| LogError::NotReached {
                topic: topic.to_owned(),
                field: value_field.to_owned(),
                threshold,
            })
    }

    /// First event in offset order whose `time_field` is at least `t`.
    pub fn at_or_after(&self, topic: &str, time_field: &str, t: f64) -> Result<Event> {
        self.first_where(topic, time_field, t)?
            .ok_or_else(|| LogError::PastEnd {
                topic: topic.to_owned(),
                field: time_field.to_owned(),
                t,
            })
    }

    fn first_where(&self, topic: &str, field: &str, threshold: f64) -> Result<Option<Event>> {
        self.scan(topic, |events| {
            if events.is_empty() {
                return Err(LogError::EmptyTopic(topic.to_owned()));
            }
            for event in events {
                let value = event
                    .payload
                    .number(field)
                    .ok_or_else(|| schema(event, field))?;
                if value >= threshold {
                    return Ok(Some(event.clone()));
                }
            }
            Ok(None)
        })?
    }
}
