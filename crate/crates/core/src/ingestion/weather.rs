use std::io::Read;
use std::path::Path;

use crate::bus::Bus;
use crate::num::Float;
use crate::payload::Payload;
use crate::schedule::{day_label, ClockTime, SchedulePolicy};

use super::{IngestError, ReplaySpeed, ReplayStats};

/// One hourly weather observation. `hour` runs 1..=24, hour `h` meaning
/// clock `h:00` of that day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherRow<T> {
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    pub temp_c: T,
}

impl<T> WeatherRow<T> {
    fn clock(&self) -> ClockTime {
        ClockTime::hm(self.hour, 0).expect("hour validated on read")
    }

    fn describe(&self) -> String {
        format!("{}/{} {}h", self.day, self.month, self.hour)
    }
}

/// Reads a `month,day,hour,temperature` CSV.
pub fn read_weather_csv(input: impl Read) -> Result<Vec<WeatherRow<f64>>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| IngestError::MissingColumn(name.to_owned()))
    };
    let (mi, di, hi, ti) = (
        col("month")?,
        col("day")?,
        col("hour")?,
        col("temperature")?,
    );
    let mut rows: Vec<WeatherRow<f64>> = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record?;
        let line = n as u64 + 2;
        let bad = |reason: String| IngestError::BadRow { line, reason };
        let int = |i: usize| {
            record[i]
                .parse::<u32>()
                .map_err(|_| bad(format!("bad integer `{}`", &record[i])))
        };
        let row = WeatherRow {
            month: int(mi)?,
            day: int(di)?,
            hour: int(hi)?,
            temp_c: record[ti]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad temperature `{}`", &record[ti])))?,
        };
        if !(1..=12).contains(&row.month)
            || !(1..=31).contains(&row.day)
            || !(1..=24).contains(&row.hour)
        {
            return Err(bad(format!("date fields out of range: {}", row.describe())));
        }
        if !row.temp_c.is_finite() {
            return Err(bad("non-finite temperature".into()));
        }
        if let Some(prev) = rows.last() {
            if (prev.month, prev.day, prev.hour) >= (row.month, row.day, row.hour) {
                return Err(bad(format!(
                    "{} does not follow {}",
                    row.describe(),
                    prev.describe()
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Linear interpolation of hourly rows into `steps_per_hour` samples per
/// hour. Between anchors `a` and `b` the samples are `a + k(b - a)/n` for
/// `k = 0..n`; the last row contributes only its anchor.
pub fn interpolate<T: Float>(
    rows: &[WeatherRow<T>],
    steps_per_hour: u32,
) -> Result<Vec<(ClockTime, T)>, IngestError> {
    if steps_per_hour == 0 || 60 % steps_per_hour != 0 {
        return Err(IngestError::BadStep(
            60u32.checked_div(steps_per_hour).unwrap_or(0),
        ));
    }
    let step = 60 / steps_per_hour;
    let n = T::of(f64::from(steps_per_hour));
    let mut out = Vec::with_capacity(rows.len() * steps_per_hour as usize);
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (a.month, a.day, a.hour + 1) != (b.month, b.day, b.hour) {
            return Err(IngestError::Gap {
                from: a.describe(),
                to: b.describe(),
            });
        }
        let base = a.clock().minutes();
        for k in 0..steps_per_hour {
            let value = a.temp_c + T::of(f64::from(k)) * (b.temp_c - a.temp_c) / n;
            let at = ClockTime::from_minutes(base + k * step).expect("within the day");
            out.push((at, value));
        }
    }
    if let Some(last) = rows.last() {
        out.push((last.clock(), last.temp_c));
    }
    Ok(out)
}

pub fn interpolate_quarter_hour<T: Float>(
    rows: &[WeatherRow<T>],
) -> Result<Vec<(ClockTime, T)>, IngestError> {
    interpolate(rows, 4)
}

/// One day's interpolated feed inside the policy window.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySeries {
    pub month: u32,
    pub day: u32,
    pub label: String,
    pub samples: Vec<(ClockTime, f64)>,
}

impl DaySeries {
    pub fn at(&self, t: ClockTime) -> Option<f64> {
        self.samples.iter().find(|(c, _)| *c == t).map(|(_, v)| *v)
    }
}

/// Selects `month`, keeps the hours covering the policy window, interpolates
/// at the policy cadence and trims to `[away_start, deadline]` inclusive.
pub fn weather_days(
    rows: &[WeatherRow<f64>],
    month: u32,
    policy: &SchedulePolicy,
) -> Result<Vec<DaySeries>, IngestError> {
    policy.validate()?;
    if policy.step_minutes == 0 || 60 % policy.step_minutes != 0 {
        return Err(IngestError::BadStep(policy.step_minutes));
    }
    let first_hour = policy.away_start.hour();
    let last_hour = policy.deadline.minutes().div_ceil(60);
    let month_rows: Vec<_> = rows.iter().filter(|r| r.month == month).copied().collect();
    if month_rows.is_empty() {
        return Err(IngestError::MonthNotFound(month));
    }
    let mut days = Vec::new();
    for chunk in month_rows.chunk_by(|a, b| a.day == b.day) {
        let window: Vec<_> = chunk
            .iter()
            .filter(|r| (first_hour..=last_hour).contains(&r.hour))
            .copied()
            .collect();
        if window.is_empty() {
            continue;
        }
        let samples = interpolate(&window, 60 / policy.step_minutes)?
            .into_iter()
            .filter(|(t, _)| policy.contains(*t))
            .collect();
        let day = chunk[0].day;
        days.push(DaySeries {
            month,
            day,
            label: day_label(month, day)?,
            samples,
        });
    }
    Ok(days)
}

/// The `temperature` feed for the given days: a `{"day": "<d>/<Mon>"}`
/// marker before each day, then `{"temperature": <C>, "time": "HH:MM"}` per
/// sample.
pub fn weather_messages(days: &[DaySeries]) -> Vec<Payload> {
    let mut out = Vec::new();
    for day in days {
        out.push(Payload::new().with("day", day.label.as_str()));
        for (t, temp) in &day.samples {
            out.push(
                Payload::new()
                    .with("temperature", *temp)
                    .with("time", t.to_string()),
            );
        }
    }
    out
}

/// Publishes one month of the weather feed on `topic`.
pub fn replay_weather(
    csv_path: &Path,
    month: u32,
    policy: &SchedulePolicy,
    bus: &Bus,
    topic: &str,
    speed: ReplaySpeed,
) -> Result<ReplayStats, IngestError> {
    let rows = read_weather_csv(std::fs::File::open(csv_path)?)?;
    let days = weather_days(&rows, month, policy)?;
    let mut stats = ReplayStats {
        rows: days.len() as u64,
        ..Default::default()
    };
    for (i, msg) in weather_messages(&days).iter().enumerate() {
        if i > 0 {
            speed.pause();
        }
        bus.publish(topic, msg.to_canonical())?;
        stats.messages += 1;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::canonicalize;

    fn row(day: u32, hour: u32, temp_c: f64) -> WeatherRow<f64> {
        WeatherRow {
            month: 1,
            day,
            hour,
            temp_c,
        }
    }

    #[test]
    fn quarter_hour_fixture() {
        let out = interpolate_quarter_hour(&[row(1, 1, -1.9), row(1, 2, -3.6)]).unwrap();
        let expected = [
            ("01:00", -1.9),
            ("01:15", -2.325),
            ("01:30", -2.75),
            ("01:45", -3.175),
            ("02:00", -3.6),
        ];
        assert_eq!(out.len(), expected.len());
        for ((t, v), (et, ev)) in out.iter().zip(expected) {
            assert_eq!(t.to_string(), et);
            assert!((v - ev).abs() < 1e-12, "{t}: {v} vs {ev}");
        }
    }

    #[test]
    fn constant_and_single() {
        let out = interpolate_quarter_hour(&[row(1, 5, 5.0), row(1, 6, 5.0)]).unwrap();
        assert!(out.iter().all(|(_, v)| *v == 5.0));
        let out = interpolate_quarter_hour(&[row(1, 5, 3.0)]).unwrap();
        assert_eq!(out, vec![(ClockTime::hm(5, 0).unwrap(), 3.0)]);
        assert!(interpolate_quarter_hour::<f64>(&[]).unwrap().is_empty());
    }

    #[test]
    fn generic_over_f32() {
        let rows = [
            WeatherRow {
                month: 1,
                day: 1,
                hour: 1,
                temp_c: -1.9f32,
            },
            WeatherRow {
                month: 1,
                day: 1,
                hour: 2,
                temp_c: -3.6f32,
            },
        ];
        let out = interpolate_quarter_hour(&rows).unwrap();
        assert!((out[1].1 - (-2.325f32)).abs() < 1e-6);
    }

    #[test]
    fn gaps_name_the_rows() {
        let err = interpolate_quarter_hour(&[row(1, 1, 0.0), row(1, 3, 0.0)]).unwrap_err();
        match err {
            IngestError::Gap { from, to } => {
                assert_eq!(from, "1/1 1h");
                assert_eq!(to, "1/1 3h");
            }
            other => panic!("{other:?}"),
        }
        assert!(interpolate_quarter_hour(&[row(1, 24, 0.0), row(2, 1, 0.0)]).is_err());
    }

    fn day_rows(day: u32) -> Vec<WeatherRow<f64>> {
        (1..=24).map(|h| row(day, h, f64::from(h))).collect()
    }

    #[test]
    fn window_yields_41_samples_per_day() {
        let rows: Vec<_> = day_rows(1).into_iter().chain(day_rows(2)).collect();
        let days = weather_days(&rows, 1, &SchedulePolicy::default()).unwrap();
        assert_eq!(days.len(), 2);
        // 10 hourly intervals x 4 + the 18:00 anchor
        assert_eq!(days[0].samples.len(), 41);
        assert_eq!(days[0].samples[0].0.to_string(), "08:00");
        assert_eq!(days[0].samples[1].0.to_string(), "08:15");
        assert_eq!(days[0].samples[40], (ClockTime::hm(18, 0).unwrap(), 18.0));
        assert_eq!(days[0].label, "1/Jan");
        assert!(matches!(
            weather_days(&rows, 2, &SchedulePolicy::default()),
            Err(IngestError::MonthNotFound(2))
        ));
    }

    #[test]
    fn messages_match_listing() {
        let day = DaySeries {
            month: 1,
            day: 1,
            label: "1/Jan".into(),
            samples: vec![(ClockTime::hm(10, 15).unwrap(), 19.0)],
        };
        let msgs = weather_messages(&[day]);
        assert_eq!(msgs[0].to_canonical(), r#"{"day":"1/Jan"}"#);
        assert_eq!(
            msgs[1].to_canonical(),
            canonicalize(r#"{"temperature": 19, "time": "10:15"}"#).unwrap()
        );
        let nine_fifteen = ClockTime::hm(9, 15).unwrap();
        assert_eq!(nine_fifteen.to_string(), "09:15");
    }

    #[test]
    fn reads_the_hourly_weather_layout() {
        let csv = "month,day,hour,temperature\n1,1,1,-1.9\n1,1,2,-3.6\n";
        let rows = read_weather_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows, vec![row(1, 1, -1.9), row(1, 2, -3.6)]);
        assert!(
            read_weather_csv("month,day,hour,temperature\n1,1,2,0\n1,1,1,0\n".as_bytes()).is_err()
        );
        assert!(read_weather_csv("month,day,hour,temperature\n13,1,1,0\n".as_bytes()).is_err());
        assert!(matches!(
            read_weather_csv("month,day,temperature\n".as_bytes()),
            Err(IngestError::MissingColumn(_))
        ));
    }

    #[test]
    fn replay_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let mut csv = String::from("month,day,hour,temperature\n");
        for r in day_rows(1) {
            csv.push_str(&format!("1,{},{},{}\n", r.day, r.hour, r.temp_c));
        }
        std::fs::write(&path, csv).unwrap();
        let bus = Bus::new();
        let sub = bus.subscribe("temperature").unwrap();
        let stats = replay_weather(
            &path,
            1,
            &SchedulePolicy::default(),
            &bus,
            "temperature",
            ReplaySpeed::INSTANT,
        )
        .unwrap();
        assert_eq!(stats.messages, 42);
        assert_eq!(sub.try_recv().unwrap().payload, r#"{"day":"1/Jan"}"#);
        assert_eq!(
            sub.try_recv().unwrap().payload,
            r#"{"temperature":8,"time":"08:00"}"#
        );
    }
}
