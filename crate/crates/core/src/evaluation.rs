//! Digital twin versus a fixed-time schedule.
//!
//! For every (room, month) scenario the heater service's switch-on times
//! are compared with a baseline that switches all heaters on at one time per
//! month, the mean of the service's times rounded to the feed cadence. Each
//! day's indoor temperature at the deadline is estimated from the room's
//! trace; comfort is the mean distance from the target and energy the mean
//! heater-on hours.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bus::Bus;
use crate::event_log::{EventLog, LogError};
use crate::heater::{
    self, routine_file_name, trace_bounds, write_routine, HeaterError, RoutineRow,
    TRACE_TEMP_FIELD, TRACE_TIME_FIELD,
};
use crate::ingestion::{weather_days, DaySeries, WeatherRow};
use crate::payload::format_number;
use crate::schedule::{month_abbrev, remaining_seconds, ClockTime, SchedulePolicy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no routine rows to average")]
    EmptyRoutines,
    #[error("no weather sample at {time} on {date}")]
    NoSample { date: String, time: ClockTime },
    #[error("scenario grid incomplete, missing: {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),
    #[error("scenario {0} appears more than once")]
    DuplicateScenario(String),
    #[error("baseline comfort is zero, improvement undefined")]
    ZeroBaseline,
    #[error(transparent)]
    Heater(#[from] HeaterError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean of all action times, rounded to the nearest `step_minutes` with
/// ties rounding up.
pub fn fixed_time_baseline(
    routines: &[&[RoutineRow]],
    step_minutes: u32,
) -> Result<ClockTime, EvalError> {
    let times: Vec<u64> = routines
        .iter()
        .flat_map(|r| r.iter())
        .map(|row| row.action_time.minutes().into())
        .collect();
    if times.is_empty() {
        return Err(EvalError::EmptyRoutines);
    }
    let (sum, n, step) = (
        times.iter().sum::<u64>(),
        times.len() as u64,
        u64::from(step_minutes.max(1)),
    );
    // floor(mean / step + 1/2) in integers
    let quarters = (2 * sum + step * n) / (2 * step * n);
    Ok(ClockTime::from_minutes((quarters * step) as u32)
        .expect("mean of clock times is a clock time"))
}

/// Baseline routine for the given days: every row at `time`, with the
/// weather temperature at that moment.
pub fn baseline_rows(time: ClockTime, days: &[DaySeries]) -> Result<Vec<RoutineRow>, EvalError> {
    days.iter()
        .map(|day| {
            let temperature_c = day.at(time).ok_or_else(|| EvalError::NoSample {
                date: day.label.clone(),
                time,
            })?;
            Ok(RoutineRow {
                date: day.label.clone(),
                action_time: time,
                temperature_c,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalEstimate {
    pub temperature_c: f64,
    /// The deadline fell past the end of the trace; the last value was used.
    pub extrapolated: bool,
}

/// Indoor temperature at the deadline: start the trace where it matches
/// the switch-on temperature and advance by the heating time.
pub fn estimate_final_temp(
    log: &EventLog,
    trace_topic: &str,
    row: &RoutineRow,
    policy: &SchedulePolicy,
) -> Result<FinalEstimate, EvalError> {
    let bounds = trace_bounds(log, trace_topic)?;
    if row.temperature_c > bounds.max_c {
        return Ok(FinalEstimate {
            temperature_c: row.temperature_c,
            extrapolated: false,
        });
    }
    let start = if row.temperature_c < bounds.min_c {
        bounds.start_s
    } else {
        log.first_crossing(trace_topic, TRACE_TEMP_FIELD, row.temperature_c)?
            .payload
            .number(TRACE_TIME_FIELD)
            .unwrap_or(bounds.start_s)
    };
    let at = start + remaining_seconds(row.action_time, policy.deadline) as f64;
    match log.at_or_after(trace_topic, TRACE_TIME_FIELD, at) {
        Ok(event) => Ok(FinalEstimate {
            temperature_c: event
                .payload
                .number(TRACE_TEMP_FIELD)
                .unwrap_or(bounds.max_c),
            extrapolated: false,
        }),
        Err(LogError::PastEnd { .. }) => Ok(FinalEstimate {
            temperature_c: bounds.max_c,
            extrapolated: true,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Mean absolute deviation from `target_c`.
pub fn comfort_metric(finals: &[f64], target_c: f64) -> f64 {
    if finals.is_empty() {
        return 0.0;
    }
    finals.iter().map(|t| (t - target_c).abs()).sum::<f64>() / finals.len() as f64
}

/// Mean heater-on hours per day.
pub fn energy_metric(rows: &[RoutineRow], deadline: ClockTime) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.on_hours(deadline)).sum::<f64>() / rows.len() as f64
}

/// Relative comfort gain of the twin over the baseline, in percent.
pub fn improvement_percent(twin: f64, baseline: f64) -> Result<f64, EvalError> {
    if baseline == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok((1.0 - twin / baseline) * 100.0)
}

/// Both schedules for one room and month.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub room: String,
    pub month: u32,
    pub twin: Vec<RoutineRow>,
    pub baseline: Vec<RoutineRow>,
    pub twin_finals: Vec<FinalEstimate>,
    pub baseline_finals: Vec<FinalEstimate>,
}

impl Scenario {
    pub fn cell(&self) -> String {
        cell_name(&self.room, self.month)
    }

    pub fn metrics(&self, policy: &SchedulePolicy) -> ScenarioMetrics {
        let temps = |f: &[FinalEstimate]| f.iter().map(|e| e.temperature_c).collect::<Vec<_>>();
        ScenarioMetrics {
            room: self.room.clone(),
            month: self.month,
            days: self.twin.len(),
            comfort_twin: comfort_metric(&temps(&self.twin_finals), policy.target_c),
            comfort_baseline: comfort_metric(&temps(&self.baseline_finals), policy.target_c),
            energy_twin: energy_metric(&self.twin, policy.deadline),
            energy_baseline: energy_metric(&self.baseline, policy.deadline),
        }
    }
}

fn cell_name(room: &str, month: u32) -> String {
    format!("{room}/{}", month_abbrev(month).unwrap_or("?"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub room: String,
    pub month: u32,
    pub days: usize,
    pub comfort_twin: f64,
    pub comfort_baseline: f64,
    pub energy_twin: f64,
    pub energy_baseline: f64,
}

/// Heater-on hours of both systems for one month, summed over days and
/// rooms.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthEnergy {
    pub month: u32,
    pub days: usize,
    pub rooms: usize,
    pub twin_hours: f64,
    pub baseline_hours: f64,
}

impl MonthEnergy {
    /// Difference of the room-averaged monthly totals.
    pub fn per_room_gap_hours(&self) -> f64 {
        (self.baseline_hours - self.twin_hours).abs() / self.rooms as f64
    }

    /// Largest gap the baseline's rounding allows, `days × step / 2`.
    pub fn rounding_bound_hours(&self, step_minutes: u32) -> f64 {
        self.days as f64 * f64::from(step_minutes) / 120.0
    }
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub scenarios: Vec<ScenarioMetrics>,
    /// Day-weighted means over every scenario.
    pub comfort_twin: f64,
    pub comfort_baseline: f64,
    pub improvement_pct: f64,
    pub energy: Vec<MonthEnergy>,
    pub baseline_times: Vec<(u32, ClockTime)>,
}

/// Checks that every (room, month) cell is present exactly once.
pub fn check_grid(
    scenarios: &[Scenario],
    rooms: &[String],
    months: &[u32],
) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    for s in scenarios {
        if !seen.insert((s.room.clone(), s.month)) {
            return Err(EvalError::DuplicateScenario(s.cell()));
        }
    }
    let missing: Vec<String> = rooms
        .iter()
        .flat_map(|r| months.iter().map(move |m| (r, *m)))
        .filter(|(r, m)| !seen.contains(&((*r).clone(), *m)))
        .map(|(r, m)| cell_name(r, m))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(EvalError::IncompleteGrid(missing))
    }
}

pub fn summarize(
    scenarios: &[Scenario],
    rooms: &[String],
    months: &[u32],
    policy: &SchedulePolicy,
) -> Result<Summary, EvalError> {
    check_grid(scenarios, rooms, months)?;
    let mut ordered: Vec<&Scenario> = Vec::new();
    for month in months {
        for room in rooms {
            ordered.extend(
                scenarios
                    .iter()
                    .find(|s| &s.room == room && s.month == *month),
            );
        }
    }
    let metrics: Vec<ScenarioMetrics> = ordered.iter().map(|s| s.metrics(policy)).collect();
    let all = |pick: fn(&Scenario) -> &[FinalEstimate]| {
        let temps: Vec<f64> = ordered
            .iter()
            .flat_map(|s| pick(s))
            .map(|e| e.temperature_c)
            .collect();
        comfort_metric(&temps, policy.target_c)
    };
    let comfort_twin = all(|s| &s.twin_finals);
    let comfort_baseline = all(|s| &s.baseline_finals);
    let energy = months
        .iter()
        .map(|&month| {
            let cells: Vec<&&Scenario> = ordered.iter().filter(|s| s.month == month).collect();
            let hours = |pick: fn(&Scenario) -> &[RoutineRow]| {
                cells
                    .iter()
                    .flat_map(|s| pick(s))
                    .map(|r| r.on_hours(policy.deadline))
                    .sum::<f64>()
            };
            MonthEnergy {
                month,
                days: cells.first().map_or(0, |s| s.twin.len()),
                rooms: cells.len(),
                twin_hours: hours(|s| &s.twin),
                baseline_hours: hours(|s| &s.baseline),
            }
        })
        .collect();
    let baseline_times = months
        .iter()
        .filter_map(|&m| {
            let s = ordered.iter().find(|s| s.month == m)?;
            Some((m, s.baseline.first()?.action_time))
        })
        .collect();
    Ok(Summary {
        scenarios: metrics,
        comfort_twin,
        comfort_baseline,
        improvement_pct: improvement_percent(comfort_twin, comfort_baseline)?,
        energy,
        baseline_times,
    })
}

fn metric_csv(summary: &Summary, pick: fn(&ScenarioMetrics) -> (f64, f64)) -> String {
    let mut out = String::from("room,month,digital-twin,fixed-time\n");
    for m in &summary.scenarios {
        let (twin, base) = pick(m);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            m.room,
            month_abbrev(m.month).unwrap_or("?"),
            format_number(round4(twin)),
            format_number(round4(base))
        );
    }
    out
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn comfort_csv(summary: &Summary) -> String {
    metric_csv(summary, |m| (m.comfort_twin, m.comfort_baseline))
}

pub fn energy_csv(summary: &Summary) -> String {
    metric_csv(summary, |m| (m.energy_twin, m.energy_baseline))
}

pub fn summary_text(summary: &Summary, policy: &SchedulePolicy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenarios: {}", summary.scenarios.len());
    let _ = writeln!(out, "comfort digital-twin: {:.4} C", summary.comfort_twin);
    let _ = writeln!(out, "comfort fixed-time: {:.4} C", summary.comfort_baseline);
    let _ = writeln!(out, "improvement: {:.2} %", summary.improvement_pct);
    let better = summary
        .scenarios
        .iter()
        .filter(|m| m.comfort_twin < m.comfort_baseline)
        .count();
    let _ = writeln!(
        out,
        "twin better in {better} of {} scenarios",
        summary.scenarios.len()
    );
    for (month, time) in &summary.baseline_times {
        let _ = writeln!(
            out,
            "fixed time {}: {time}",
            month_abbrev(*month).unwrap_or("?")
        );
    }
    for e in &summary.energy {
        let _ = writeln!(
            out,
            "energy {}: twin {:.2} h, fixed-time {:.2} h, per-room gap {:.3} h (bound {:.3} h)",
            month_abbrev(e.month).unwrap_or("?"),
            e.twin_hours,
            e.baseline_hours,
            e.per_room_gap_hours(),
            e.rounding_bound_hours(policy.step_minutes)
        );
    }
    out
}

/// Grouped bar chart, one group per category and one bar per series.
pub fn bar_chart_svg(
    title: &str,
    y_label: &str,
    categories: &[String],
    series: &[(&str, Vec<f64>)],
) -> String {
    const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 110.0);
    let group_w = 24.0 * series.len().max(1) as f64 + 16.0;
    let plot_w = group_w * categories.len().max(1) as f64;
    let plot_h = 300.0;
    let (width, height) = (left + plot_w + right, top + plot_h + bottom);
    let max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max);
    let y_max = if max > 0.0 { nice_ceiling(max) } else { 1.0 };
    let y = |v: f64| top + plot_h - v / y_max * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let v = y_max * f64::from(i) / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + plot_w,
            left - 5.0,
            y(v) + 4.0,
            format_number(round4(v)),
            y = y(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (ci, category) in categories.iter().enumerate() {
        let x0 = left + ci as f64 * group_w + 8.0;
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(ci).copied().unwrap_or(0.0).max(0.0);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="22" height="{:.1}" fill="{}"/>"#,
                x0 + 24.0 * si as f64,
                y(v),
                top + plot_h - y(v),
                COLORS[si % COLORS.len()]
            );
        }
        let cx = x0 + 12.0 * series.len() as f64;
        let _ = writeln!(
            svg,
            r#"<text transform="translate({cx:.1},{}) rotate(-45)" text-anchor="end">{}</text>"#,
            top + plot_h + 14.0,
            escape(category)
        );
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let lx = left + 150.0 * si as f64;
        let ly = height - 14.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{ly}">{}</text>"#,
            ly - 10.0,
            COLORS[si % COLORS.len()],
            lx + 16.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn nice_ceiling(x: f64) -> f64 {
    let magnitude = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|c| *c >= x)
        .unwrap_or(10.0 * magnitude)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes comfort/energy tables, charts and the summary into `out_dir`.
pub fn write_report(
    summary: &Summary,
    policy: &SchedulePolicy,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let categories: Vec<String> = summary
        .scenarios
        .iter()
        .map(|m| cell_name(&m.room, m.month))
        .collect();
    let column =
        |pick: fn(&ScenarioMetrics) -> f64| summary.scenarios.iter().map(pick).collect::<Vec<_>>();
    let comfort_svg = bar_chart_svg(
        "Absolute difference between target and final temperature",
        "mean |T - target| (C)",
        &categories,
        &[
            ("digital twin", column(|m| m.comfort_twin)),
            ("fixed time", column(|m| m.comfort_baseline)),
        ],
    );
    let energy_svg = bar_chart_svg(
        "Heater operation per day",
        "hours",
        &categories,
        &[
            ("digital twin", column(|m| m.energy_twin)),
            ("fixed time", column(|m| m.energy_baseline)),
        ],
    );
    let files = [
        ("comfort.csv", comfort_csv(summary)),
        ("energy.csv", energy_csv(summary)),
        ("comfort.svg", comfort_svg),
        ("energy.svg", energy_svg),
        ("summary.txt", summary_text(summary, policy)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// A room to evaluate and the log topic holding its trace.
#[derive(Debug, Clone)]
pub struct RoomTrace {
    pub room: String,
    pub trace_topic: String,
}

pub fn baseline_file_name(room: &str, month: u32) -> String {
    format!("baseline-routine-{room}-{month}.csv")
}

/// Runs the heater service for every room and month, builds the baselines,
/// estimates final temperatures and writes all routine files and the report.
pub fn run_evaluation(
    bus: &Bus,
    log: &EventLog,
    weather: &[WeatherRow<f64>],
    rooms: &[RoomTrace],
    months: &[u32],
    policy: &SchedulePolicy,
    out_dir: &Path,
) -> Result<(Vec<Scenario>, Summary), EvalError> {
    std::fs::create_dir_all(out_dir)?;
    for room in rooms {
        // Fail before replaying anything if a trace is unusable.
        heater::DecisionState::new(log, &room.room, &room.trace_topic, policy)?;
    }
    let mut scenarios = Vec::new();
    for &month in months {
        let feed = heater::replay_month_to_log(weather, month, policy, bus, log)?;
        let twin_rows: Vec<Vec<RoutineRow>> = std::thread::scope(|scope| {
            let workers: Vec<_> = rooms
                .iter()
                .map(|r| {
                    let feed = feed.clone();
                    scope.spawn(move || {
                        heater::run_from_log(log, &r.room, &r.trace_topic, feed, policy)
                    })
                })
                .collect();
            workers
                .into_iter()
                .map(|w| w.join().expect("heater worker panicked"))
                .collect::<Result<_, _>>()
        })?;
        let routines: Vec<&[RoutineRow]> = twin_rows.iter().map(Vec::as_slice).collect();
        let fixed = fixed_time_baseline(&routines, policy.step_minutes)?;
        let days = weather_days(weather, month, policy).map_err(HeaterError::from)?;
        let base = baseline_rows(fixed, &days)?;
        for (room, twin) in rooms.iter().zip(twin_rows) {
            let finals = |rows: &[RoutineRow]| {
                rows.iter()
                    .map(|r| estimate_final_temp(log, &room.trace_topic, r, policy))
                    .collect::<Result<Vec<_>, _>>()
            };
            write_routine(
                &twin,
                std::fs::File::create(out_dir.join(routine_file_name(&room.room, month)))?,
            )?;
            write_routine(
                &base,
                std::fs::File::create(out_dir.join(baseline_file_name(&room.room, month)))?,
            )?;
            scenarios.push(Scenario {
                room: room.room.clone(),
                month,
                twin_finals: finals(&twin)?,
                baseline_finals: finals(&base)?,
                twin,
                baseline: base.clone(),
            });
        }
    }
    let names: Vec<String> = rooms.iter().map(|r| r.room.clone()).collect();
    let summary = summarize(&scenarios, &names, months, policy)?;
    write_report(&summary, policy, out_dir)?;
    Ok((scenarios, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::Payload;

    fn row(time: &str, temp: f64) -> RoutineRow {
        RoutineRow {
            date: "1/Apr".into(),
            action_time: time.parse().unwrap(),
            temperature_c: temp,
        }
    }

    #[test]
    fn baseline_time_rounding() {
        let a = [row("17:15", 0.0), row("16:00", 0.0)];
        let b = [row("17:15", 0.0)];
        assert_eq!(
            fixed_time_baseline(&[&a, &b], 15).unwrap().to_string(),
            "16:45"
        );
        let same = [row("17:00", 0.0), row("17:00", 0.0)];
        assert_eq!(
            fixed_time_baseline(&[&same], 15).unwrap().to_string(),
            "17:00"
        );
        let tie = [row("16:45", 0.0), row("17:00", 0.0)];
        assert_eq!(
            fixed_time_baseline(&[&tie], 15).unwrap().to_string(),
            "17:00"
        );
        assert!(matches!(
            fixed_time_baseline(&[], 15),
            Err(EvalError::EmptyRoutines)
        ));
    }

    fn mini_trace() -> EventLog {
        let log = EventLog::in_memory();
        for (t, temp) in [(0, -7.0), (100, 0.0), (200, 10.0), (300, 20.0)] {
            log.append(
                "room",
                Payload::new()
                    .with("measured_time", t as i64)
                    .with("temperature", temp),
            )
            .unwrap();
        }
        log
    }

    #[test]
    fn final_temperature_examples() {
        let log = mini_trace();
        let p = SchedulePolicy::default();
        let est = |time: &str, temp: f64| {
            estimate_final_temp(&log, "room", &row(time, temp), &p).unwrap()
        };
        assert_eq!(
            est("17:55", -7.0),
            FinalEstimate {
                temperature_c: 20.0,
                extrapolated: false
            }
        );
        assert_eq!(est("18:00", 10.0).temperature_c, 10.0);
        assert_eq!(est("18:00", 25.0).temperature_c, 25.0);
        assert_eq!(
            est("17:00", 0.0),
            FinalEstimate {
                temperature_c: 20.0,
                extrapolated: true
            }
        );
    }

    #[test]
    fn metric_examples() {
        assert!((comfort_metric(&[19.6, 20.3], 20.0) - 0.35).abs() < 1e-12);
        assert_eq!(comfort_metric(&[20.0, 20.0], 20.0), 0.0);
        let deadline: ClockTime = "18:00".parse().unwrap();
        assert_eq!(energy_metric(&[row("17:15", 0.0)], deadline), 0.75);
        assert_eq!(energy_metric(&[row("18:00", 0.0)], deadline), 0.0);
        let pct = improvement_percent(0.38, 2.56).unwrap();
        assert!((pct - 85.0).abs() <= 1.0, "{pct}");
    }

    fn scenario(room: &str, month: u32) -> Scenario {
        Scenario {
            room: room.into(),
            month,
            twin: vec![row("17:00", 0.0)],
            baseline: vec![row("17:00", 0.0)],
            twin_finals: vec![FinalEstimate {
                temperature_c: 20.1,
                extrapolated: false,
            }],
            baseline_finals: vec![FinalEstimate {
                temperature_c: 21.0,
                extrapolated: false,
            }],
        }
    }

    #[test]
    fn incomplete_grid_lists_missing_cells() {
        let rooms = vec!["a".to_owned(), "b".to_owned()];
        let err = check_grid(&[scenario("a", 1), scenario("b", 2)], &rooms, &[1, 2]).unwrap_err();
        match err {
            EvalError::IncompleteGrid(missing) => assert_eq!(missing, vec!["a/Feb", "b/Jan"]),
            other => panic!("{other}"),
        }
        assert!(check_grid(&[scenario("a", 1), scenario("a", 1)], &rooms[..1], &[1]).is_err());
    }

    #[test]
    fn report_tables_are_deterministic() {
        let rooms = vec!["a".to_owned()];
        let s = [scenario("a", 1), scenario("a", 2)];
        let p = SchedulePolicy::default();
        let summary = summarize(&s, &rooms, &[1, 2], &p).unwrap();
        assert_eq!(
            comfort_csv(&summary),
            "room,month,digital-twin,fixed-time\na,Jan,0.1,1\na,Feb,0.1,1\n"
        );
        assert!((summary.improvement_pct - 90.0).abs() < 1e-9);
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&summary, &p, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let svg = std::fs::read_to_string(dir.path().join("comfort.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), 4 + 2);
    }
}
