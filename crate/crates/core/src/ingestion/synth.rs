//! Deterministic stand-ins for the appliance and weather datasets.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::payload::format_number;
use crate::schedule::{days_in_month, ScheduleError};

use super::DEFAULT_APPLIANCE_ORDER;

/// First timestamp of the synthetic appliance series (2016-01-01 05:00 UTC).
const APPLIANCE_EPOCH: i64 = 1_451_624_400;

/// Mean outdoor temperature per month, °C.
const MONTHLY_MEAN_C: [f64; 12] = [
    0.5, 1.5, 5.5, 9.5, 14.0, 17.0, 19.0, 18.5, 15.0, 10.0, 4.5, 1.5,
];
/// Half the typical day/night swing, °C.
const DAILY_AMPLITUDE_C: f64 = 4.0;

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (v * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Standby kW, running kW range, chance per row of starting a cycle and
/// cycle length range in rows.
type Profile = (f64, (f64, f64), f64, (u32, u32));

/// Appliance power CSV (`Time,Dish.,Oven,Fridge,Micro.`), one row per second.
///
/// Each machine idles at a small standby draw and occasionally runs a cycle
/// at its rated power, so every colour band gets exercised.
pub fn synth_appliances(seed: u64, rows: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: [Profile; 4] = [
        (0.0, (1.5, 3.4), 0.01, (20, 120)),
        (0.02, (1.8, 3.0), 0.008, (30, 200)),
        (0.12, (0.15, 0.4), 0.05, (10, 60)),
        (0.01, (0.8, 1.3), 0.01, (5, 30)),
    ];
    let mut remaining = [0u32; 4];
    let mut level = [0f64; 4];
    let mut out = String::from("Time");
    for name in DEFAULT_APPLIANCE_ORDER {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in 0..rows {
        let _ = write!(out, "{}", APPLIANCE_EPOCH + r as i64);
        for (i, (standby, (lo, hi), start_p, (min_len, max_len))) in profiles.iter().enumerate() {
            if remaining[i] == 0 && rng.random::<f64>() < *start_p {
                remaining[i] = rng.random_range(*min_len..=*max_len);
                level[i] = rng.random_range(*lo..*hi);
            }
            let kw = if remaining[i] > 0 {
                remaining[i] -= 1;
                level[i] + rng.random_range(-0.05..0.05)
            } else {
                *standby
            };
            out.push(',');
            out.push_str(&format_number(round_to(kw.max(0.0), 2)));
        }
        out.push('\n');
    }
    out
}

/// Hourly weather CSV (`month,day,hour,temperature`) for the given months of
/// a non-leap year: a daily sinusoid peaking mid-afternoon around the month's
/// mean, shifted by a slowly wandering day-to-day offset, plus small noise.
pub fn synth_weather(seed: u64, months: &[u32]) -> Result<String, ScheduleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("month,day,hour,temperature\n");
    let mut offset = 0.0f64;
    for &month in months {
        let days = days_in_month(month)?;
        let mean = MONTHLY_MEAN_C[(month - 1) as usize];
        for day in 1..=days {
            offset = 0.6 * offset + rng.random_range(-2.5..2.5);
            let amplitude = DAILY_AMPLITUDE_C * rng.random_range(0.6..1.3);
            for hour in 1..=24u32 {
                let phase = 2.0 * PI * (f64::from(hour) - 9.0) / 24.0;
                let t = mean + offset + amplitude * phase.sin() + rng.random_range(-0.3..0.3);
                let _ = writeln!(
                    out,
                    "{month},{day},{hour},{}",
                    format_number(round_to(t, 1))
                );
            }
        }
    }
    Ok(out)
}
