//! Room heating simulator.
//!
//! Each room is a rectangle of air enclosed by a wall ring (optionally with a
//! window segment) inside a one-cell ring held at the outdoor temperature.
//! A heater block injects constant power and a single wall-mounted
//! thermometer is sampled at a fixed cadence, producing the heating curve
//! the heater service queries.
//!
//! Air uses an effective diffusivity well above the molecular value to stand
//! in for convective mixing, which this conduction-only model does not
//! resolve.

mod grid;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::RoomColumn;
use crate::num::Float;
use crate::payload::format_number;

pub use grid::{Boundary, Grid, Material, DIVERGENCE_LIMIT_C};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error("simulation diverged at cell ({x}, {y}): {value} °C")]
    Diverged { x: usize, y: usize, value: f64 },
    #[error("no traces to export")]
    NoTraces,
    #[error("trace `{0}` is sampled on a different time grid")]
    MismatchedGrids(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    North,
    South,
    East,
    West,
}

/// A glazed segment replacing part of one exterior wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec<T> {
    pub side: Side,
    /// Distance from the wall's west (or south) interior corner, metres.
    pub offset_m: T,
    pub length_m: T,
    pub material: Material<T>,
}

/// Rectangular heater footprint, in metres from the interior south-west corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeaterSpec<T> {
    pub x_m: T,
    pub y_m: T,
    pub width_m: T,
    pub height_m: T,
    /// Total output, W per metre of depth.
    pub power_w: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec<T> {
    pub name: String,
    /// Interior width (west–east), metres.
    pub width_m: T,
    /// Interior depth (south–north), metres.
    pub height_m: T,
    pub wall_thickness_m: T,
    pub wall: Material<T>,
    pub window: Option<WindowSpec<T>>,
    pub heater: HeaterSpec<T>,
    pub thermometer: Thermometer<T>,
}

/// Wall-mounted thermometer position, metres from the interior south-west
/// corner. Readings are bilinearly interpolated between cell centres so the
/// probe sits at the same physical spot at every grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thermometer<T> {
    pub x_m: T,
    pub y_m: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    deny_unknown_fields,
    bound(deserialize = "T: Float + Deserialize<'de>")
)]
pub struct SimConfig<T> {
    pub dx_m: T,
    pub dt_s: T,
    /// Effective air diffusivity, m²/s.
    pub alpha_air: T,
    /// Volumetric heat capacity of air, J/(m³·K).
    pub air_heat_capacity: T,
    pub outdoor_c: T,
    pub initial_c: T,
    pub duration_s: u32,
    pub sample_every_s: u32,
    pub boundary: Boundary,
}

impl<T: Float> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            dx_m: T::of(0.1),
            dt_s: T::of(4.0),
            alpha_air: T::of(5.0e-4),
            air_heat_capacity: T::of(1200.0),
            outdoor_c: T::of(-7.0),
            initial_c: T::of(-7.0),
            duration_s: 46_800,
            sample_every_s: 100,
            boundary: Boundary::Dirichlet,
        }
    }
}

impl<T: Float> SimConfig<T> {
    pub fn air(&self) -> Material<T> {
        Material {
            conductivity: self.alpha_air * self.air_heat_capacity,
            heat_capacity: self.air_heat_capacity,
        }
    }

    /// Same physics on a grid refined by `factor`, with the time step shrunk
    /// to keep the stability ratio.
    pub fn refined(&self, factor: u32) -> Self {
        let f = T::of(f64::from(factor));
        Self {
            dx_m: self.dx_m / f,
            dt_s: self.dt_s / (f * f),
            ..self.clone()
        }
    }

    pub fn sample_count(&self) -> u32 {
        self.duration_s / self.sample_every_s.max(1)
    }
}

/// Heating curve of one room: `(seconds since heater on, °C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace<T> {
    pub room: String,
    pub samples: Vec<(u32, T)>,
}

impl<T: Float> SimTrace<T> {
    /// Running maximum of the samples, so the curve never decreases.
    pub fn monotone(mut self) -> Self {
        let mut best = T::neg_infinity();
        for (_, v) in &mut self.samples {
            best = best.max(*v);
            *v = best;
        }
        self
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    /// Time of the first sample at or above `temp_c`.
    pub fn first_crossing(&self, temp_c: T) -> Option<u32> {
        self.samples
            .iter()
            .find(|(_, v)| *v >= temp_c)
            .map(|(t, _)| *t)
    }

    pub fn at(&self, time_s: u32) -> Option<T> {
        self.samples
            .iter()
            .find(|(t, _)| *t == time_s)
            .map(|(_, v)| *v)
    }
}

fn cells<T: Float>(length: T, dx: T) -> usize {
    (length / dx).round().to_usize().unwrap_or(0)
}

/// Grid for a room plus the thermometer location.
#[derive(Debug, Clone)]
pub struct RoomGrid<T> {
    pub grid: Grid<T>,
    probe: Probe<T>,
}

#[derive(Debug, Clone, Copy)]
struct Probe<T> {
    x: usize,
    y: usize,
    fx: T,
    fy: T,
}

impl<T: Float> RoomGrid<T> {
    /// Current thermometer reading.
    pub fn reading(&self) -> T {
        let Probe { x, y, fx, fy } = self.probe;
        let g = &self.grid;
        let one = T::one();
        let bottom = g.temp(x, y) * (one - fx) + g.temp(x + 1, y) * fx;
        let top = g.temp(x, y + 1) * (one - fx) + g.temp(x + 1, y + 1) * fx;
        bottom * (one - fy) + top * fy
    }
}

/// Lays out `room` on the configured grid with every free cell at
/// `initial_c` and the outer ring clamped to `outdoor_c` (for a Dirichlet
/// boundary).
// The negated comparisons also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn build_room<T: Float>(
    room: &RoomSpec<T>,
    config: &SimConfig<T>,
) -> Result<RoomGrid<T>, SimError> {
    let dx = config.dx_m;
    if !(dx > T::zero()) || !(config.dt_s > T::zero()) {
        return Err(invalid("dx and dt must be positive"));
    }
    if !(room.width_m > T::zero() && room.height_m > T::zero() && room.wall_thickness_m > T::zero())
    {
        return Err(invalid(format!(
            "room `{}` needs positive dimensions",
            room.name
        )));
    }
    let (wx, wy, wc) = (
        cells(room.width_m, dx),
        cells(room.height_m, dx),
        cells(room.wall_thickness_m, dx),
    );
    if wx < 3 || wy < 3 || wc < 1 {
        return Err(invalid(format!(
            "room `{}` is under-resolved at dx = {dx}",
            room.name
        )));
    }
    let (nx, ny) = (wx + 2 * wc + 2, wy + 2 * wc + 2);
    let air = config.air();
    let mut grid = Grid::uniform(nx, ny, dx, room.wall, config.initial_c);
    let (x0, y0) = (1 + wc, 1 + wc);
    for y in y0..y0 + wy {
        for x in x0..x0 + wx {
            grid.set_material(x, y, air);
        }
    }

    if let Some(window) = &room.window {
        let start = cells(window.offset_m, dx);
        let len = cells(window.length_m, dx);
        let along = match window.side {
            Side::North | Side::South => wx,
            Side::East | Side::West => wy,
        };
        if len == 0 || start + len > along {
            return Err(invalid(format!(
                "window of `{}` does not fit its wall",
                room.name
            )));
        }
        for a in start..start + len {
            for d in 0..wc {
                let (x, y) = match window.side {
                    Side::South => (x0 + a, 1 + d),
                    Side::North => (x0 + a, y0 + wy + d),
                    Side::West => (1 + d, y0 + a),
                    Side::East => (x0 + wx + d, y0 + a),
                };
                grid.set_material(x, y, window.material);
            }
        }
    }

    let h = &room.heater;
    let (hx, hy) = (x0 + cells(h.x_m, dx), y0 + cells(h.y_m, dx));
    let (hw, hh) = (cells(h.width_m, dx).max(1), cells(h.height_m, dx).max(1));
    if hx + hw > x0 + wx || hy + hh > y0 + wy {
        return Err(invalid(format!(
            "heater of `{}` lies outside the room",
            room.name
        )));
    }
    if !(h.power_w >= T::zero()) {
        return Err(invalid("heater power must be non-negative"));
    }
    let per_cell = h.power_w / T::of((hw * hh) as f64);
    for y in hy..hy + hh {
        for x in hx..hx + hw {
            grid.set_source(x, y, per_cell);
        }
    }

    if config.boundary == Boundary::Dirichlet {
        // A perfectly conducting ring puts the outdoor temperature on the
        // wall's outer face rather than half a cell beyond it, which keeps
        // the wall resistance independent of dx.
        let surface = Material {
            conductivity: T::of(OUTDOOR_SURFACE_CONDUCTIVITY),
            heat_capacity: room.wall.heat_capacity,
        };
        for x in 0..nx {
            grid.set_material(x, 0, surface);
            grid.set_material(x, ny - 1, surface);
        }
        for y in 0..ny {
            grid.set_material(0, y, surface);
            grid.set_material(nx - 1, y, surface);
        }
        grid.clamp_ring(config.outdoor_c);
    }

    // Cell (x0 + i) has its centre at (i + 1/2) dx from the interior corner.
    let half = T::of(0.5);
    let gx = room.thermometer.x_m / dx - half;
    let gy = room.thermometer.y_m / dx - half;
    let (ix, iy) = (gx.floor(), gy.floor());
    let outside = || {
        invalid(format!(
            "thermometer of `{}` is outside the room",
            room.name
        ))
    };
    if !(ix >= T::zero() && iy >= T::zero()) {
        return Err(outside());
    }
    let (ix, iy) = (
        ix.to_usize().ok_or_else(outside)?,
        iy.to_usize().ok_or_else(outside)?,
    );
    if ix + 1 >= wx || iy + 1 >= wy {
        return Err(outside());
    }
    let probe = Probe {
        x: x0 + ix,
        y: y0 + iy,
        fx: gx - gx.floor(),
        fy: gy - gy.floor(),
    };
    Ok(RoomGrid { grid, probe })
}

fn check_config<T: Float>(
    room: &RoomSpec<T>,
    config: &SimConfig<T>,
    grid: &Grid<T>,
) -> Result<u32, SimError> {
    let dx2 = config.dx_m * config.dx_m;
    let mut max_alpha = config.air().diffusivity().max(room.wall.diffusivity());
    if let Some(w) = &room.window {
        max_alpha = max_alpha.max(w.material.diffusivity());
    }
    let eps = T::of(1e-9);
    if config.dt_s > dx2 / (T::of(4.0) * max_alpha) * (T::one() + eps)
        || config.dt_s > grid.stable_dt() * (T::one() + eps)
    {
        return Err(invalid(format!(
            "dt = {} s exceeds the stability limit {} s",
            config.dt_s,
            grid.stable_dt().min(dx2 / (T::of(4.0) * max_alpha))
        )));
    }
    if config.sample_every_s == 0 || config.duration_s < config.sample_every_s {
        return Err(invalid("duration must cover at least one sample interval"));
    }
    let per_sample = T::of(f64::from(config.sample_every_s)) / config.dt_s;
    let steps = per_sample.round();
    if (per_sample - steps).abs() > T::of(1e-6) {
        return Err(invalid(
            "sample interval must be a whole number of time steps",
        ));
    }
    steps
        .to_u32()
        .ok_or_else(|| invalid("too many steps per sample"))
}

/// Raw thermometer readings every `sample_every_s`, starting one interval
/// after the heater switches on.
pub fn run_raw<T: Float>(
    room: &RoomSpec<T>,
    config: &SimConfig<T>,
) -> Result<SimTrace<T>, SimError> {
    let mut room_grid = build_room(room, config)?;
    let steps_per_sample = check_config(room, config, &room_grid.grid)?;
    let mut samples = Vec::with_capacity(config.sample_count() as usize);
    for k in 1..=config.sample_count() {
        for _ in 0..steps_per_sample {
            room_grid.grid.step(config.dt_s)?;
        }
        samples.push((k * config.sample_every_s, room_grid.reading()));
    }
    Ok(SimTrace {
        room: room.name.clone(),
        samples,
    })
}

/// Simulates `room` and returns its monotone heating curve.
pub fn run<T: Float>(room: &RoomSpec<T>, config: &SimConfig<T>) -> Result<SimTrace<T>, SimError> {
    run_raw(room, config).map(SimTrace::monotone)
}

/// Writes `time,T1,T2,...` with one column per trace and returns the
/// column → room mapping.
pub fn write_traces<T: Float>(
    traces: &[SimTrace<T>],
    mut out: impl Write,
) -> Result<Vec<RoomColumn>, SimError> {
    let first = traces.first().ok_or(SimError::NoTraces)?;
    for trace in traces {
        let same = trace.samples.len() == first.samples.len()
            && trace
                .samples
                .iter()
                .zip(&first.samples)
                .all(|(a, b)| a.0 == b.0);
        if !same {
            return Err(SimError::MismatchedGrids(trace.room.clone()));
        }
    }
    let columns: Vec<RoomColumn> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| RoomColumn::new(format!("T{}", i + 1), t.room.clone()))
        .collect();
    let mut line = String::from("time");
    for c in &columns {
        line.push(',');
        line.push_str(&c.column);
    }
    writeln!(out, "{line}")?;
    for (row, (time, _)) in first.samples.iter().enumerate() {
        line.clear();
        line.push_str(&time.to_string());
        for trace in traces {
            line.push(',');
            line.push_str(&format_number(trace.samples[row].1.as_f64()));
        }
        writeln!(out, "{line}")?;
    }
    Ok(columns)
}

/// [`write_traces`] to a file.
pub fn export_trace<T: Float>(
    traces: &[SimTrace<T>],
    csv_path: &Path,
) -> Result<Vec<RoomColumn>, SimError> {
    let mut buf = Vec::new();
    let columns = write_traces(traces, &mut buf)?;
    std::fs::write(csv_path, buf)?;
    Ok(columns)
}

const SMALL_HEATER: [f64; 4] = [1.0, 0.8, 2.0, 1.4];

const OUTDOOR_SURFACE_CONDUCTIVITY: f64 = 1.0e9;

/// Distance of the default thermometer from the south wall's inner face.
const THERMOMETER_WALL_GAP_M: f64 = 0.3;

impl<T: Float> RoomSpec<T> {
    /// Heater footprint is `(x, y, width, height)` in metres; default
    /// geometry is kept on a 0.1 m lattice so refined grids see the same room.
    fn standard(name: &str, width: f64, height: f64, heater: [f64; 4], power_w: f64) -> Self {
        Self {
            name: name.to_owned(),
            width_m: T::of(width),
            height_m: T::of(height),
            wall_thickness_m: T::of(0.2),
            wall: Material {
                conductivity: T::of(0.12),
                heat_capacity: T::of(3.0e4),
            },
            window: None,
            heater: HeaterSpec {
                x_m: T::of(heater[0]),
                y_m: T::of(heater[1]),
                width_m: T::of(heater[2]),
                height_m: T::of(heater[3]),
                power_w: T::of(power_w),
            },
            thermometer: Thermometer {
                x_m: T::of(width / 2.0),
                y_m: T::of(THERMOMETER_WALL_GAP_M),
            },
        }
    }

    /// 4 × 3 m room with a 1.6 m window in its north wall.
    pub fn small_window() -> Self {
        let mut room = Self::standard("small-window", 4.0, 3.0, SMALL_HEATER, 160.0);
        room.window = Some(WindowSpec {
            side: Side::North,
            offset_m: T::of(1.2),
            length_m: T::of(1.6),
            material: Material {
                conductivity: T::of(1.5),
                heat_capacity: T::of(3.0e4),
            },
        });
        room
    }

    /// Same footprint as [`RoomSpec::small_window`], without the window.
    pub fn small_plain() -> Self {
        Self::standard("small-plain", 4.0, 3.0, SMALL_HEATER, 160.0)
    }

    /// 9 × 8 m windowless room.
    pub fn large() -> Self {
        Self::standard("large", 9.0, 8.0, [3.0, 2.8, 3.0, 2.4], 340.0)
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::small_window(), Self::small_plain(), Self::large()]
    }
}
