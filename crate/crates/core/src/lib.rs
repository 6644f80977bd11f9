//! Residential digital twin.
//!
//! Sensor-style streams are replayed onto an in-process pub/sub [`bus`],
//! copied by [`bridge`]s into an append-only [`event_log`], and consumed by
//! two twin services: [`consumption`] colours appliances by power draw, and
//! [`heater`] decides when to switch a room's heater on by looking up
//! heating times in a precomputed [`thermal`] simulation. [`evaluation`]
//! compares the heater service against a fixed-time schedule.

pub mod bridge;
pub mod bus;
pub mod consumption;
pub mod evaluation;
pub mod event_log;
pub mod heater;
pub mod ingestion;
pub mod mqtt;
pub mod num;
pub mod payload;
pub mod schedule;
pub mod thermal;

pub use bus::{Bus, BusMessage, Subscription};
pub use event_log::{Event, EventLog, LogError};
pub use num::Float;
pub use payload::{FieldValue, Payload};
pub use schedule::{ClockTime, SchedulePolicy};

/// Double-precision instances of the generic thermal and weather types.
pub type RoomSpec = thermal::RoomSpec<f64>;
pub type SimConfig = thermal::SimConfig<f64>;
pub type SimTrace = thermal::SimTrace<f64>;
pub type Grid = thermal::Grid<f64>;
pub type Material = thermal::Material<f64>;
pub type WeatherRow = ingestion::WeatherRow<f64>;
