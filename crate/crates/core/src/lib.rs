//! Desk-scale ultra-wideband ranging toolkit: simulate two-way-ranging
//! exchanges among a reference station, a tag, and passive anchors; remove
//! the three dominant timestamp errors (signal power, clock drift,
//! hardware delay); and estimate the tag's 2D position from the corrected
//! ranges and range differences.
//!
//! Pipeline stages map onto the modules:
//!
//! * [`model`] / [`power`] / [`record`] — stations, clocks, power curves,
//!   and the raw exchange record.
//! * [`sim`] — deterministic, seedable exchange generator.
//! * [`correct`] — per-record correction into one two-way flight time plus
//!   per-anchor corrected arrival-time differences.
//! * [`solve`] — range-only and fused least-squares position estimation.
//! * [`io`] — CSV encodings of records, corrected measurements, and
//!   estimates.
//!
//! Everything is a pure function of its inputs; records may be generated,
//! corrected, and solved in parallel without shared state.

pub mod correct;
pub mod io;
pub mod model;
pub mod power;
pub mod record;
pub mod sim;
pub mod solve;
pub mod testutil;

pub use model::{ClockModel, Position, Role, Station, DEFAULT_TICK, SPEED_OF_LIGHT};
pub use power::PowerCurve;
pub use record::ExchangeRecord;
pub use sim::{simulate_exchange, simulate_session, true_tof, NoiseSpec, RadioProfile, Scene};
pub use solve::{solve_position, MeasurementSet, Mode, PositionEstimate, SolverConfig};
