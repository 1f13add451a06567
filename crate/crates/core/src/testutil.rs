//! Scene fixtures for tests, examples, and benchmarks.
//!
//! The desk constellation matches the bundled demo scene: reference at the
//! origin, the tag 1.5134 m up the y-axis, and two anchors off to the
//! side. Every error source is individually switchable.

use crate::model::{ClockModel, Position, Role, Station};
use crate::power::PowerCurve;
use crate::sim::{NoiseSpec, RadioProfile, Scene};

/// Desk constellation coordinates, meters: (id, x, y).
pub const DESK_STATIONS: [(u32, f64, f64); 4] = [
    (1, 0.0, 0.0),
    (2, 0.0, 1.5134),
    (3, 1.27, 1.643),
    (4, 1.1439, 0.0385),
];

/// Error-source switches for [`desk_scene`]. Array entries follow the
/// station order of [`DESK_STATIONS`].
#[derive(Debug, Clone)]
pub struct ErrorConfig {
    pub tick: f64,
    pub drift_ppm: [f64; 4],
    pub clock_offsets: [f64; 4],
    pub hardware_delays: [f64; 4],
    pub timestamp_jitter_sigma: f64,
    pub power_jitter_sigma: f64,
    pub curve: PowerCurve,
    pub round_interval: f64,
    pub tag_response_delay: f64,
}

impl ErrorConfig {
    /// Everything off: ideal clocks (no quantization), zero delays, flat
    /// zero power curve, no jitter.
    pub fn all_off() -> Self {
        Self {
            tick: 0.0,
            drift_ppm: [0.0; 4],
            clock_offsets: [0.0; 4],
            hardware_delays: [0.0; 4],
            timestamp_jitter_sigma: 0.0,
            power_jitter_sigma: 0.0,
            curve: PowerCurve::flat_zero(),
            round_interval: 1e-3,
            tag_response_delay: 0.3e-3,
        }
    }
}

/// Build the four-station desk scene with the given error switches.
/// Station 1 is the reference, station 2 the tag.
pub fn desk_scene(cfg: ErrorConfig) -> Scene {
    let stations = DESK_STATIONS
        .iter()
        .enumerate()
        .map(|(i, &(id, x, y))| Station {
            id,
            role: match id {
                1 => Role::Reference,
                2 => Role::Tag,
                _ => Role::Anchor,
            },
            position: Position::new(x, y, 0.0),
            hardware_delay: cfg.hardware_delays[i],
            clock: ClockModel {
                offset: cfg.clock_offsets[i],
                frequency_offset: cfg.drift_ppm[i] * 1e-6,
                tick: cfg.tick,
            },
            power_curve: cfg.curve.clone(),
            rx_jitter_sigma: None,
        })
        .collect();
    Scene {
        stations,
        round_interval: cfg.round_interval,
        tag_response_delay: cfg.tag_response_delay,
        noise: NoiseSpec {
            timestamp_jitter_sigma: cfg.timestamp_jitter_sigma,
            power_jitter_sigma: cfg.power_jitter_sigma,
            seed: 0,
        },
        radio: RadioProfile::default(),
    }
}
