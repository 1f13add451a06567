//! Domain types shared by the simulator and the correction pipeline:
//! stations, clocks, and the deterministic physical models (free-space
//! path loss, affine clock projection).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::power::PowerCurve;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default timestamp quantization step in seconds.
///
/// The transceiver timebase runs at 128x the 499.2 MHz channel bandwidth,
/// giving one counter tick every ~15.65 ps.
pub const DEFAULT_TICK: f64 = 1.0 / (128.0 * 499.2e6);

/// Upper bound accepted for per-station hardware delay (1 us).
pub const MAX_HARDWARE_DELAY: f64 = 1e-6;

/// Upper bound accepted for clock frequency offset (100 ppm).
pub const MAX_FREQUENCY_OFFSET: f64 = 100e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("station {id}: {reason}")]
    InvalidStation { id: u32, reason: String },
}

/// A 3D point in meters. Positioning is solved in the z = 0 plane, but
/// geometry and times of flight are always computed in 3D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Euclidean distance to `other`, meters.
    pub fn distance_to(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Projection onto the solving plane.
    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Role a station plays in one ranging exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Initiates the exchange: transmits messages 1 and 3.
    Reference,
    /// Responds with message 2; its position is the solve target.
    Tag,
    /// Passively timestamps all three messages.
    Anchor,
}

/// Free-running affine station clock.
///
/// A clock maps true time `t` to the local reading
/// `offset + (1 + frequency_offset) * t`, quantized to the counter tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Initial phase, seconds.
    #[serde(default)]
    pub offset: f64,
    /// Fractional frequency error (e.g. 10e-6 for a clock running 10 ppm fast).
    #[serde(default)]
    pub frequency_offset: f64,
    /// Timestamp quantization step, seconds. Zero disables quantization
    /// (an idealized counter with unbounded resolution).
    #[serde(default = "default_tick")]
    pub tick: f64,
}

fn default_tick() -> f64 {
    DEFAULT_TICK
}

impl Default for ClockModel {
    fn default() -> Self {
        Self {
            offset: 0.0,
            frequency_offset: 0.0,
            tick: DEFAULT_TICK,
        }
    }
}

impl ClockModel {
    /// An ideal clock: zero offset, zero drift, no quantization.
    pub fn ideal() -> Self {
        Self {
            offset: 0.0,
            frequency_offset: 0.0,
            tick: 0.0,
        }
    }

    /// Project a true-time instant onto this clock's timestamp grid.
    pub fn project(&self, true_time: f64) -> f64 {
        quantize(self.raw(true_time), self.tick)
    }

    /// Project a true-time instant and add `extra` seconds of local-domain
    /// timestamp shift (power error, jitter) before quantizing. The result
    /// is what the station's receive register actually latches.
    pub fn project_with(&self, true_time: f64, extra: f64) -> f64 {
        quantize(self.raw(true_time) + extra, self.tick)
    }

    fn raw(&self, true_time: f64) -> f64 {
        self.offset + (1.0 + self.frequency_offset) * true_time
    }
}

/// Round `t` to the nearest multiple of `tick`; `tick == 0` is a no-op.
pub fn quantize(t: f64, tick: f64) -> f64 {
    if tick > 0.0 {
        (t / tick).round() * tick
    } else {
        t
    }
}

/// One ranging station: geometry plus its individual error model.
#[derive(Debug, Clone)]
pub struct Station {
    pub id: u32,
    pub role: Role,
    pub position: Position,
    /// One-way antenna/circuit latency, seconds. Applied once on every
    /// transmission and once on every reception, so a station contributes
    /// twice its delay to a full two-way round.
    pub hardware_delay: f64,
    pub clock: ClockModel,
    pub power_curve: PowerCurve,
    /// Per-station receive timestamp jitter sigma override, seconds.
    /// `None` falls back to the scene-wide value.
    pub rx_jitter_sigma: Option<f64>,
}

impl Station {
    /// Validate the per-station invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.hardware_delay >= 0.0 && self.hardware_delay < MAX_HARDWARE_DELAY) {
            return Err(ModelError::InvalidStation {
                id: self.id,
                reason: format!(
                    "hardware_delay {} s outside [0, {} s)",
                    self.hardware_delay, MAX_HARDWARE_DELAY
                ),
            });
        }
        if self.clock.frequency_offset.abs() > MAX_FREQUENCY_OFFSET {
            return Err(ModelError::InvalidStation {
                id: self.id,
                reason: format!(
                    "frequency_offset {} exceeds +/-{}",
                    self.clock.frequency_offset, MAX_FREQUENCY_OFFSET
                ),
            });
        }
        if self.clock.tick < 0.0 {
            return Err(ModelError::InvalidStation {
                id: self.id,
                reason: format!("tick {} must be >= 0", self.clock.tick),
            });
        }
        if let Some(s) = self.rx_jitter_sigma {
            if s < 0.0 {
                return Err(ModelError::InvalidStation {
                    id: self.id,
                    reason: format!("rx_jitter_sigma {} must be >= 0", s),
                });
            }
        }
        Ok(())
    }
}

/// Received signal power over a free-space path, dBm.
///
/// `tx_power - 20*log10(4*pi*d*f/c0)`; strictly decreasing in distance.
pub fn received_power(
    tx_power_dbm: f64,
    distance_m: f64,
    frequency_hz: f64,
) -> Result<f64, ModelError> {
    if distance_m <= 0.0 {
        return Err(ModelError::NonPositiveDistance(distance_m));
    }
    let path_loss_db =
        20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10();
    Ok(tx_power_dbm - path_loss_db)
}
