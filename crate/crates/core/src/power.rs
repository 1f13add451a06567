//! Signal-power correction curve.
//!
//! Receive timestamps shift systematically with received signal power:
//! stronger signals latch early (negative error), weaker ones late. Each
//! device additionally mis-reports its received power, so a curve carries
//! two tables:
//!
//! * `error_curve`: actual power (dBm) -> timestamp error (seconds),
//!   piecewise linear, error non-increasing in power;
//! * `power_map`: measured power (dBm) -> actual power (dBm), strictly
//!   monotone and therefore invertible.
//!
//! Curve files are TOML:
//!
//! ```toml
//! error_curve = [[-95.0, 0.5e-9], [-75.0, 0.0], [-55.0, -0.5e-9]]
//! power_map = [[-93.0, -95.0], [-74.0, -75.0], [-60.0, -55.0]]
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("power {power} dBm outside curve domain [{min}, {max}] dBm")]
    OutOfDomain { power: f64, min: f64, max: f64 },
    #[error("error_curve needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("error_curve actual power must be strictly increasing (point {index})")]
    NonIncreasingPower { index: usize },
    #[error("error_curve timestamp error must be non-increasing in power (point {index})")]
    IncreasingError { index: usize },
    #[error("power_map must be strictly monotone in both coordinates (point {index})")]
    NonMonotoneMap { index: usize },
    #[error("curve file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveFile {
    error_curve: Vec<[f64; 2]>,
    power_map: Vec<[f64; 2]>,
}

/// Per-device power correction curve. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCurve {
    /// (actual dBm, timestamp error s), actual strictly increasing.
    error_points: Vec<(f64, f64)>,
    /// (measured dBm, actual dBm), both strictly increasing.
    map_points: Vec<(f64, f64)>,
}

impl PowerCurve {
    pub fn new(
        error_points: Vec<(f64, f64)>,
        map_points: Vec<(f64, f64)>,
    ) -> Result<Self, CurveError> {
        if error_points.len() < 2 {
            return Err(CurveError::TooFewPoints(error_points.len()));
        }
        for i in 1..error_points.len() {
            if error_points[i].0 <= error_points[i - 1].0 {
                return Err(CurveError::NonIncreasingPower { index: i });
            }
            if error_points[i].1 > error_points[i - 1].1 {
                return Err(CurveError::IncreasingError { index: i });
            }
        }
        if map_points.len() < 2 {
            return Err(CurveError::TooFewPoints(map_points.len()));
        }
        for i in 1..map_points.len() {
            if map_points[i].0 <= map_points[i - 1].0 || map_points[i].1 <= map_points[i - 1].1 {
                return Err(CurveError::NonMonotoneMap { index: i });
            }
        }
        Ok(Self {
            error_points,
            map_points,
        })
    }

    /// Parse a curve from its TOML file representation.
    pub fn from_toml_str(text: &str) -> Result<Self, CurveError> {
        let file: CurveFile = toml::from_str(text).map_err(|e| CurveError::Parse(e.to_string()))?;
        Self::new(
            file.error_curve.iter().map(|p| (p[0], p[1])).collect(),
            file.power_map.iter().map(|p| (p[0], p[1])).collect(),
        )
    }

    /// Render the curve back to its TOML file representation.
    pub fn to_toml_string(&self) -> String {
        let file = CurveFile {
            error_curve: self.error_points.iter().map(|&(a, e)| [a, e]).collect(),
            power_map: self.map_points.iter().map(|&(m, a)| [m, a]).collect(),
        };
        toml::to_string(&file).expect("curve serializes")
    }

    /// Synthetic default curve: errors span +0.5 ns down to -0.5 ns over
    /// -95..-55 dBm with a mild power-register compression. Placeholder
    /// values for simulation only, not a device calibration.
    pub fn synthetic_default() -> Self {
        Self::new(
            vec![
                (-95.0, 0.5e-9),
                (-85.0, 0.28e-9),
                (-75.0, 0.05e-9),
                (-70.0, -0.1e-9),
                (-65.0, -0.22e-9),
                (-55.0, -0.5e-9),
            ],
            vec![
                (-93.5, -95.0),
                (-84.5, -85.0),
                (-74.0, -75.0),
                (-68.5, -70.0),
                (-63.0, -65.0),
                (-52.0, -55.0),
            ],
        )
        .expect("default curve is valid")
    }

    /// A curve with zero timestamp error and an identity power map over a
    /// very wide domain. Used to switch the power error source off.
    pub fn flat_zero() -> Self {
        Self::new(
            vec![(-200.0, 0.0), (50.0, 0.0)],
            vec![(-200.0, -200.0), (50.0, 50.0)],
        )
        .expect("flat curve is valid")
    }

    /// Timestamp error at an actual received power, seconds.
    pub fn timestamp_error(&self, actual_dbm: f64) -> Result<f64, CurveError> {
        interpolate(&self.error_points, actual_dbm)
    }

    /// Invert the device's power register: measured dBm -> actual dBm.
    pub fn actual_from_measured(&self, measured_dbm: f64) -> Result<f64, CurveError> {
        interpolate(&self.map_points, measured_dbm)
    }

    /// Forward power register model: actual dBm -> measured dBm. Used by
    /// the simulator; the inverse of [`actual_from_measured`].
    ///
    /// [`actual_from_measured`]: Self::actual_from_measured
    pub fn measured_from_actual(&self, actual_dbm: f64) -> Result<f64, CurveError> {
        let flipped: Vec<(f64, f64)> = self.map_points.iter().map(|&(m, a)| (a, m)).collect();
        interpolate(&flipped, actual_dbm)
    }

    /// Timestamp error resolved from a measured power reading: maps the
    /// reading to actual power first, then evaluates the error curve.
    pub fn error_from_measured(&self, measured_dbm: f64) -> Result<f64, CurveError> {
        let actual = self.actual_from_measured(measured_dbm)?;
        self.timestamp_error(actual)
    }

    /// Domain of the error curve, dBm.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.error_points[0].0,
            self.error_points[self.error_points.len() - 1].0,
        )
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> Result<f64, CurveError> {
    let (min, max) = (points[0].0, points[points.len() - 1].0);
    if x < min || x > max {
        return Err(CurveError::OutOfDomain { power: x, min, max });
    }
    let idx = points.partition_point(|p| p.0 <= x);
    if idx == 0 {
        return Ok(points[0].1);
    }
    if idx == points.len() {
        return Ok(points[points.len() - 1].1);
    }
    let (x0, y0) = points[idx - 1];
    let (x1, y1) = points[idx];
    if x == x0 {
        return Ok(y0);
    }
    Ok(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> PowerCurve {
        PowerCurve::new(
            vec![
                (-90.0, 0.4e-9),
                (-80.0, 0.2e-9),
                (-70.0, 0.0),
                (-60.0, -0.3e-9),
            ],
            vec![
                (-88.0, -90.0),
                (-78.0, -80.0),
                (-75.0, -78.0),
                (-58.0, -60.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn knot_returns_stored_error() {
        let c = curve();
        assert_eq!(c.timestamp_error(-80.0).unwrap(), 0.2e-9);
        assert_eq!(c.timestamp_error(-90.0).unwrap(), 0.4e-9);
        assert_eq!(c.timestamp_error(-60.0).unwrap(), -0.3e-9);
    }

    #[test]
    fn zero_crossing_returns_zero() {
        let c = curve();
        assert_eq!(c.timestamp_error(-70.0).unwrap(), 0.0);
    }

    #[test]
    fn midpoint_blends_linearly() {
        let c = curve();
        let mid = c.timestamp_error(-85.0).unwrap();
        assert!((mid - 0.3e-9).abs() < 1e-24);
        let mid2 = c.timestamp_error(-65.0).unwrap();
        assert!((mid2 - (-0.15e-9)).abs() < 1e-24);
    }

    #[test]
    fn out_of_domain_names_the_power() {
        let c = curve();
        let err = c.timestamp_error(-100.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("-100"), "message should name the power: {msg}");
    }

    #[test]
    fn inverse_map_identity_and_knots() {
        let identity = PowerCurve::new(
            vec![(-95.0, 0.1e-9), (-55.0, 0.0)],
            vec![(-95.0, -95.0), (-55.0, -55.0)],
        )
        .unwrap();
        assert_eq!(identity.actual_from_measured(-80.0).unwrap(), -80.0);

        let c = curve();
        assert_eq!(c.actual_from_measured(-75.0).unwrap(), -78.0);
        // midpoint between (-78 -> -80) and (-75 -> -78)
        let blended = c.actual_from_measured(-76.5).unwrap();
        assert!((blended - (-79.0)).abs() < 1e-12);
    }

    #[test]
    fn map_round_trips_through_knots() {
        let c = curve();
        for &(m, a) in &[
            (-88.0, -90.0),
            (-78.0, -80.0),
            (-75.0, -78.0),
            (-58.0, -60.0),
        ] {
            assert_eq!(c.actual_from_measured(m).unwrap(), a);
            assert_eq!(c.measured_from_actual(a).unwrap(), m);
        }
    }

    #[test]
    fn rejects_invalid_curves() {
        // actual power not strictly increasing
        assert!(PowerCurve::new(
            vec![(-90.0, 0.1e-9), (-90.0, 0.0)],
            vec![(-90.0, -90.0), (-60.0, -60.0)],
        )
        .is_err());
        // error increasing with power
        assert!(PowerCurve::new(
            vec![(-90.0, 0.0), (-60.0, 0.1e-9)],
            vec![(-90.0, -90.0), (-60.0, -60.0)],
        )
        .is_err());
        // map not invertible
        assert!(PowerCurve::new(
            vec![(-90.0, 0.1e-9), (-60.0, 0.0)],
            vec![(-90.0, -90.0), (-60.0, -90.0)],
        )
        .is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = curve();
        let text = c.to_toml_string();
        let back = PowerCurve::from_toml_str(&text).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn default_curve_is_valid_and_bounded() {
        let c = PowerCurve::synthetic_default();
        let (lo, hi) = c.domain();
        assert_eq!((lo, hi), (-95.0, -55.0));
        let mut p = lo;
        while p <= hi {
            let e = c.timestamp_error(p).unwrap();
            assert!(e.abs() <= 0.5e-9);
            p += 0.25;
        }
    }

    #[test]
    fn parse_error_is_reported() {
        assert!(matches!(
            PowerCurve::from_toml_str("error_curve = 3"),
            Err(CurveError::Parse(_))
        ));
    }
}
