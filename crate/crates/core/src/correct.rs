//! Timestamp corrections: raw exchange records in, one corrected two-way
//! time of flight plus per-anchor corrected arrival-time differences out.
//!
//! Three systematic errors are removed:
//!
//! * **Signal power.** Receive stamps shift with received power; each
//!   station's curve maps its measured power to the shift, which is
//!   subtracted.
//! * **Clock drift.** The reference's two transmissions bracket the round.
//!   Comparing how long that bracket appears on two clocks yields the
//!   drift error `c13 = dt13_local - dt13_remote`; linear interpolation
//!   rescales any interval measured on the remote clock into the local
//!   timebase.
//! * **Hardware delay.** Known per-station one-way latencies enter each
//!   two-way round twice and are subtracted; passive anchors apply the
//!   same latency to every reception, so arrival-time differences are
//!   delay-free by construction.
//!
//! The corrected arrival-time difference is assembled as the drift- and
//! power-corrected anchor interval minus the transmission offset between
//! the two senders (time of flight to the tag, plus the tag's turnaround
//! rescaled into the reference timebase, plus twice the tag delay). See
//! `docs/measurement-model.md` for the full derivation; the expanded form
//! is checked against zero-error simulations in the test suite.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::power::{CurveError, PowerCurve};
use crate::record::{AnchorTimes, ExchangeRecord};
use crate::sim::Scene;

#[derive(Debug, Error)]
pub enum CorrectError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("anchor {anchor}: {source}")]
    Anchor {
        anchor: u32,
        #[source]
        source: Box<CorrectError>,
    },
    #[error("station {station}: {source}")]
    Power {
        station: u32,
        #[source]
        source: CurveError,
    },
    #[error("no calibration for station {0}")]
    UnknownStation(u32),
    #[error("hardware delay for station {station} must be >= 0, got {delay}")]
    NegativeDelay { station: u32, delay: f64 },
}

/// Known per-station one-way hardware delays, seconds.
#[derive(Debug, Clone, Default)]
pub struct DelayCalibration {
    delays: BTreeMap<u32, f64>,
}

impl DelayCalibration {
    pub fn new(delays: BTreeMap<u32, f64>) -> Result<Self, CorrectError> {
        for (&station, &delay) in &delays {
            if delay < 0.0 {
                return Err(CorrectError::NegativeDelay { station, delay });
            }
        }
        Ok(Self { delays })
    }

    pub fn get(&self, station: u32) -> Result<f64, CorrectError> {
        self.delays
            .get(&station)
            .copied()
            .ok_or(CorrectError::UnknownStation(station))
    }
}

/// Everything the correction pipeline is allowed to know about a scene:
/// roles, delays, power curves, nominal round timing. Never the simulated
/// truth.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub reference_id: u32,
    pub tag_id: u32,
    pub round_interval: f64,
    pub delays: DelayCalibration,
    pub curves: BTreeMap<u32, PowerCurve>,
}

impl Calibration {
    pub fn from_scene(scene: &Scene) -> Self {
        let mut delays = BTreeMap::new();
        let mut curves = BTreeMap::new();
        for s in &scene.stations {
            delays.insert(s.id, s.hardware_delay);
            curves.insert(s.id, s.power_curve.clone());
        }
        Self {
            reference_id: scene.reference().id,
            tag_id: scene.tag().id,
            round_interval: scene.round_interval,
            delays: DelayCalibration::new(delays).expect("scene delays validated"),
            curves,
        }
    }

    fn curve(&self, station: u32) -> Result<&PowerCurve, CorrectError> {
        self.curves
            .get(&station)
            .ok_or(CorrectError::UnknownStation(station))
    }

    fn error_at(&self, station: u32, measured_dbm: f64) -> Result<f64, CorrectError> {
        self.curve(station)?
            .error_from_measured(measured_dbm)
            .map_err(|source| CorrectError::Power { station, source })
    }
}

/// Per-anchor diagnostic terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorDiagnostics {
    /// Reference-minus-anchor drift error over the round bracket, seconds.
    pub c13_s: f64,
    /// Power errors on the anchor's receptions of messages 1 and 2, seconds.
    pub e3: f64,
    pub e4: f64,
}

/// Diagnostic terms for one corrected record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Reference-minus-tag drift error over the round bracket, seconds.
    pub c13_rt: f64,
    /// Power errors at the tag (message 1) and reference (message 2), seconds.
    pub e1: f64,
    pub e2: f64,
    /// Estimated transmission offset between reference and tag, seconds.
    pub k: f64,
    /// Flight-time estimate came out negative (noise around zero range).
    pub negative_toa: bool,
    pub anchors: BTreeMap<u32, AnchorDiagnostics>,
}

/// One fully corrected measurement: a two-way time of flight plus one
/// arrival-time difference per anchor that survived correction.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedMeasurement {
    pub round_idx: u64,
    /// Corrected reference-tag time of flight, seconds.
    pub t_toa: f64,
    /// Corrected per-anchor time difference, seconds. Multiplied by the
    /// speed of light this is |tag - anchor| - |reference - anchor|.
    pub t_tdoa: BTreeMap<u32, f64>,
    /// Anchors whose correction failed, with the reason.
    pub failed_anchors: BTreeMap<u32, String>,
    pub diagnostics: Diagnostics,
}

/// Drift error between two clocks observing the same transmission bracket:
/// `dt13_local - dt13_remote`. Positive when the local clock runs fast.
pub fn clock_drift_error(dt13_local: f64, dt13_remote: f64) -> Result<f64, CorrectError> {
    if dt13_local <= 0.0 || dt13_remote <= 0.0 {
        return Err(CorrectError::MalformedRecord(format!(
            "non-positive bracket intervals ({dt13_local}, {dt13_remote})"
        )));
    }
    Ok(dt13_local - dt13_remote)
}

/// Linear interpolation of a drift error measured over `dt13_tx` onto an
/// intermediate elapsed time `dt12_elapsed`.
pub fn interpolate_drift(c: f64, dt13_tx: f64, dt12_elapsed: f64) -> Result<f64, CorrectError> {
    if dt13_tx <= 0.0 {
        return Err(CorrectError::MalformedRecord(format!(
            "non-positive bracket interval {dt13_tx}"
        )));
    }
    if dt12_elapsed < 0.0 || dt12_elapsed > dt13_tx {
        return Err(CorrectError::MalformedRecord(format!(
            "elapsed time {dt12_elapsed} outside bracket [0, {dt13_tx}]"
        )));
    }
    Ok(c * dt12_elapsed / dt13_tx)
}

/// Power- and delay-corrected two-way flight time from messages 1 and 2
/// only; clock drift over the tag's turnaround is left in.
pub fn toa_two_message(record: &ExchangeRecord, cal: &Calibration) -> Result<f64, CorrectError> {
    let dt12_r = record.reference.t2 - record.reference.t1;
    let dt12_t = record.tag.t2 - record.tag.t1;
    let e1 = cal.error_at(cal.tag_id, record.tag.p1)?;
    let e2 = cal.error_at(cal.reference_id, record.reference.p2)?;
    let a = cal.delays.get(cal.reference_id)?;
    let b = cal.delays.get(cal.tag_id)?;
    Ok(0.5 * (dt12_r - dt12_t - e2 - e1) - a - b)
}

/// Fully corrected two-way flight time: power, hardware delay, and clock
/// drift (interpolated from the round bracket) removed.
pub fn toa_corrected(record: &ExchangeRecord, cal: &Calibration) -> Result<f64, CorrectError> {
    toa_corrected_terms(record, cal).map(|t| t.t_toa)
}

struct ToaTerms {
    t_toa: f64,
    c13_rt: f64,
    e1: f64,
    e2: f64,
    /// Tag turnaround rescaled into the reference timebase:
    /// `(1 + c13_rt/dt13_t) * (dt12_t + e1)`.
    tag_turnaround_ref: f64,
}

fn toa_corrected_terms(
    record: &ExchangeRecord,
    cal: &Calibration,
) -> Result<ToaTerms, CorrectError> {
    let dt12_r = record.reference.t2 - record.reference.t1;
    let dt12_t = record.tag.t2 - record.tag.t1;
    let dt13_r = record.reference.t3 - record.reference.t1;
    let dt13_t = record.tag.t3 - record.tag.t1;
    if dt13_t <= 0.0 {
        return Err(CorrectError::MalformedRecord(format!(
            "tag bracket interval {dt13_t} not positive"
        )));
    }
    let e1 = cal.error_at(cal.tag_id, record.tag.p1)?;
    let e2 = cal.error_at(cal.reference_id, record.reference.p2)?;
    let a = cal.delays.get(cal.reference_id)?;
    let b = cal.delays.get(cal.tag_id)?;

    let c13_rt = clock_drift_error(dt13_r, dt13_t)?;
    let drift_term = interpolate_drift(c13_rt, dt13_t, (dt12_t + e1).clamp(0.0, dt13_t))?;
    let t_toa = 0.5 * (dt12_r - dt12_t - drift_term - e2 - e1) - a - b;
    Ok(ToaTerms {
        t_toa,
        c13_rt,
        e1,
        e2,
        tag_turnaround_ref: dt12_t + e1 + drift_term,
    })
}

/// Power-corrected anchor interval, still containing the transmission
/// offset between reference and tag (and the anchor's clock drift).
pub fn tdoa_with_offset(anchor: &AnchorTimes, curve: &PowerCurve) -> Result<f64, CurveError> {
    let e3 = curve.error_from_measured(anchor.p1)?;
    let e4 = curve.error_from_measured(anchor.p2)?;
    Ok(anchor.t2 - anchor.t1 + e3 - e4)
}

/// Drift error of an anchor clock against the reference bracket:
/// `dt13_reference - dt13_anchor`.
pub fn anchor_drift_error(record: &ExchangeRecord, anchor_id: u32) -> Result<f64, CorrectError> {
    let anchor = record
        .anchors
        .get(&anchor_id)
        .ok_or_else(|| CorrectError::MalformedRecord(format!("no anchor {anchor_id} in record")))?;
    let t3 = anchor.t3.ok_or_else(|| {
        CorrectError::MalformedRecord(format!("anchor {anchor_id} is missing its message-3 stamp"))
    })?;
    let dt13_r = record.reference.t3 - record.reference.t1;
    let dt13_s = t3 - anchor.t1;
    clock_drift_error(dt13_r, dt13_s)
}

/// Estimated transmission offset between the reference's and the tag's
/// emissions as seen by any passive listener: flight time to the tag plus
/// the tag's turnaround (rescaled into the reference timebase) plus twice
/// the tag's hardware delay.
pub fn offset_k(
    record: &ExchangeRecord,
    cal: &Calibration,
    t_toa: f64,
) -> Result<f64, CorrectError> {
    let terms = toa_corrected_terms(record, cal)?;
    let b = cal.delays.get(cal.tag_id)?;
    Ok(t_toa + terms.tag_turnaround_ref + 2.0 * b)
}

/// Fully corrected arrival-time difference for one anchor: power and drift
/// corrected, transmission offset eliminated. Scaled by the speed of light
/// this approximates |tag - anchor| - |reference - anchor|.
pub fn tdoa_corrected(
    record: &ExchangeRecord,
    anchor_id: u32,
    cal: &Calibration,
) -> Result<f64, CorrectError> {
    let terms = toa_corrected_terms(record, cal).map_err(|e| attach(anchor_id, e))?;
    tdoa_corrected_with_terms(record, anchor_id, cal, &terms).map(|(t, _)| t)
}

fn attach(anchor: u32, source: CorrectError) -> CorrectError {
    CorrectError::Anchor {
        anchor,
        source: Box::new(source),
    }
}

fn tdoa_corrected_with_terms(
    record: &ExchangeRecord,
    anchor_id: u32,
    cal: &Calibration,
    toa: &ToaTerms,
) -> Result<(f64, AnchorDiagnostics), CorrectError> {
    let anchor = record.anchors.get(&anchor_id).ok_or_else(|| {
        attach(
            anchor_id,
            CorrectError::MalformedRecord("not in record".into()),
        )
    })?;
    let t3 = anchor.t3.ok_or_else(|| {
        attach(
            anchor_id,
            CorrectError::MalformedRecord("missing message-3 stamp".into()),
        )
    })?;
    let curve = cal.curve(anchor_id).map_err(|e| attach(anchor_id, e))?;
    let e3 = curve.error_from_measured(anchor.p1).map_err(|source| {
        attach(
            anchor_id,
            CorrectError::Power {
                station: anchor_id,
                source,
            },
        )
    })?;
    let e4 = curve.error_from_measured(anchor.p2).map_err(|source| {
        attach(
            anchor_id,
            CorrectError::Power {
                station: anchor_id,
                source,
            },
        )
    })?;

    let dt13_s = t3 - anchor.t1;
    let dt13_r = record.reference.t3 - record.reference.t1;
    let c13_s = clock_drift_error(dt13_r, dt13_s).map_err(|e| attach(anchor_id, e))?;

    // Anchor interval rescaled into the reference timebase.
    let interval = anchor.t2 - anchor.t1 + e3 - e4;
    let drift_term = interpolate_drift(c13_s, dt13_s, interval.clamp(0.0, dt13_s))
        .map_err(|e| attach(anchor_id, e))?;
    let interval_ref = interval + drift_term;

    // Subtract the transmission offset between the two senders.
    let b = cal
        .delays
        .get(cal.tag_id)
        .map_err(|e| attach(anchor_id, e))?;
    let k = toa.t_toa + toa.tag_turnaround_ref + 2.0 * b;
    Ok((interval_ref - k, AnchorDiagnostics { c13_s, e3, e4 }))
}

/// Correct one full record. Reference/tag failures abort; anchor failures
/// are collected per anchor and leave the rest of the record intact.
pub fn correct_record(
    record: &ExchangeRecord,
    cal: &Calibration,
) -> Result<CorrectedMeasurement, CorrectError> {
    validate_record(record, cal)?;
    let terms = toa_corrected_terms(record, cal)?;
    let b = cal.delays.get(cal.tag_id)?;
    let k = terms.t_toa + terms.tag_turnaround_ref + 2.0 * b;

    let mut diagnostics = Diagnostics {
        c13_rt: terms.c13_rt,
        e1: terms.e1,
        e2: terms.e2,
        k,
        negative_toa: terms.t_toa < 0.0,
        anchors: BTreeMap::new(),
    };

    let mut t_tdoa = BTreeMap::new();
    let mut failed_anchors = BTreeMap::new();
    for &anchor_id in record.anchors.keys() {
        match tdoa_corrected_with_terms(record, anchor_id, cal, &terms) {
            Ok((value, diag)) => {
                t_tdoa.insert(anchor_id, value);
                diagnostics.anchors.insert(anchor_id, diag);
            }
            Err(err) => {
                failed_anchors.insert(anchor_id, err.to_string());
            }
        }
    }

    Ok(CorrectedMeasurement {
        round_idx: record.round_idx,
        t_toa: terms.t_toa,
        t_tdoa,
        failed_anchors,
        diagnostics,
    })
}

/// Structural checks: message ordering per station and bracket intervals
/// within 50% of the nominal round interval (reference and tag; anchors
/// degrade individually).
fn validate_record(record: &ExchangeRecord, cal: &Calibration) -> Result<(), CorrectError> {
    let r = &record.reference;
    let t = &record.tag;
    if !(r.t1 < r.t2 && r.t2 < r.t3) {
        return Err(CorrectError::MalformedRecord(format!(
            "reference stamps out of order: {} {} {}",
            r.t1, r.t2, r.t3
        )));
    }
    if !(t.t1 < t.t2 && t.t2 < t.t3) {
        return Err(CorrectError::MalformedRecord(format!(
            "tag stamps out of order: {} {} {}",
            t.t1, t.t2, t.t3
        )));
    }
    let nominal = cal.round_interval;
    for (name, dt13) in [("reference", r.t3 - r.t1), ("tag", t.t3 - t.t1)] {
        if (dt13 - nominal).abs() > 0.5 * nominal {
            return Err(CorrectError::MalformedRecord(format!(
                "{name} bracket interval {dt13} s deviates more than 50% from nominal {nominal} s"
            )));
        }
    }
    Ok(())
}
