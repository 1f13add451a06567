//! Deterministic, seedable exchange simulator.
//!
//! One round plays out the three-message flow on a true-time axis: the
//! reference transmits message 1 at the round start and message 3 one
//! round interval later; the tag answers with message 2 a fixed response
//! delay after receiving message 1; anchors passively receive everything.
//! Every receive timestamp picks up the receiver's clock projection,
//! hardware latch delay, power-dependent shift, and optional Gaussian
//! jitter, then lands on the clock's tick grid.
//!
//! Identical `(scene, seed)` inputs produce bit-identical records; each
//! round draws from its own ChaCha stream, so sessions may be sharded
//! across threads without changing the output.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{received_power, ModelError, Position, Role, Station, SPEED_OF_LIGHT};
use crate::power::CurveError;
use crate::record::{AnchorTimes, ExchangeRecord, ReferenceTimes, TagTimes, Truth};

/// Path-loss distances are clamped to this floor so coincident stations
/// (zero range) still get a finite receive power.
pub const MIN_PATH_DISTANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Station(#[from] ModelError),
    #[error("station {station}: power model: {source}")]
    Power {
        station: u32,
        #[source]
        source: CurveError,
    },
}

/// Measurement noise switched on top of the deterministic models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// White Gaussian jitter added to every receive timestamp, seconds.
    /// Stations may override it individually via `Station::rx_jitter_sigma`.
    pub timestamp_jitter_sigma: f64,
    /// White Gaussian noise on every measured power reading, dB.
    pub power_jitter_sigma: f64,
    /// Default session seed; the CLI and `simulate_session` callers may
    /// override it.
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            timestamp_jitter_sigma: 0.0,
            power_jitter_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Transceiver settings carried with a scene. Only the center frequency
/// (path loss) and, indirectly, the bandwidth (default tick) parameterize
/// the simulation; the rest is reporting metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioProfile {
    pub channel: u32,
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub prf_hz: f64,
    pub preamble_length: u32,
    pub data_rate_bps: f64,
    /// Transmit power assumed for the free-space link budget, dBm.
    pub tx_power_dbm: f64,
}

impl Default for RadioProfile {
    fn default() -> Self {
        Self {
            channel: 2,
            center_frequency_hz: 3993.6e6,
            bandwidth_hz: 499.2e6,
            prf_hz: 64e6,
            preamble_length: 128,
            data_rate_bps: 6.81e6,
            tx_power_dbm: -14.3,
        }
    }
}

/// A full measurement setup: station constellation, round timing, noise,
/// and radio settings.
#[derive(Debug, Clone)]
pub struct Scene {
    pub stations: Vec<Station>,
    /// True-time spacing between the reference's two transmissions
    /// (message 1 to message 3), seconds.
    pub round_interval: f64,
    /// Tag processing time between latching message 1 and scheduling
    /// message 2, seconds.
    pub tag_response_delay: f64,
    pub noise: NoiseSpec,
    pub radio: RadioProfile,
}

impl Scene {
    pub fn reference(&self) -> &Station {
        self.stations
            .iter()
            .find(|s| s.role == Role::Reference)
            .expect("validated scene")
    }

    pub fn tag(&self) -> &Station {
        self.stations
            .iter()
            .find(|s| s.role == Role::Tag)
            .expect("validated scene")
    }

    /// Anchors in id order.
    pub fn anchors(&self) -> Vec<&Station> {
        let mut anchors: Vec<&Station> = self
            .stations
            .iter()
            .filter(|s| s.role == Role::Anchor)
            .collect();
        anchors.sort_by_key(|s| s.id);
        anchors
    }

    pub fn station(&self, id: u32) -> Option<&Station> {
        self.stations.iter().find(|s| s.id == id)
    }

    /// Check all scene invariants.
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut n_ref = 0;
        let mut n_tag = 0;
        let mut ids = Vec::new();
        for s in &self.stations {
            s.validate()?;
            if s.id > 255 {
                return Err(SceneError::Invalid(format!(
                    "station id {} exceeds 255",
                    s.id
                )));
            }
            if ids.contains(&s.id) {
                return Err(SceneError::Invalid(format!(
                    "duplicate station id {}",
                    s.id
                )));
            }
            ids.push(s.id);
            match s.role {
                Role::Reference => n_ref += 1,
                Role::Tag => n_tag += 1,
                Role::Anchor => {}
            }
        }
        if n_ref != 1 || n_tag != 1 {
            return Err(SceneError::Invalid(format!(
                "need exactly one reference and one tag, got {n_ref} reference(s), {n_tag} tag(s)"
            )));
        }
        let max_tof = self.max_pairwise_tof();
        if self.round_interval <= 2.0 * max_tof {
            return Err(SceneError::Invalid(format!(
                "round_interval {} s must exceed twice the max time of flight ({} s)",
                self.round_interval,
                2.0 * max_tof
            )));
        }
        if self.tag_response_delay <= 0.0 {
            return Err(SceneError::Invalid(
                "tag_response_delay must be positive".into(),
            ));
        }
        // Message 2 must clear every receiver before message 3 arrives.
        let headroom =
            self.tag_response_delay + 4.0 * crate::model::MAX_HARDWARE_DELAY + 4.0 * max_tof;
        if headroom >= self.round_interval {
            return Err(SceneError::Invalid(format!(
                "tag_response_delay {} s leaves no room in round_interval {} s",
                self.tag_response_delay, self.round_interval
            )));
        }
        if self.noise.timestamp_jitter_sigma < 0.0 || self.noise.power_jitter_sigma < 0.0 {
            return Err(SceneError::Invalid("noise sigmas must be >= 0".into()));
        }
        Ok(())
    }

    fn max_pairwise_tof(&self) -> f64 {
        let mut max = 0.0f64;
        for (i, a) in self.stations.iter().enumerate() {
            for b in &self.stations[i + 1..] {
                max = max.max(true_tof(&a.position, &b.position));
            }
        }
        max
    }

    /// The same scene with `new_ref` promoted to reference and the current
    /// reference demoted to anchor. Used to measure ranges to several
    /// stations in turn for range-only positioning.
    pub fn with_reference(&self, new_ref: u32) -> Result<Scene, SceneError> {
        let mut scene = self.clone();
        let target = scene
            .stations
            .iter()
            .find(|s| s.id == new_ref)
            .ok_or_else(|| SceneError::Invalid(format!("no station with id {new_ref}")))?;
        match target.role {
            Role::Tag => {
                return Err(SceneError::Invalid(format!(
                    "station {new_ref} is the tag; it cannot initiate"
                )))
            }
            Role::Reference => return Ok(scene),
            Role::Anchor => {}
        }
        for s in &mut scene.stations {
            if s.role == Role::Reference {
                s.role = Role::Anchor;
            }
        }
        for s in &mut scene.stations {
            if s.id == new_ref {
                s.role = Role::Reference;
            }
        }
        Ok(scene)
    }
}

/// Time of flight between two points, seconds.
pub fn true_tof(a: &Position, b: &Position) -> f64 {
    a.distance_to(b) / SPEED_OF_LIGHT
}

/// RNG for one exchange. Each (round, initiator) pair owns a ChaCha
/// stream, so any subset of rounds can be regenerated independently.
pub fn exchange_rng(seed: u64, round_idx: u64, reference_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((round_idx << 8) | u64::from(reference_id & 0xff));
    rng
}

struct Reception {
    /// Latched local timestamp, seconds.
    stamp: f64,
    /// Measured power reading, dBm.
    measured_dbm: f64,
}

/// One receive path: true arrival plus latch delay through the receiver's
/// clock, with power error and jitter applied in the clock domain.
fn receive(
    rx: &Station,
    tx: &Station,
    emit_time: f64,
    scene: &Scene,
    rng: &mut impl Rng,
) -> Result<Reception, SceneError> {
    let distance = tx.position.distance_to(&rx.position);
    let arrival = emit_time + distance / SPEED_OF_LIGHT;
    let latch = arrival + rx.hardware_delay;

    let actual_dbm = received_power(
        scene.radio.tx_power_dbm,
        distance.max(MIN_PATH_DISTANCE),
        scene.radio.center_frequency_hz,
    )
    .expect("clamped distance is positive");
    let power_error = rx
        .power_curve
        .timestamp_error(actual_dbm)
        .map_err(|source| SceneError::Power {
            station: rx.id,
            source,
        })?;

    let stamp_noise: f64 = rng.sample(StandardNormal);
    let power_noise: f64 = rng.sample(StandardNormal);
    let sigma = rx
        .rx_jitter_sigma
        .unwrap_or(scene.noise.timestamp_jitter_sigma);
    let jitter = sigma * stamp_noise;

    let measured_dbm = rx
        .power_curve
        .measured_from_actual(actual_dbm)
        .map_err(|source| SceneError::Power {
            station: rx.id,
            source,
        })?
        + scene.noise.power_jitter_sigma * power_noise;

    Ok(Reception {
        stamp: rx.clock.project_with(latch, power_error + jitter),
        measured_dbm,
    })
}

/// Simulate one exchange starting at true time `round_start`.
///
/// Draw order is fixed (per message, tag/reference first, then anchors in
/// id order; one timestamp and one power draw per reception), so records
/// are a pure function of `(scene, round_start, rng state)`.
pub fn simulate_exchange(
    scene: &Scene,
    round_idx: u64,
    round_start: f64,
    rng: &mut impl Rng,
) -> Result<ExchangeRecord, SceneError> {
    scene.validate()?;
    let reference = scene.reference();
    let tag = scene.tag();
    let anchors = scene.anchors();

    // Message 1: reference -> everyone.
    let t1_sched = round_start;
    let t1_stamp = reference.clock.project(t1_sched);
    let t1_emit = t1_sched + reference.hardware_delay;

    let tag_rx1 = receive(tag, reference, t1_emit, scene, rng)?;
    let mut anchor_rx1 = BTreeMap::new();
    for a in &anchors {
        anchor_rx1.insert(a.id, receive(a, reference, t1_emit, scene, rng)?);
    }

    // Message 2: tag -> everyone, one response delay after its latch of
    // message 1 (true-time scheduling).
    let tag_latch1 = t1_emit + true_tof(&reference.position, &tag.position) + tag.hardware_delay;
    let t2_sched = tag_latch1 + scene.tag_response_delay;
    let t2_stamp = tag.clock.project(t2_sched);
    let t2_emit = t2_sched + tag.hardware_delay;

    let ref_rx2 = receive(reference, tag, t2_emit, scene, rng)?;
    let mut anchor_rx2 = BTreeMap::new();
    for a in &anchors {
        anchor_rx2.insert(a.id, receive(a, tag, t2_emit, scene, rng)?);
    }

    // Message 3: reference -> everyone, one round interval after message 1.
    let t3_sched = round_start + scene.round_interval;
    let t3_stamp = reference.clock.project(t3_sched);
    let t3_emit = t3_sched + reference.hardware_delay;

    let tag_rx3 = receive(tag, reference, t3_emit, scene, rng)?;
    let mut anchor_rx3 = BTreeMap::new();
    for a in &anchors {
        anchor_rx3.insert(a.id, receive(a, reference, t3_emit, scene, rng)?);
    }

    let mut anchor_times = BTreeMap::new();
    for a in &anchors {
        anchor_times.insert(
            a.id,
            AnchorTimes {
                t1: anchor_rx1[&a.id].stamp,
                t2: anchor_rx2[&a.id].stamp,
                t3: Some(anchor_rx3[&a.id].stamp),
                p1: anchor_rx1[&a.id].measured_dbm,
                p2: anchor_rx2[&a.id].measured_dbm,
            },
        );
    }

    let tof_ref_tag = true_tof(&reference.position, &tag.position);
    let mut tdoa = BTreeMap::new();
    for a in &anchors {
        tdoa.insert(
            a.id,
            true_tof(&tag.position, &a.position) - true_tof(&reference.position, &a.position),
        );
    }

    let record = ExchangeRecord {
        round_idx,
        reference: ReferenceTimes {
            t1: t1_stamp,
            t2: ref_rx2.stamp,
            t3: t3_stamp,
            p2: ref_rx2.measured_dbm,
        },
        tag: TagTimes {
            t1: tag_rx1.stamp,
            t2: t2_stamp,
            t3: tag_rx3.stamp,
            p1: tag_rx1.measured_dbm,
            p3: tag_rx3.measured_dbm,
        },
        anchors: anchor_times,
        truth: Some(Truth {
            tag_x: tag.position.x,
            tag_y: tag.position.y,
            tof_ref_tag,
            tdoa,
        }),
    };
    debug_assert!(record.is_time_ordered());
    Ok(record)
}

/// Spacing between consecutive round starts in a session.
pub fn round_spacing(scene: &Scene) -> f64 {
    2.0 * scene.round_interval
}

/// Simulate `n_rounds` exchanges, round `k` starting at `k * spacing`.
pub fn simulate_session(
    scene: &Scene,
    n_rounds: u64,
    seed: u64,
) -> Result<Vec<ExchangeRecord>, SceneError> {
    scene.validate()?;
    let spacing = round_spacing(scene);
    let ref_id = scene.reference().id;
    let mut records = Vec::with_capacity(n_rounds as usize);
    for k in 0..n_rounds {
        let mut rng = exchange_rng(seed, k, ref_id);
        records.push(simulate_exchange(scene, k, k as f64 * spacing, &mut rng)?);
    }
    Ok(records)
}
