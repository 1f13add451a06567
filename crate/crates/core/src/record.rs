//! Raw timestamps of one three-message ranging round.
//!
//! Message flow per round: the reference transmits message 1, the tag
//! replies with message 2, the reference closes with message 3. Anchors
//! passively timestamp everything. Timestamps are local clock readings in
//! seconds; powers are the receiver's measured values in dBm.

use std::collections::BTreeMap;

/// Reference-station observations: transmit stamps for messages 1 and 3,
/// receive stamp and measured power for message 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTimes {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Measured receive power of message 2, dBm.
    pub p2: f64,
}

/// Tag observations: receive stamps/powers for messages 1 and 3, transmit
/// stamp for message 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagTimes {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub p1: f64,
    pub p3: f64,
}

/// Passive anchor observations: receive stamps for all three messages and
/// measured powers for messages 1 and 2. `t3` may be absent in malformed
/// or truncated captures; drift correction then fails for that anchor only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTimes {
    pub t1: f64,
    pub t2: f64,
    pub t3: Option<f64>,
    pub p1: f64,
    pub p2: f64,
}

/// Simulator-only ground truth attached to a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// True tag position in the solving plane, meters.
    pub tag_x: f64,
    pub tag_y: f64,
    /// True reference-tag time of flight, seconds.
    pub tof_ref_tag: f64,
    /// True per-anchor range difference time, seconds:
    /// (|tag - anchor| - |reference - anchor|) / c0.
    pub tdoa: BTreeMap<u32, f64>,
}

/// All timestamps of one exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeRecord {
    pub round_idx: u64,
    pub reference: ReferenceTimes,
    pub tag: TagTimes,
    /// Keyed by anchor station id; iteration order is id order.
    pub anchors: BTreeMap<u32, AnchorTimes>,
    /// Present on simulated records only.
    pub truth: Option<Truth>,
}

impl ExchangeRecord {
    /// Message stamps are strictly ordered within every station's clock.
    pub fn is_time_ordered(&self) -> bool {
        let r = &self.reference;
        let t = &self.tag;
        if !(r.t1 < r.t2 && r.t2 < r.t3 && t.t1 < t.t2 && t.t2 < t.t3) {
            return false;
        }
        self.anchors
            .values()
            .all(|a| a.t1 < a.t2 && a.t3.map(|t3| a.t2 < t3).unwrap_or(true))
    }
}
