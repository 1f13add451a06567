//! CSV encodings of the pipeline's three artifact kinds: raw exchange
//! records, corrected measurements, and position estimates.
//!
//! Record times are written in seconds with 15 significant digits, powers
//! in dBm. Corrected and estimate values carry 17 significant digits so
//! they round-trip f64 exactly. Anchor columns carry the anchor id in the
//! header (`t1_s3`, ...), so a file is self-describing. Formatting is
//! fixed so identical inputs produce byte-identical files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::correct::CorrectedMeasurement;
use crate::record::{AnchorTimes, ExchangeRecord, ReferenceTimes, TagTimes, Truth};
use crate::solve::{Covariance2, Mode};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

fn malformed(line: usize, reason: impl Into<String>) -> CsvError {
    CsvError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn fmt_time(v: f64) -> String {
    format!("{v:.14e}")
}

fn fmt_power(v: f64) -> String {
    format!("{v:.9e}")
}

/// 17 significant digits: enough to reproduce any f64 bit-exactly.
fn fmt_exact(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(line: usize, field: &str, name: &str) -> Result<f64, CsvError> {
    field.trim().parse::<f64>().map_err(|_| {
        malformed(
            line,
            format!("field {name}: cannot parse '{field}' as a number"),
        )
    })
}

// ---------------------------------------------------------------------------
// Exchange records
// ---------------------------------------------------------------------------

/// Anchor ids of a record set, in header order.
pub fn record_anchor_ids(records: &[ExchangeRecord]) -> Vec<u32> {
    records
        .first()
        .map(|r| r.anchors.keys().copied().collect())
        .unwrap_or_default()
}

/// Write records. All records must share the first record's anchor set;
/// truth columns are emitted when the first record carries truth.
pub fn write_records_csv<W: Write>(w: &mut W, records: &[ExchangeRecord]) -> Result<(), CsvError> {
    let anchor_ids = record_anchor_ids(records);
    let with_truth = records.first().map(|r| r.truth.is_some()).unwrap_or(false);

    let mut header = String::from("round_idx,t1_r,t2_r,t3_r,p2_r,t1_t,t2_t,t3_t,p1_t,p3_t");
    for id in &anchor_ids {
        header.push_str(&format!(",t1_s{id},t2_s{id},t3_s{id},p1_s{id},p2_s{id}"));
    }
    if with_truth {
        header.push_str(",true_x,true_y");
    }
    writeln!(w, "{header}")?;

    for (i, rec) in records.iter().enumerate() {
        let ids: Vec<u32> = rec.anchors.keys().copied().collect();
        if ids != anchor_ids {
            return Err(malformed(i + 2, "record anchor set differs from header"));
        }
        let mut fields = vec![
            rec.round_idx.to_string(),
            fmt_time(rec.reference.t1),
            fmt_time(rec.reference.t2),
            fmt_time(rec.reference.t3),
            fmt_power(rec.reference.p2),
            fmt_time(rec.tag.t1),
            fmt_time(rec.tag.t2),
            fmt_time(rec.tag.t3),
            fmt_power(rec.tag.p1),
            fmt_power(rec.tag.p3),
        ];
        for id in &anchor_ids {
            let a = &rec.anchors[id];
            fields.push(fmt_time(a.t1));
            fields.push(fmt_time(a.t2));
            fields.push(a.t3.map(fmt_time).unwrap_or_default());
            fields.push(fmt_power(a.p1));
            fields.push(fmt_power(a.p2));
        }
        if with_truth {
            let truth = rec.truth.as_ref().ok_or_else(|| {
                malformed(i + 2, "record lacks truth but header has truth columns")
            })?;
            fields.push(fmt_time(truth.tag_x));
            fields.push(fmt_time(truth.tag_y));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_records_csv<R: BufRead>(r: R) -> Result<Vec<ExchangeRecord>, CsvError> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    let header = header?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let fixed = [
        "round_idx",
        "t1_r",
        "t2_r",
        "t3_r",
        "p2_r",
        "t1_t",
        "t2_t",
        "t3_t",
        "p1_t",
        "p3_t",
    ];
    if cols.len() < fixed.len() || cols[..fixed.len()] != fixed {
        return Err(malformed(1, "unexpected record header"));
    }
    let mut anchor_ids = Vec::new();
    let mut idx = fixed.len();
    while idx < cols.len() && cols[idx].starts_with("t1_s") {
        let id: u32 = cols[idx][4..]
            .parse()
            .map_err(|_| malformed(1, format!("bad anchor column '{}'", cols[idx])))?;
        let expected = [
            format!("t1_s{id}"),
            format!("t2_s{id}"),
            format!("t3_s{id}"),
            format!("p1_s{id}"),
            format!("p2_s{id}"),
        ];
        for (k, name) in expected.iter().enumerate() {
            if cols.get(idx + k).copied() != Some(name.as_str()) {
                return Err(malformed(1, format!("anchor {id} columns out of order")));
            }
        }
        anchor_ids.push(id);
        idx += 5;
    }
    let with_truth = match &cols[idx..] {
        [] => false,
        ["true_x", "true_y"] => true,
        rest => {
            return Err(malformed(
                1,
                format!("unexpected trailing columns {rest:?}"),
            ))
        }
    };

    let mut records = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = lineno + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(malformed(
                n,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let round_idx: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| malformed(n, format!("bad round_idx '{}'", fields[0])))?;
        let reference = ReferenceTimes {
            t1: parse_f64(n, fields[1], "t1_r")?,
            t2: parse_f64(n, fields[2], "t2_r")?,
            t3: parse_f64(n, fields[3], "t3_r")?,
            p2: parse_f64(n, fields[4], "p2_r")?,
        };
        let tag = TagTimes {
            t1: parse_f64(n, fields[5], "t1_t")?,
            t2: parse_f64(n, fields[6], "t2_t")?,
            t3: parse_f64(n, fields[7], "t3_t")?,
            p1: parse_f64(n, fields[8], "p1_t")?,
            p3: parse_f64(n, fields[9], "p3_t")?,
        };
        let mut anchors = BTreeMap::new();
        let mut k = 10;
        for &id in &anchor_ids {
            let t3_field = fields[k + 2].trim();
            anchors.insert(
                id,
                AnchorTimes {
                    t1: parse_f64(n, fields[k], "t1_s")?,
                    t2: parse_f64(n, fields[k + 1], "t2_s")?,
                    t3: if t3_field.is_empty() {
                        None
                    } else {
                        Some(parse_f64(n, t3_field, "t3_s")?)
                    },
                    p1: parse_f64(n, fields[k + 3], "p1_s")?,
                    p2: parse_f64(n, fields[k + 4], "p2_s")?,
                },
            );
            k += 5;
        }
        let truth = if with_truth {
            Some(Truth {
                tag_x: parse_f64(n, fields[k], "true_x")?,
                tag_y: parse_f64(n, fields[k + 1], "true_y")?,
                tof_ref_tag: 0.0,
                tdoa: BTreeMap::new(),
            })
        } else {
            None
        };
        records.push(ExchangeRecord {
            round_idx,
            reference,
            tag,
            anchors,
            truth,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Corrected measurements
// ---------------------------------------------------------------------------

/// Corrected values as read back from CSV (diagnostics are write-only).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedRow {
    pub round_idx: u64,
    pub t_toa: f64,
    pub t_tdoa: BTreeMap<u32, f64>,
}

/// Anchor universe of a corrected set: successes plus failures of the
/// first measurement.
pub fn corrected_anchor_ids(rows: &[CorrectedMeasurement]) -> Vec<u32> {
    rows.first()
        .map(|m| {
            m.t_tdoa
                .keys()
                .chain(m.failed_anchors.keys())
                .copied()
                .collect()
        })
        .unwrap_or_default()
}

/// Write corrected measurements; failed anchors leave their cells empty.
/// `diagnostics` appends the drift, power, and offset terms.
pub fn write_corrected_csv<W: Write>(
    w: &mut W,
    rows: &[CorrectedMeasurement],
    diagnostics: bool,
) -> Result<(), CsvError> {
    let anchor_ids = corrected_anchor_ids(rows);
    let mut header = String::from("round_idx,t_toa");
    for id in &anchor_ids {
        header.push_str(&format!(",t_tdoa_s{id}"));
    }
    if diagnostics {
        header.push_str(",c13_rt");
        for id in &anchor_ids {
            header.push_str(&format!(",c13_s{id}"));
        }
        header.push_str(",e1,e2");
        for id in &anchor_ids {
            header.push_str(&format!(",e3_s{id},e4_s{id}"));
        }
        header.push_str(",k");
    }
    writeln!(w, "{header}")?;

    for (i, m) in rows.iter().enumerate() {
        let universe: Vec<u32> = m
            .t_tdoa
            .keys()
            .chain(m.failed_anchors.keys())
            .copied()
            .collect();
        if universe != anchor_ids {
            return Err(malformed(
                i + 2,
                "measurement anchor set differs from header",
            ));
        }
        let mut fields = vec![m.round_idx.to_string(), fmt_exact(m.t_toa)];
        for id in &anchor_ids {
            fields.push(m.t_tdoa.get(id).map(|&v| fmt_exact(v)).unwrap_or_default());
        }
        if diagnostics {
            fields.push(fmt_exact(m.diagnostics.c13_rt));
            for id in &anchor_ids {
                fields.push(
                    m.diagnostics
                        .anchors
                        .get(id)
                        .map(|d| fmt_exact(d.c13_s))
                        .unwrap_or_default(),
                );
            }
            fields.push(fmt_exact(m.diagnostics.e1));
            fields.push(fmt_exact(m.diagnostics.e2));
            for id in &anchor_ids {
                match m.diagnostics.anchors.get(id) {
                    Some(d) => {
                        fields.push(fmt_exact(d.e3));
                        fields.push(fmt_exact(d.e4));
                    }
                    None => {
                        fields.push(String::new());
                        fields.push(String::new());
                    }
                }
            }
            fields.push(fmt_exact(m.diagnostics.k));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_corrected_csv<R: BufRead>(r: R) -> Result<Vec<CorrectedRow>, CsvError> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    let header = header?;
    let cols: Vec<String> = header.trim().split(',').map(str::to_string).collect();
    if cols.len() < 2 || cols[0] != "round_idx" || cols[1] != "t_toa" {
        return Err(malformed(1, "unexpected corrected header"));
    }
    let mut anchor_ids = Vec::new();
    let mut idx = 2;
    while idx < cols.len() && cols[idx].starts_with("t_tdoa_s") {
        let id: u32 = cols[idx][8..]
            .parse()
            .map_err(|_| malformed(1, format!("bad anchor column '{}'", cols[idx])))?;
        anchor_ids.push(id);
        idx += 1;
    }
    // Diagnostic columns, when present, are ignored on read.
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = lineno + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(malformed(
                n,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let round_idx: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| malformed(n, format!("bad round_idx '{}'", fields[0])))?;
        let t_toa = parse_f64(n, fields[1], "t_toa")?;
        let mut t_tdoa = BTreeMap::new();
        for (k, &id) in anchor_ids.iter().enumerate() {
            let field = fields[2 + k].trim();
            if !field.is_empty() {
                t_tdoa.insert(id, parse_f64(n, field, "t_tdoa")?);
            }
        }
        rows.push(CorrectedRow {
            round_idx,
            t_toa,
            t_tdoa,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Position estimates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub round_idx: u64,
    pub mode: Mode,
    pub x: f64,
    pub y: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub covariance: Covariance2,
}

pub fn write_estimates_csv<W: Write>(w: &mut W, rows: &[EstimateRow]) -> Result<(), CsvError> {
    writeln!(
        w,
        "round_idx,mode,x,y,residual_norm,iterations,converged,cov_xx,cov_xy,cov_yy"
    )?;
    for e in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            e.round_idx,
            e.mode,
            fmt_exact(e.x),
            fmt_exact(e.y),
            fmt_exact(e.residual_norm),
            e.iterations,
            e.converged,
            fmt_exact(e.covariance.xx),
            fmt_exact(e.covariance.xy),
            fmt_exact(e.covariance.yy),
        )?;
    }
    Ok(())
}

pub fn read_estimates_csv<R: BufRead>(r: R) -> Result<Vec<EstimateRow>, CsvError> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    let header = header?;
    if header.trim() != "round_idx,mode,x,y,residual_norm,iterations,converged,cov_xx,cov_xy,cov_yy"
    {
        return Err(malformed(1, "unexpected estimates header"));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = lineno + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(malformed(
                n,
                format!("expected 10 fields, got {}", fields.len()),
            ));
        }
        let mode = match fields[1].trim() {
            "toa" => Mode::ToaOnly,
            "fused" => Mode::Fused,
            other => return Err(malformed(n, format!("unknown mode '{other}'"))),
        };
        rows.push(EstimateRow {
            round_idx: fields[0]
                .trim()
                .parse()
                .map_err(|_| malformed(n, "bad round_idx"))?,
            mode,
            x: parse_f64(n, fields[2], "x")?,
            y: parse_f64(n, fields[3], "y")?,
            residual_norm: parse_f64(n, fields[4], "residual_norm")?,
            iterations: fields[5]
                .trim()
                .parse()
                .map_err(|_| malformed(n, "bad iterations"))?,
            converged: match fields[6].trim() {
                "true" => true,
                "false" => false,
                other => return Err(malformed(n, format!("bad converged flag '{other}'"))),
            },
            covariance: Covariance2 {
                xx: parse_f64(n, fields[7], "cov_xx")?,
                xy: parse_f64(n, fields[8], "cov_xy")?,
                yy: parse_f64(n, fields[9], "cov_yy")?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correct::{correct_record, Calibration};
    use crate::sim::simulate_session;
    use crate::testutil::{desk_scene, ErrorConfig};

    fn sample_records() -> Vec<ExchangeRecord> {
        let mut cfg = ErrorConfig::all_off();
        cfg.timestamp_jitter_sigma = 50e-12;
        cfg.power_jitter_sigma = 0.2;
        cfg.tick = crate::model::DEFAULT_TICK;
        simulate_session(&desk_scene(cfg), 4, 3).unwrap()
    }

    #[test]
    fn records_round_trip_through_csv() {
        let records = sample_records();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &records).unwrap();
        let back = read_records_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.round_idx, b.round_idx);
            let rel = |x: f64, y: f64| (x - y).abs() <= 1e-14 * x.abs().max(1.0);
            assert!(rel(a.reference.t2, b.reference.t2));
            assert!(rel(a.tag.t1, b.tag.t1));
            assert_eq!(a.anchors.len(), b.anchors.len());
            let truth_a = a.truth.as_ref().unwrap();
            let truth_b = b.truth.as_ref().unwrap();
            assert!(rel(truth_a.tag_x, truth_b.tag_x));
        }
    }

    #[test]
    fn missing_anchor_stamp_is_an_empty_cell() {
        let mut records = sample_records();
        records[1].anchors.get_mut(&3).unwrap().t3 = None;
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().contains(",,"));
        let back = read_records_csv(&buf[..]).unwrap();
        assert_eq!(back[1].anchors[&3].t3, None);
        assert!(back[0].anchors[&3].t3.is_some());
    }

    #[test]
    fn corrected_round_trip_with_and_without_diagnostics() {
        let records = sample_records();
        let scene = {
            let mut cfg = ErrorConfig::all_off();
            cfg.timestamp_jitter_sigma = 50e-12;
            cfg.power_jitter_sigma = 0.2;
            cfg.tick = crate::model::DEFAULT_TICK;
            desk_scene(cfg)
        };
        let cal = Calibration::from_scene(&scene);
        let corrected: Vec<_> = records
            .iter()
            .map(|r| correct_record(r, &cal).unwrap())
            .collect();

        for diagnostics in [false, true] {
            let mut buf = Vec::new();
            write_corrected_csv(&mut buf, &corrected, diagnostics).unwrap();
            let header_len = String::from_utf8(buf.clone())
                .unwrap()
                .lines()
                .next()
                .unwrap()
                .split(',')
                .count();
            assert_eq!(header_len, if diagnostics { 14 } else { 4 });
            let back = read_corrected_csv(&buf[..]).unwrap();
            assert_eq!(back.len(), corrected.len());
            for (a, b) in corrected.iter().zip(&back) {
                assert_eq!(a.round_idx, b.round_idx);
                assert!((a.t_toa - b.t_toa).abs() < 1e-22);
                assert_eq!(a.t_tdoa.len(), b.t_tdoa.len());
            }
        }
    }

    #[test]
    fn failed_anchors_leave_empty_cells() {
        let scene = desk_scene(ErrorConfig::all_off());
        let cal = Calibration::from_scene(&scene);
        let mut records = simulate_session(&scene, 1, 0).unwrap();
        records[0].anchors.get_mut(&4).unwrap().t3 = None;
        let corrected = vec![correct_record(&records[0], &cal).unwrap()];
        let mut buf = Vec::new();
        write_corrected_csv(&mut buf, &corrected, false).unwrap();
        let back = read_corrected_csv(&buf[..]).unwrap();
        assert!(back[0].t_tdoa.contains_key(&3));
        assert!(!back[0].t_tdoa.contains_key(&4));
    }

    #[test]
    fn estimates_round_trip() {
        let rows = vec![EstimateRow {
            round_idx: 7,
            mode: Mode::Fused,
            x: 0.1,
            y: 1.51,
            residual_norm: 2e-4,
            iterations: 6,
            converged: true,
            covariance: Covariance2 {
                xx: 1e-6,
                xy: -2e-8,
                yy: 3e-6,
            },
        }];
        let mut buf = Vec::new();
        write_estimates_csv(&mut buf, &rows).unwrap();
        let back = read_estimates_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].mode, Mode::Fused);
        assert_eq!(back[0].iterations, 6);
        assert!((back[0].covariance.xy - -2e-8).abs() < 1e-20);
    }

    #[test]
    fn bad_headers_are_rejected() {
        assert!(read_records_csv(&b"nope,nope\n"[..]).is_err());
        assert!(read_corrected_csv(&b"round_idx,wrong\n"[..]).is_err());
        assert!(read_estimates_csv(&b"round_idx,mode\n"[..]).is_err());
    }

    #[test]
    fn bad_fields_name_the_line() {
        let text = "round_idx,t_toa,t_tdoa_s3\n0,abc,1e-9\n";
        match read_corrected_csv(text.as_bytes()) {
            Err(CsvError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }
}
