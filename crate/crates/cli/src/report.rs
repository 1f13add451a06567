//! Experiment report: per-mode statistics, mode agreement, and ground
//! truth deviation, with a fixed text rendering.

use std::collections::BTreeMap;

use uwbfuse_core::io::EstimateRow;
use uwbfuse_core::sim::RadioProfile;
use uwbfuse_core::solve::{Covariance2, Mode};

use crate::stats::{self, StatsError};

#[derive(Debug, Clone, PartialEq)]
pub struct ModeStats {
    pub mode: Mode,
    /// Converged rounds that entered the statistics.
    pub n_used: usize,
    /// Non-converged rounds, excluded.
    pub n_excluded: usize,
    pub mean: (f64, f64),
    pub stddev: (f64, f64),
    pub covariance: Covariance2,
    /// |mean - ground truth| per axis, when the truth is known.
    pub truth_deviation: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Run parameters when known (the standalone `report` subcommand
    /// works from an estimates file alone).
    pub rounds: Option<u64>,
    pub seed: Option<u64>,
    pub radio: Option<RadioProfile>,
    pub truth: Option<(f64, f64)>,
    pub modes: Vec<ModeStats>,
    /// Per-axis distance between the two modes' means, when both ran.
    pub cross_mode_diff: Option<(f64, f64)>,
}

/// Statistics over one mode's estimate rows. Only converged rows count.
pub fn stats_for_mode(
    mode: Mode,
    rows: &[EstimateRow],
    truth: Option<(f64, f64)>,
) -> Result<ModeStats, StatsError> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.converged)
        .map(|r| (r.x, r.y))
        .collect();
    let n_excluded = rows.len() - points.len();
    let mean = stats::mean(&points)?;
    let covariance = stats::covariance(&points)?;
    let stddev = (covariance.xx.sqrt(), covariance.yy.sqrt());
    Ok(ModeStats {
        mode,
        n_used: points.len(),
        n_excluded,
        mean,
        stddev,
        covariance,
        truth_deviation: truth.map(|(tx, ty)| ((mean.0 - tx).abs(), (mean.1 - ty).abs())),
    })
}

/// Assemble a report from estimate rows grouped by mode.
pub fn build_report(
    rows_by_mode: &BTreeMap<String, Vec<EstimateRow>>,
    rounds: Option<u64>,
    seed: Option<u64>,
    radio: Option<RadioProfile>,
    truth: Option<(f64, f64)>,
) -> Result<ExperimentReport, StatsError> {
    let mut modes = Vec::new();
    for rows in rows_by_mode.values() {
        let mode = rows.first().map(|r| r.mode).unwrap_or(Mode::ToaOnly);
        modes.push(stats_for_mode(mode, rows, truth)?);
    }
    let cross_mode_diff = {
        let toa = modes.iter().find(|m| m.mode == Mode::ToaOnly);
        let fused = modes.iter().find(|m| m.mode == Mode::Fused);
        match (toa, fused) {
            (Some(t), Some(f)) => Some(((t.mean.0 - f.mean.0).abs(), (t.mean.1 - f.mean.1).abs())),
            _ => None,
        }
    };
    Ok(ExperimentReport {
        rounds,
        seed,
        radio,
        truth,
        modes,
        cross_mode_diff,
    })
}

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

/// Fixed-format text rendering; identical reports render to identical bytes.
pub fn format_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    if let Some(rounds) = report.rounds {
        out.push_str(&format!("rounds: {rounds}\n"));
    }
    if let Some(seed) = report.seed {
        out.push_str(&format!("seed: {seed}\n"));
    }
    if let Some(r) = &report.radio {
        out.push_str(&format!(
            "radio: channel {}, center {} Hz, bandwidth {} Hz, prf {} Hz, preamble {}, data rate {} bps, tx {} dBm\n",
            r.channel,
            r.center_frequency_hz,
            r.bandwidth_hz,
            r.prf_hz,
            r.preamble_length,
            r.data_rate_bps,
            r.tx_power_dbm,
        ));
    }
    if let Some((tx, ty)) = report.truth {
        out.push_str(&format!("ground truth: x={} y={}\n", num(tx), num(ty)));
    }
    for m in &report.modes {
        out.push('\n');
        out.push_str(&format!(
            "mode {}: used {}, excluded {}\n",
            m.mode, m.n_used, m.n_excluded
        ));
        out.push_str(&format!(
            "  mean:   x={} y={}\n",
            num(m.mean.0),
            num(m.mean.1)
        ));
        out.push_str(&format!(
            "  stddev: x={} y={}\n",
            num(m.stddev.0),
            num(m.stddev.1)
        ));
        out.push_str(&format!(
            "  cov:    xx={} xy={} yy={}\n",
            num(m.covariance.xx),
            num(m.covariance.xy),
            num(m.covariance.yy)
        ));
        if let Some((dx, dy)) = m.truth_deviation {
            out.push_str(&format!("  truth deviation: x={} y={}\n", num(dx), num(dy)));
        }
    }
    if let Some((dx, dy)) = report.cross_mode_diff {
        out.push('\n');
        out.push_str(&format!(
            "mode mean difference: x={} y={}\n",
            num(dx),
            num(dy)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: Mode, x: f64, y: f64, converged: bool) -> EstimateRow {
        EstimateRow {
            round_idx: 0,
            mode,
            x,
            y,
            residual_norm: 0.0,
            iterations: 3,
            converged,
            covariance: Covariance2 {
                xx: 0.0,
                xy: 0.0,
                yy: 0.0,
            },
        }
    }

    #[test]
    fn excluded_rounds_are_counted_not_used() {
        let rows = vec![
            row(Mode::ToaOnly, 1.0, 1.0, true),
            row(Mode::ToaOnly, 1.2, 0.8, true),
            row(Mode::ToaOnly, 99.0, 99.0, false),
        ];
        let stats = stats_for_mode(Mode::ToaOnly, &rows, Some((1.1, 0.9))).unwrap();
        assert_eq!(stats.n_used, 2);
        assert_eq!(stats.n_excluded, 1);
        assert!((stats.mean.0 - 1.1).abs() < 1e-12);
        let (dx, dy) = stats.truth_deviation.unwrap();
        assert!(dx < 1e-12 && dy < 1e-12);
        // stddev is the square root of the covariance diagonal.
        assert!((stats.stddev.0.powi(2) - stats.covariance.xx).abs() < 1e-12);
        assert!((stats.stddev.1.powi(2) - stats.covariance.yy).abs() < 1e-12);
    }

    #[test]
    fn report_renders_deterministically() {
        let mut by_mode = BTreeMap::new();
        by_mode.insert(
            "fused".to_string(),
            vec![
                row(Mode::Fused, 0.0, 1.5, true),
                row(Mode::Fused, 0.1, 1.6, true),
            ],
        );
        by_mode.insert(
            "toa".to_string(),
            vec![
                row(Mode::ToaOnly, 0.0, 1.5, true),
                row(Mode::ToaOnly, 0.2, 1.4, true),
            ],
        );
        let report = build_report(
            &by_mode,
            Some(2),
            Some(9),
            Some(RadioProfile::default()),
            Some((0.0, 1.5134)),
        )
        .unwrap();
        assert!(report.cross_mode_diff.is_some());
        let a = format_report(&report);
        let b = format_report(&report);
        assert_eq!(a, b);
        assert!(a.contains("mode toa"));
        assert!(a.contains("mode fused"));
        assert!(a.contains("mode mean difference"));
        assert!(a.contains("channel 2"));
    }
}
