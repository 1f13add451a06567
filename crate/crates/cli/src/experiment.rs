//! End-to-end experiment: simulate sessions, correct them, solve per
//! round and mode, and aggregate the statistics.
//!
//! Fused mode runs one session with the configured reference: each round
//! yields one two-way range plus one range difference per anchor.
//! Range-only mode measures the tag against every non-tag station in
//! turn by promoting each to reference for its own session, then
//! trilaterates the per-round ranges. Each (round, initiator) pair owns
//! its ChaCha stream, so the whole output tree is a pure function of
//! (config, seed).

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use uwbfuse_core::correct::{correct_record, Calibration, CorrectError, CorrectedMeasurement};
use uwbfuse_core::io::{
    write_corrected_csv, write_estimates_csv, write_records_csv, CorrectedRow, CsvError,
    EstimateRow,
};
use uwbfuse_core::model::SPEED_OF_LIGHT;
use uwbfuse_core::sim::{simulate_session, Scene, SceneError};
use uwbfuse_core::solve::{solve_position, MeasurementSet, Mode, SolveError, SolverConfig};

use crate::config::{ConfigError, ExperimentConfig};
use crate::report::{build_report, format_report, ExperimentReport};
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

impl From<SceneError> for PipelineError {
    fn from(e: SceneError) -> Self {
        PipelineError::Config(ConfigError::Scene(e))
    }
}

impl From<CorrectError> for PipelineError {
    fn from(e: CorrectError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<CsvError> for PipelineError {
    fn from(e: CsvError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn write_out<F>(path: &Path, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut BufWriter<std::fs::File>) -> Result<(), CsvError>,
{
    let file = std::fs::File::create(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn as_row(m: &CorrectedMeasurement) -> CorrectedRow {
    CorrectedRow {
        round_idx: m.round_idx,
        t_toa: m.t_toa,
        t_tdoa: m.t_tdoa.clone(),
    }
}

/// Solve a fused session: per corrected row, one range from the reference
/// plus the anchor range differences.
pub fn fused_estimates(
    scene: &Scene,
    rows: &[CorrectedRow],
) -> Result<Vec<EstimateRow>, PipelineError> {
    let ref_id = scene.reference().id;
    let mut estimates = Vec::with_capacity(rows.len());
    for row in rows {
        let mut geometry = BTreeMap::new();
        geometry.insert(ref_id, scene.reference().position.xy());
        let mut tdoa_ranges = BTreeMap::new();
        for (&anchor, &t) in &row.t_tdoa {
            let station = scene
                .station(anchor)
                .ok_or_else(|| PipelineError::Data(format!("no station {anchor} in scene")))?;
            geometry.insert(anchor, station.position.xy());
            tdoa_ranges.insert(anchor, t * SPEED_OF_LIGHT);
        }
        let set = MeasurementSet {
            mode: Mode::Fused,
            toa_ranges: [(ref_id, row.t_toa * SPEED_OF_LIGHT)].into_iter().collect(),
            tdoa_ranges,
            reference: Some(ref_id),
            geometry,
        };
        let est = solve_position(&set, &SolverConfig::default(), None)?;
        estimates.push(EstimateRow {
            round_idx: row.round_idx,
            mode: Mode::Fused,
            x: est.position.0,
            y: est.position.1,
            residual_norm: est.residual_norm,
            iterations: est.iterations,
            converged: est.converged,
            covariance: est.covariance,
        });
    }
    Ok(estimates)
}

/// Solve a range-only session from per-initiator corrected rows: round k
/// takes one range per initiator.
pub fn toa_estimates(
    scene: &Scene,
    per_ref: &BTreeMap<u32, Vec<CorrectedRow>>,
) -> Result<Vec<EstimateRow>, PipelineError> {
    let mut geometry = BTreeMap::new();
    for &id in per_ref.keys() {
        let station = scene
            .station(id)
            .ok_or_else(|| PipelineError::Data(format!("no station {id} in scene")))?;
        geometry.insert(id, station.position.xy());
    }
    let n = per_ref
        .values()
        .next()
        .map(Vec::len)
        .ok_or_else(|| PipelineError::Data("no range sessions supplied".into()))?;
    for (id, rows) in per_ref {
        if rows.len() != n {
            return Err(PipelineError::Data(format!(
                "initiator {id} has {} rounds, expected {n}",
                rows.len()
            )));
        }
    }

    let mut estimates = Vec::with_capacity(n);
    for k in 0..n {
        let mut toa_ranges = BTreeMap::new();
        let mut round_idx = None;
        for (&id, rows) in per_ref {
            let row = &rows[k];
            match round_idx {
                None => round_idx = Some(row.round_idx),
                Some(expected) if expected != row.round_idx => {
                    return Err(PipelineError::Data(format!(
                        "initiator {id} row {k} has round_idx {}, expected {expected}",
                        row.round_idx
                    )))
                }
                _ => {}
            }
            toa_ranges.insert(id, row.t_toa * SPEED_OF_LIGHT);
        }
        let set = MeasurementSet {
            mode: Mode::ToaOnly,
            toa_ranges,
            tdoa_ranges: BTreeMap::new(),
            reference: None,
            geometry: geometry.clone(),
        };
        let est = solve_position(&set, &SolverConfig::default(), None)?;
        estimates.push(EstimateRow {
            round_idx: round_idx.unwrap_or(k as u64),
            mode: Mode::ToaOnly,
            x: est.position.0,
            y: est.position.1,
            residual_norm: est.residual_norm,
            iterations: est.iterations,
            converged: est.converged,
            covariance: est.covariance,
        });
    }
    Ok(estimates)
}

fn correct_session(
    scene: &Scene,
    records: &[uwbfuse_core::ExchangeRecord],
) -> Result<Vec<CorrectedMeasurement>, PipelineError> {
    let cal = Calibration::from_scene(scene);
    records
        .iter()
        .map(|r| correct_record(r, &cal).map_err(PipelineError::from))
        .collect()
}

/// Run the full pipeline and write the output tree:
/// `records_*.csv`, `corrected_*.csv`, `estimates_*.csv`, `report.txt`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentReport, PipelineError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", out_dir.display())))?;
    let scene = &config.scene;
    let truth = scene.tag().position.xy();

    let mut rows_by_mode: BTreeMap<String, Vec<EstimateRow>> = BTreeMap::new();
    for &mode in &config.modes {
        let estimates = match mode {
            Mode::Fused => {
                let records = simulate_session(scene, config.rounds, config.seed)?;
                write_out(&out_dir.join("records_fused.csv"), |w| {
                    write_records_csv(w, &records)
                })?;
                let corrected = correct_session(scene, &records)?;
                write_out(&out_dir.join("corrected_fused.csv"), |w| {
                    write_corrected_csv(w, &corrected, config.diagnostics)
                })?;
                let rows: Vec<CorrectedRow> = corrected.iter().map(as_row).collect();
                let estimates = fused_estimates(scene, &rows)?;
                write_out(&out_dir.join("estimates_fused.csv"), |w| {
                    write_estimates_csv(w, &estimates)
                })?;
                estimates
            }
            Mode::ToaOnly => {
                let mut initiators: Vec<u32> = scene
                    .stations
                    .iter()
                    .filter(|s| s.role != uwbfuse_core::Role::Tag)
                    .map(|s| s.id)
                    .collect();
                initiators.sort_unstable();
                if initiators.len() < 3 {
                    return Err(PipelineError::Config(ConfigError::Invalid(format!(
                        "range-only positioning needs at least 3 non-tag stations, got {}",
                        initiators.len()
                    ))));
                }
                let mut per_ref = BTreeMap::new();
                for id in initiators {
                    let rotated = scene.with_reference(id)?;
                    let records = simulate_session(&rotated, config.rounds, config.seed)?;
                    write_out(&out_dir.join(format!("records_toa_ref{id}.csv")), |w| {
                        write_records_csv(w, &records)
                    })?;
                    let corrected = correct_session(&rotated, &records)?;
                    write_out(&out_dir.join(format!("corrected_toa_ref{id}.csv")), |w| {
                        write_corrected_csv(w, &corrected, config.diagnostics)
                    })?;
                    per_ref.insert(id, corrected.iter().map(as_row).collect());
                }
                let estimates = toa_estimates(scene, &per_ref)?;
                write_out(&out_dir.join("estimates_toa.csv"), |w| {
                    write_estimates_csv(w, &estimates)
                })?;
                estimates
            }
        };
        rows_by_mode.insert(mode.to_string(), estimates);
    }

    let report = build_report(
        &rows_by_mode,
        Some(config.rounds),
        Some(config.seed),
        Some(scene.radio.clone()),
        Some(truth),
    )?;
    std::fs::write(out_dir.join("report.txt"), format_report(&report))
        .map_err(|e| PipelineError::Data(format!("report.txt: {e}")))?;
    Ok(report)
}
