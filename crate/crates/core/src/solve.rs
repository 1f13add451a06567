//! 2D position estimation by damped nonlinear least squares.
//!
//! Two measurement geometries are supported: range-only (three or more
//! two-way ranges, circles) and fused (one two-way range plus two or more
//! arrival-time-difference ranges, a circle plus hyperbolas). Both reduce
//! to minimizing the squared residual norm with a Levenberg-Marquardt
//! iteration and an analytic Jacobian of unit direction vectors.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("need {need} {kind} measurements, got {got}")]
    TooFewMeasurements {
        kind: &'static str,
        need: usize,
        got: usize,
    },
    #[error("station {0} referenced by a measurement is not in the geometry")]
    UnknownStation(u32),
    #[error("fused mode needs a reference station")]
    MissingReference,
    #[error("candidate coincides with station {0}; residual gradient undefined")]
    CoincidentStation(u32),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("weight vector length {got} does not match {rows} residual rows")]
    WeightLength { got: usize, rows: usize },
}

/// Which equation system to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ToaOnly,
    Fused,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::ToaOnly => write!(f, "toa"),
            Mode::Fused => write!(f, "fused"),
        }
    }
}

/// One round's measurements converted to meters, plus the station map.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub mode: Mode,
    /// Two-way ranges, keyed by the measuring station: |station - tag|.
    pub toa_ranges: BTreeMap<u32, f64>,
    /// Range differences keyed by anchor: |tag - anchor| - |reference - anchor|.
    pub tdoa_ranges: BTreeMap<u32, f64>,
    /// Reference station the range differences are taken against
    /// (required in fused mode).
    pub reference: Option<u32>,
    /// Station positions in the solving plane, meters.
    pub geometry: BTreeMap<u32, (f64, f64)>,
}

impl MeasurementSet {
    /// Check the mode's row-count invariants and that every referenced
    /// station has a position.
    pub fn validate(&self) -> Result<(), SolveError> {
        match self.mode {
            Mode::ToaOnly => {
                if self.toa_ranges.len() < 3 {
                    return Err(SolveError::TooFewMeasurements {
                        kind: "range",
                        need: 3,
                        got: self.toa_ranges.len(),
                    });
                }
            }
            Mode::Fused => {
                if self.toa_ranges.is_empty() {
                    return Err(SolveError::TooFewMeasurements {
                        kind: "range",
                        need: 1,
                        got: 0,
                    });
                }
                if self.tdoa_ranges.len() < 2 {
                    return Err(SolveError::TooFewMeasurements {
                        kind: "range-difference",
                        need: 2,
                        got: self.tdoa_ranges.len(),
                    });
                }
                let reference = self.reference.ok_or(SolveError::MissingReference)?;
                if !self.geometry.contains_key(&reference) {
                    return Err(SolveError::UnknownStation(reference));
                }
            }
        }
        for &id in self.toa_ranges.keys().chain(self.tdoa_ranges.keys()) {
            if !self.geometry.contains_key(&id) {
                return Err(SolveError::UnknownStation(id));
            }
        }
        Ok(())
    }

    fn rows(&self) -> usize {
        self.toa_ranges.len()
            + if self.mode == Mode::Fused {
                self.tdoa_ranges.len()
            } else {
                0
            }
    }
}

/// Solver controls. Tolerances are in meters.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Optional per-row weights, residual-row order (ranges by station id,
    /// then range differences by anchor id). `None` weighs all rows equally.
    pub weights: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            weights: None,
        }
    }
}

/// Symmetric 2x2 covariance, m^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    pub position: (f64, f64),
    /// Euclidean norm of the (weighted) residual vector at the solution, meters.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub covariance: Covariance2,
}

/// Residual vector at `candidate`: measured minus modeled, meters, one
/// entry per measurement. Range rows come first (station id order), then
/// range-difference rows (anchor id order) in fused mode.
///
/// A candidate sitting exactly on a station still has a residual (the
/// model term is zero); only its gradient is undefined, so the
/// coincidence error lives in [`jacobian`].
pub fn residuals(set: &MeasurementSet, candidate: (f64, f64)) -> Result<Vec<f64>, SolveError> {
    let mut out = Vec::with_capacity(set.rows());
    for (&id, &range) in &set.toa_ranges {
        let d = distance(candidate, station(set, id)?);
        out.push(range - d);
    }
    if set.mode == Mode::Fused {
        let ref_pos = station(set, set.reference.ok_or(SolveError::MissingReference)?)?;
        for (&id, &diff) in &set.tdoa_ranges {
            let anchor = station(set, id)?;
            let model = distance(candidate, anchor) - distance(ref_pos, anchor);
            out.push(diff - model);
        }
    }
    Ok(out)
}

/// Analytic Jacobian of [`residuals`] with respect to the candidate:
/// each row is the negated unit vector from the measuring station (or
/// anchor) to the candidate. The reference term of a range-difference row
/// is constant in the candidate and contributes nothing.
pub fn jacobian(set: &MeasurementSet, candidate: (f64, f64)) -> Result<Vec<[f64; 2]>, SolveError> {
    let mut out = Vec::with_capacity(set.rows());
    for &id in set.toa_ranges.keys() {
        out.push(unit_row(set, id, candidate)?);
    }
    if set.mode == Mode::Fused {
        for &id in set.tdoa_ranges.keys() {
            out.push(unit_row(set, id, candidate)?);
        }
    }
    Ok(out)
}

fn unit_row(set: &MeasurementSet, id: u32, candidate: (f64, f64)) -> Result<[f64; 2], SolveError> {
    let pos = station(set, id)?;
    let d = distance(candidate, pos);
    if d == 0.0 {
        return Err(SolveError::CoincidentStation(id));
    }
    Ok([-(candidate.0 - pos.0) / d, -(candidate.1 - pos.1) / d])
}

fn station(set: &MeasurementSet, id: u32) -> Result<(f64, f64), SolveError> {
    set.geometry
        .get(&id)
        .copied()
        .ok_or(SolveError::UnknownStation(id))
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Centroid of the station positions; the default solver start point.
pub fn initial_guess(geometry: &BTreeMap<u32, (f64, f64)>) -> (f64, f64) {
    if geometry.is_empty() {
        return (0.0, 0.0);
    }
    let n = geometry.len() as f64;
    let (sx, sy) = geometry
        .values()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    (sx / n, sy / n)
}

/// Levenberg-Marquardt minimization of the squared residual norm.
///
/// Returns `converged = false` when the iteration budget runs out or the
/// damping stalls; rank-deficient normal equations at the solution are a
/// degenerate-geometry error.
pub fn solve_position(
    set: &MeasurementSet,
    config: &SolverConfig,
    initial: Option<(f64, f64)>,
) -> Result<PositionEstimate, SolveError> {
    solve_position_traced(set, config, initial).map(|(estimate, _)| estimate)
}

/// [`solve_position`] plus the accepted-cost trace, for tests asserting
/// monotone descent.
#[doc(hidden)]
pub fn solve_position_traced(
    set: &MeasurementSet,
    config: &SolverConfig,
    initial: Option<(f64, f64)>,
) -> Result<(PositionEstimate, Vec<f64>), SolveError> {
    set.validate()?;
    let rows = set.rows();
    let weights = match &config.weights {
        Some(w) => {
            if w.len() != rows {
                return Err(SolveError::WeightLength { got: w.len(), rows });
            }
            w.clone()
        }
        None => vec![1.0; rows],
    };

    let mut p = initial.unwrap_or_else(|| initial_guess(&set.geometry));
    let mut r = residuals(set, p)?;
    let mut cost = weighted_cost(&r, &weights);
    let mut trace = vec![cost];
    let mut lambda = config.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let jac = jacobian(set, p)?;
        let (jtj, g) = normal_equations(&jac, &r, &weights);
        if (g[0] * g[0] + g[1] * g[1]).sqrt() < config.gradient_tolerance {
            converged = true;
            break;
        }

        // Retry the step with stronger damping until the cost drops.
        let mut accepted = false;
        while lambda < 1e12 {
            let damped = [
                [jtj[0][0] + lambda, jtj[0][1]],
                [jtj[1][0], jtj[1][1] + lambda],
            ];
            let delta = match solve2(damped, [-g[0], -g[1]]) {
                Some(d) => d,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = (p.0 + delta[0], p.1 + delta[1]);
            let r_new = residuals(set, candidate)?;
            let cost_new = weighted_cost(&r_new, &weights);
            if cost_new <= cost {
                p = candidate;
                r = r_new;
                cost = cost_new;
                trace.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                iterations += 1;
                accepted = true;
                if (delta[0] * delta[0] + delta[1] * delta[1]).sqrt() < config.step_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            // Damping stalled (local minimum to machine precision) or a
            // tolerance fired; either way the iteration is done.
            converged = converged || !accepted && gradient_small(set, p, &r, &weights, config)?;
            break;
        }
    }

    let jac = jacobian(set, p)?;
    let (jtj, _) = normal_equations(&jac, &r, &weights);
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    let scale = 0.25 * (jtj[0][0] + jtj[1][1]).powi(2);
    if det <= 1e-12 * scale {
        return Err(SolveError::DegenerateGeometry(format!(
            "normal matrix nearly singular at ({}, {})",
            p.0, p.1
        )));
    }
    let sigma2 = cost / (rows.saturating_sub(2)).max(1) as f64;
    let inv_det = 1.0 / det;
    let covariance = Covariance2 {
        xx: sigma2 * jtj[1][1] * inv_det,
        xy: -sigma2 * jtj[0][1] * inv_det,
        yy: sigma2 * jtj[0][0] * inv_det,
    };

    Ok((
        PositionEstimate {
            position: p,
            residual_norm: cost.sqrt(),
            iterations,
            converged,
            covariance,
        },
        trace,
    ))
}

fn gradient_small(
    set: &MeasurementSet,
    p: (f64, f64),
    r: &[f64],
    weights: &[f64],
    config: &SolverConfig,
) -> Result<bool, SolveError> {
    let jac = jacobian(set, p)?;
    let (_, g) = normal_equations(&jac, r, weights);
    Ok((g[0] * g[0] + g[1] * g[1]).sqrt() < config.gradient_tolerance)
}

fn weighted_cost(r: &[f64], w: &[f64]) -> f64 {
    r.iter().zip(w).map(|(ri, wi)| wi * ri * ri).sum()
}

/// Weighted J^T J and J^T r.
fn normal_equations(jac: &[[f64; 2]], r: &[f64], w: &[f64]) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut jtj = [[0.0; 2]; 2];
    let mut g = [0.0; 2];
    for ((row, &ri), &wi) in jac.iter().zip(r).zip(w) {
        jtj[0][0] += wi * row[0] * row[0];
        jtj[0][1] += wi * row[0] * row[1];
        jtj[1][0] += wi * row[1] * row[0];
        jtj[1][1] += wi * row[1] * row[1];
        g[0] += wi * row[0] * ri;
        g[1] += wi * row[1] * ri;
    }
    (jtj, g)
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

/// Exhaustive grid minimizer of the squared residual norm over
/// `bounds = ((x_min, x_max), (y_min, y_max))`. Test oracle; grid points
/// that coincide with a station are skipped.
pub fn brute_force_solve(
    set: &MeasurementSet,
    bounds: ((f64, f64), (f64, f64)),
    grid_step: f64,
) -> (f64, f64) {
    assert!(grid_step > 0.0, "grid_step must be positive");
    let ((x0, x1), (y0, y1)) = bounds;
    let mut best = (x0, y0);
    let mut best_cost = f64::INFINITY;
    let nx = ((x1 - x0) / grid_step).round() as usize;
    let ny = ((y1 - y0) / grid_step).round() as usize;
    for i in 0..=nx {
        let x = x0 + i as f64 * grid_step;
        for j in 0..=ny {
            let y = y0 + j as f64 * grid_step;
            if let Ok(r) = residuals(set, (x, y)) {
                let cost: f64 = r.iter().map(|v| v * v).sum();
                if cost < best_cost {
                    best_cost = cost;
                    best = (x, y);
                }
            }
        }
    }
    best
}
