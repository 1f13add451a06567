//! Property suites for the correction pipeline and the solver: drift,
//! delay, and turnaround invariances, power-curve round trips, solver
//! equivariances, and seed determinism.

use std::collections::BTreeMap;

use proptest::prelude::*;

use uwbfuse_core::correct::{correct_record, tdoa_corrected, toa_corrected, Calibration};
use uwbfuse_core::io::write_records_csv;
use uwbfuse_core::model::DEFAULT_TICK;
use uwbfuse_core::power::PowerCurve;
use uwbfuse_core::sim::{exchange_rng, simulate_exchange, simulate_session};
use uwbfuse_core::solve::{
    brute_force_solve, residuals, solve_position, MeasurementSet, Mode, SolverConfig,
};
use uwbfuse_core::testutil::{desk_scene, ErrorConfig};

/// Second-order bound for drift-only scenes with quantization off: the
/// reference clock's own frequency error scales the (sub-10 ns) true
/// flight times, everything else cancels.
const SECOND_ORDER: f64 = 2e-12;

fn drift_scene(drift_ppm: [f64; 4], offsets: [f64; 4], tick: f64) -> uwbfuse_core::Scene {
    let mut cfg = ErrorConfig::all_off();
    cfg.drift_ppm = drift_ppm;
    cfg.clock_offsets = offsets;
    cfg.tick = tick;
    desk_scene(cfg)
}

proptest! {
    /// Affine clock drift up to +/-20 ppm on every station is cancelled by
    /// the interpolation terms, for both measurement kinds.
    #[test]
    fn drift_is_cancelled(
        drift in prop::array::uniform4(-20.0f64..20.0),
        offsets in prop::array::uniform4(-1e-4f64..1e-4),
    ) {
        let scene = drift_scene(drift, offsets, 0.0);
        let mut rng = exchange_rng(0, 0, 1);
        let rec = simulate_exchange(&scene, 0, 0.0, &mut rng).unwrap();
        let cal = Calibration::from_scene(&scene);
        let truth = rec.truth.as_ref().unwrap();

        let toa = toa_corrected(&rec, &cal).unwrap();
        prop_assert!((toa - truth.tof_ref_tag).abs() <= SECOND_ORDER);
        for (&id, &expected) in &truth.tdoa {
            let got = tdoa_corrected(&rec, id, &cal).unwrap();
            prop_assert!((got - expected).abs() <= SECOND_ORDER,
                "anchor {}: {} vs {}", id, got, expected);
        }
    }

    /// Same property on the quantized timestamp grid: the error budget is
    /// two ticks plus the second-order term.
    #[test]
    fn drift_is_cancelled_on_the_tick_grid(
        drift in prop::array::uniform4(-20.0f64..20.0),
        offsets in prop::array::uniform4(-1e-4f64..1e-4),
        round in 0u64..512,
    ) {
        let scene = drift_scene(drift, offsets, DEFAULT_TICK);
        let mut rng = exchange_rng(3, round, 1);
        let rec = simulate_exchange(&scene, round, round as f64 * 2e-3, &mut rng).unwrap();
        let cal = Calibration::from_scene(&scene);
        let truth = rec.truth.as_ref().unwrap();

        let bound = 2.0 * DEFAULT_TICK + 1e-13;
        let toa = toa_corrected(&rec, &cal).unwrap();
        prop_assert!((toa - truth.tof_ref_tag).abs() <= bound);
        for (&id, &expected) in &truth.tdoa {
            let got = tdoa_corrected(&rec, id, &cal).unwrap();
            prop_assert!((got - expected).abs() <= bound);
        }
    }

    /// Hardware delays swept anywhere in [0, 100 ns] with matching
    /// calibration leave both corrected outputs where they were.
    #[test]
    fn matched_delays_do_not_move_results(
        delays in prop::array::uniform4(0.0f64..100e-9),
        drift in prop::array::uniform4(-10.0f64..10.0),
    ) {
        let mut cfg = ErrorConfig::all_off();
        cfg.drift_ppm = drift;
        let baseline_scene = desk_scene(cfg.clone());
        cfg.hardware_delays = delays;
        let scene = desk_scene(cfg);

        let mut rng = exchange_rng(0, 0, 1);
        let base = simulate_exchange(&baseline_scene, 0, 0.0, &mut rng).unwrap();
        let mut rng = exchange_rng(0, 0, 1);
        let rec = simulate_exchange(&scene, 0, 0.0, &mut rng).unwrap();

        let base_cal = Calibration::from_scene(&baseline_scene);
        let cal = Calibration::from_scene(&scene);

        let toa_a = toa_corrected(&base, &base_cal).unwrap();
        let toa_b = toa_corrected(&rec, &cal).unwrap();
        prop_assert!((toa_a - toa_b).abs() <= SECOND_ORDER + 3e-12,
            "toa moved by {}", (toa_a - toa_b).abs());
        for id in [3u32, 4] {
            let a = tdoa_corrected(&base, id, &base_cal).unwrap();
            let b = tdoa_corrected(&rec, id, &cal).unwrap();
            prop_assert!((a - b).abs() <= SECOND_ORDER + 3e-12,
                "anchor {} moved by {}", id, (a - b).abs());
        }
    }

    /// The tag's turnaround (and with it the transmission offset between
    /// the two senders) never reaches the corrected difference.
    #[test]
    fn turnaround_never_leaks(
        frac in 0.1f64..0.9,
        drift in prop::array::uniform4(-10.0f64..10.0),
    ) {
        let mut cfg = ErrorConfig::all_off();
        cfg.round_interval = 2e-3;
        cfg.tag_response_delay = frac * 2e-3;
        cfg.drift_ppm = drift;
        let scene = desk_scene(cfg.clone());

        cfg.tag_response_delay = 0.5e-3;
        let baseline_scene = desk_scene(cfg);

        let mut rng = exchange_rng(1, 0, 1);
        let rec = simulate_exchange(&scene, 0, 0.0, &mut rng).unwrap();
        let mut rng = exchange_rng(1, 0, 1);
        let base = simulate_exchange(&baseline_scene, 0, 0.0, &mut rng).unwrap();

        let cal = Calibration::from_scene(&scene);
        let base_cal = Calibration::from_scene(&baseline_scene);
        for id in [3u32, 4] {
            let a = tdoa_corrected(&rec, id, &cal).unwrap();
            let b = tdoa_corrected(&base, id, &base_cal).unwrap();
            prop_assert!((a - b).abs() <= SECOND_ORDER + 3e-12);
        }
    }

    /// Simulating with a random monotone curve and correcting with the
    /// same curve recovers the error-free geometry.
    #[test]
    fn power_curve_round_trips(
        error_start in 0.1e-9f64..0.5e-9,
        drops in prop::collection::vec(0.0f64..0.2e-9, 5),
        skews in prop::collection::vec(-1.5f64..1.5, 6),
    ) {
        // Build a non-increasing error curve over -95..-55 dBm and a
        // strictly monotone register map with per-knot skew.
        let mut error_points = Vec::new();
        let mut map_points = Vec::new();
        let mut err = error_start;
        for (i, knot) in (0..6).zip([-95.0f64, -87.0, -79.0, -71.0, -63.0, -55.0]) {
            error_points.push((knot, err));
            if i < drops.len() {
                err -= drops[i];
            }
            map_points.push((knot + skews[i].clamp(-3.9, 3.9), knot));
        }
        let curve = PowerCurve::new(error_points, map_points).unwrap();

        let mut cfg = ErrorConfig::all_off();
        cfg.curve = curve;
        let scene = desk_scene(cfg);
        let mut rng = exchange_rng(2, 0, 1);
        let rec = simulate_exchange(&scene, 0, 0.0, &mut rng).unwrap();
        let cal = Calibration::from_scene(&scene);
        let corrected = correct_record(&rec, &cal).unwrap();
        let truth = rec.truth.as_ref().unwrap();
        prop_assert!((corrected.t_toa - truth.tof_ref_tag).abs() < 3.3e-14);
        for (&id, &expected) in &truth.tdoa {
            prop_assert!((corrected.t_tdoa[&id] - expected).abs() < 3.3e-14);
        }
    }

    /// Every simulated record is time-ordered per station.
    #[test]
    fn records_are_time_ordered(
        drift in prop::array::uniform4(-20.0f64..20.0),
        jitter in 0.0f64..2e-9,
        seed in any::<u64>(),
    ) {
        let mut cfg = ErrorConfig::all_off();
        cfg.drift_ppm = drift;
        cfg.timestamp_jitter_sigma = jitter;
        cfg.tick = DEFAULT_TICK;
        let scene = desk_scene(cfg);
        for rec in simulate_session(&scene, 8, seed).unwrap() {
            prop_assert!(rec.is_time_ordered());
        }
    }

    /// Identical (scene, seed) pairs produce byte-identical CSV output.
    #[test]
    fn sessions_are_byte_deterministic(seed in any::<u64>()) {
        let mut cfg = ErrorConfig::all_off();
        cfg.timestamp_jitter_sigma = 120e-12;
        cfg.power_jitter_sigma = 0.25;
        cfg.tick = DEFAULT_TICK;
        let scene = desk_scene(cfg);
        let mut a = Vec::new();
        write_records_csv(&mut a, &simulate_session(&scene, 6, seed).unwrap()).unwrap();
        let mut b = Vec::new();
        write_records_csv(&mut b, &simulate_session(&scene, 6, seed).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

// ---------------------------------------------------------------------------
// Solver equivariances
// ---------------------------------------------------------------------------

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn desk_geometry() -> BTreeMap<u32, (f64, f64)> {
    [
        (1, (0.0, 0.0)),
        (2, (0.0, 1.5134)),
        (3, (1.27, 1.643)),
        (4, (1.1439, 0.0385)),
    ]
    .into_iter()
    .collect()
}

fn fused_set_for(target: (f64, f64), geometry: BTreeMap<u32, (f64, f64)>) -> MeasurementSet {
    let d_ref = dist(target, geometry[&1]);
    let tdoa_ranges = [3u32, 4]
        .iter()
        .map(|&id| {
            (
                id,
                dist(target, geometry[&id]) - dist(geometry[&1], geometry[&id]),
            )
        })
        .collect();
    MeasurementSet {
        mode: Mode::Fused,
        toa_ranges: [(1, d_ref)].into_iter().collect(),
        tdoa_ranges,
        reference: Some(1),
        geometry,
    }
}

proptest! {
    /// Translating every station translates the estimate; measured ranges
    /// are translation invariant.
    #[test]
    fn solver_is_translation_equivariant(
        tx in -5.0f64..5.0,
        ty in -5.0f64..5.0,
        px in -0.5f64..1.6,
        py in -0.5f64..2.1,
    ) {
        let target = (px, py);
        prop_assume!(desk_geometry().values().all(|&s| dist(target, s) > 0.05));
        let set = fused_set_for(target, desk_geometry());
        let moved_geometry: BTreeMap<u32, (f64, f64)> = desk_geometry()
            .into_iter()
            .map(|(id, (x, y))| (id, (x + tx, y + ty)))
            .collect();
        let mut moved = set.clone();
        moved.geometry = moved_geometry;

        let a = solve_position(&set, &SolverConfig::default(), None).unwrap();
        let b = solve_position(&moved, &SolverConfig::default(), None).unwrap();
        prop_assert!((a.position.0 + tx - b.position.0).abs() < 1e-7);
        prop_assert!((a.position.1 + ty - b.position.1).abs() < 1e-7);
    }

    /// Rotating every station about the origin rotates the estimate.
    #[test]
    fn solver_is_rotation_equivariant(
        theta in 0.0f64..std::f64::consts::TAU,
        px in -0.5f64..1.6,
        py in -0.5f64..2.1,
    ) {
        let target = (px, py);
        prop_assume!(desk_geometry().values().all(|&s| dist(target, s) > 0.05));
        let rot = |(x, y): (f64, f64)| {
            (x * theta.cos() - y * theta.sin(), x * theta.sin() + y * theta.cos())
        };
        let set = fused_set_for(target, desk_geometry());
        let mut rotated = set.clone();
        rotated.geometry = desk_geometry().into_iter().map(|(id, p)| (id, rot(p))).collect();

        let a = solve_position(&set, &SolverConfig::default(), None).unwrap();
        let b = solve_position(&rotated, &SolverConfig::default(), None).unwrap();
        let expected = rot(a.position);
        prop_assert!((expected.0 - b.position.0).abs() < 1e-7);
        prop_assert!((expected.1 - b.position.1).abs() < 1e-7);
    }

    /// The iterative solve lands in the same cell as the exhaustive grid.
    #[test]
    fn solver_matches_grid_oracle(
        noise in prop::collection::vec(-0.04f64..0.04, 3),
    ) {
        let mut set = fused_set_for((0.0, 1.5134), desk_geometry());
        let mut i = 0;
        for r in set.toa_ranges.values_mut() {
            *r += noise[i];
            i += 1;
        }
        for r in set.tdoa_ranges.values_mut() {
            *r += noise[i];
            i += 1;
        }
        let step = 0.02;
        let grid = brute_force_solve(&set, ((-1.0, 2.5), (-1.0, 2.5)), step);
        let est = solve_position(&set, &SolverConfig::default(), None).unwrap();
        prop_assert!((est.position.0 - grid.0).abs() <= 2.0 * step);
        prop_assert!((est.position.1 - grid.1).abs() <= 2.0 * step);
    }

    /// Knot values survive the measured->actual->error chain exactly.
    #[test]
    fn curve_knots_round_trip(offset in -0.5f64..0.5) {
        let curve = PowerCurve::new(
            vec![(-90.0 + offset, 0.3e-9), (-75.0 + offset, 0.1e-9), (-60.0 + offset, -0.2e-9)],
            vec![(-91.0, -90.0 + offset), (-74.0, -75.0 + offset), (-61.5, -60.0 + offset)],
        ).unwrap();
        for (m, a, e) in [(-91.0, -90.0 + offset, 0.3e-9), (-74.0, -75.0 + offset, 0.1e-9), (-61.5, -60.0 + offset, -0.2e-9)] {
            prop_assert_eq!(curve.actual_from_measured(m).unwrap(), a);
            prop_assert_eq!(curve.measured_from_actual(a).unwrap(), m);
            prop_assert_eq!(curve.error_from_measured(m).unwrap(), e);
        }
    }

    /// Residuals at the exact target vanish for both modes.
    #[test]
    fn residuals_vanish_at_truth(
        px in -0.5f64..1.6,
        py in -0.5f64..2.1,
    ) {
        let target = (px, py);
        prop_assume!(desk_geometry().values().all(|&s| dist(target, s) > 1e-6));
        let set = fused_set_for(target, desk_geometry());
        for r in residuals(&set, target).unwrap() {
            prop_assert!(r.abs() < 1e-10);
        }
    }
}
