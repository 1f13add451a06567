//! End-to-end tests of the `uwbfuse` binary: subcommand plumbing, exit
//! codes, and agreement between the staged pipeline and `experiment`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes")
}

fn uwbfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwbfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn read_estimates(path: &Path) -> Vec<uwbfuse_core::io::EstimateRow> {
    let file = std::fs::File::open(path).unwrap();
    uwbfuse_core::io::read_estimates_csv(std::io::BufReader::new(file)).unwrap()
}

#[test]
fn staged_pipeline_matches_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let scene = path_str(&scenes_dir().join("desk.toml"));
    let exp_toml = dir.path().join("exp.toml");
    std::fs::write(
        &exp_toml,
        format!("scene = '{scene}'\nrounds = 20\nmode = 'both'\nseed = 9\n"),
    )
    .unwrap();

    // Full experiment.
    let exp_out = dir.path().join("exp");
    let out = uwbfuse(&[
        "experiment",
        "--config",
        &path_str(&exp_toml),
        "--out",
        &path_str(&exp_out),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mode toa"));
    assert!(stdout.contains("mode fused"));
    assert!(stdout.contains("mode mean difference"));

    // Staged: simulate -> correct -> solve (fused), reusing the seed.
    let staged = dir.path().join("staged");
    let out = uwbfuse(&[
        "simulate",
        "--scene",
        &scene,
        "--rounds",
        "20",
        "--seed",
        "9",
        "--out",
        &path_str(&staged),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = uwbfuse(&[
        "correct",
        "--scene",
        &scene,
        &path_str(&staged.join("records.csv")),
        "--out",
        &path_str(&staged),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = uwbfuse(&[
        "solve",
        "--scene",
        &scene,
        "--mode",
        "fused",
        "--out",
        &path_str(&staged),
        &path_str(&staged.join("corrected.csv")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // The staged records must be byte-identical to the experiment's fused
    // session. The staged estimates re-enter through the 15-digit records
    // CSV, so positions agree to a few nanometers rather than bit-exactly.
    let a = std::fs::read(staged.join("records.csv")).unwrap();
    let b = std::fs::read(exp_out.join("records_fused.csv")).unwrap();
    assert_eq!(a, b, "staged records differ from the experiment session");
    let staged_est = read_estimates(&staged.join("estimates.csv"));
    let exp_est = read_estimates(&exp_out.join("estimates_fused.csv"));
    assert_eq!(staged_est.len(), exp_est.len());
    for (a, b) in staged_est.iter().zip(&exp_est) {
        assert_eq!(a.round_idx, b.round_idx);
        assert_eq!(a.converged, b.converged);
        assert!((a.x - b.x).abs() < 1e-7 && (a.y - b.y).abs() < 1e-7);
    }

    // Range-only solve from the experiment's rotation files matches too.
    let out = uwbfuse(&[
        "solve",
        "--scene",
        &scene,
        "--mode",
        "toa",
        "--out",
        &path_str(&dir.path().join("toa")),
        &format!("1={}", path_str(&exp_out.join("corrected_toa_ref1.csv"))),
        &format!("3={}", path_str(&exp_out.join("corrected_toa_ref3.csv"))),
        &format!("4={}", path_str(&exp_out.join("corrected_toa_ref4.csv"))),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(dir.path().join("toa").join("estimates.csv")).unwrap();
    let b = std::fs::read(exp_out.join("estimates_toa.csv")).unwrap();
    assert_eq!(a, b, "standalone toa solve differs from the experiment");

    // Report over the fused estimates.
    let out = uwbfuse(&[
        "report",
        &path_str(&exp_out.join("estimates_fused.csv")),
        "--truth",
        "0.0,1.5134",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mode fused"));
    assert!(stdout.contains("truth deviation"));
}

#[test]
fn missing_scene_is_a_config_error() {
    let out = uwbfuse(&[
        "simulate",
        "--scene",
        "/nonexistent.toml",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn solve_mode_both_is_a_config_error() {
    let scene = path_str(&scenes_dir().join("desk.toml"));
    let out = uwbfuse(&[
        "solve", "--scene", &scene, "--mode", "both", "--out", "/tmp/x", "in.csv",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn malformed_records_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("records.csv");
    std::fs::write(&bad, "round_idx,t1_r\n0,1.0\n").unwrap();
    let scene = path_str(&scenes_dir().join("desk.toml"));
    let out = uwbfuse(&[
        "correct",
        "--scene",
        &scene,
        &path_str(&bad),
        "--out",
        &path_str(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn underdetermined_solve_is_a_degeneracy_error() {
    let dir = tempfile::tempdir().unwrap();
    // One anchor only: a fused 2D solve needs two range differences.
    let corrected = dir.path().join("corrected.csv");
    std::fs::write(&corrected, "round_idx,t_toa,t_tdoa_s3\n0,5.0e-9,-2.6e-9\n").unwrap();
    let scene = path_str(&scenes_dir().join("desk.toml"));
    let out = uwbfuse(&[
        "solve",
        "--scene",
        &scene,
        "--mode",
        "fused",
        "--out",
        &path_str(dir.path()),
        &path_str(&corrected),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn shipped_curve_file_matches_the_builtin_default() {
    let text = std::fs::read_to_string(scenes_dir().join("default-curve.toml")).unwrap();
    let from_file = uwbfuse_core::PowerCurve::from_toml_str(&text).unwrap();
    assert_eq!(from_file, uwbfuse_core::PowerCurve::synthetic_default());
}

#[test]
fn shipped_scenes_load_and_validate() {
    for name in ["desk.toml", "desk-zero-noise.toml", "desk-benchmark.toml"] {
        let scene = uwbfuse_cli::config::load_scene(&scenes_dir().join(name)).unwrap();
        assert_eq!(scene.stations.len(), 4, "{name}");
        assert_eq!(scene.reference().id, 1, "{name}");
        assert_eq!(scene.tag().id, 2, "{name}");
    }
}
