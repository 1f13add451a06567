//! Scene and experiment configuration files (TOML).
//!
//! A scene file describes the constellation and its error model:
//!
//! ```toml
//! round_interval = 1e-3
//! tag_response_delay = 3e-4
//!
//! [radio]            # optional; defaults shown in scenes/desk.toml
//! tx_power_dbm = -14.3
//!
//! [noise]
//! timestamp_jitter_sigma = 1e-10
//! power_jitter_sigma = 0.25
//! seed = 1
//!
//! [[stations]]
//! id = 1
//! role = "reference"
//! position = [0.0, 0.0, 0.0]
//! hardware_delay = 51.2e-9
//! clock = { offset = 0.0, frequency_offset = 3.2e-6 }   # tick defaults to 1/(128*bandwidth)
//! power_curve = "default"    # "default" | "flat" | a path relative to this file
//! ```
//!
//! An experiment file points at a scene and fixes the run parameters:
//!
//! ```toml
//! scene = "desk.toml"
//! rounds = 1000
//! mode = "both"
//! seed = 42
//! diagnostics = false
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use uwbfuse_core::model::{ClockModel, Position, Role, Station};
use uwbfuse_core::power::{CurveError, PowerCurve};
use uwbfuse_core::sim::{NoiseSpec, RadioProfile, Scene, SceneError};
use uwbfuse_core::solve::Mode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{path}: curve: {source}")]
    Curve {
        path: PathBuf,
        #[source]
        source: CurveError,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Scene files
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    round_interval: f64,
    tag_response_delay: f64,
    #[serde(default)]
    radio: RadioFile,
    #[serde(default)]
    noise: NoiseFile,
    stations: Vec<StationFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadioFile {
    channel: Option<u32>,
    center_frequency_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    prf_hz: Option<f64>,
    preamble_length: Option<u32>,
    data_rate_bps: Option<f64>,
    tx_power_dbm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseFile {
    timestamp_jitter_sigma: Option<f64>,
    power_jitter_sigma: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StationFile {
    id: u32,
    role: Role,
    position: [f64; 3],
    #[serde(default)]
    hardware_delay: f64,
    clock: Option<ClockFile>,
    power_curve: Option<String>,
    rx_jitter_sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClockFile {
    offset: Option<f64>,
    frequency_offset: Option<f64>,
    tick: Option<f64>,
}

fn resolve_curve(spec: Option<&str>, base: &Path) -> Result<PowerCurve, ConfigError> {
    match spec {
        None | Some("default") => Ok(PowerCurve::synthetic_default()),
        Some("flat") => Ok(PowerCurve::flat_zero()),
        Some(rel) => {
            let path = base.join(rel);
            let text = read(&path)?;
            PowerCurve::from_toml_str(&text).map_err(|source| ConfigError::Curve { path, source })
        }
    }
}

/// Load and validate a scene file. Relative curve paths resolve against
/// the scene file's directory.
pub fn load_scene(path: &Path) -> Result<Scene, ConfigError> {
    let text = read(path)?;
    let file: SceneFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let defaults = RadioProfile::default();
    let radio = RadioProfile {
        channel: file.radio.channel.unwrap_or(defaults.channel),
        center_frequency_hz: file
            .radio
            .center_frequency_hz
            .unwrap_or(defaults.center_frequency_hz),
        bandwidth_hz: file.radio.bandwidth_hz.unwrap_or(defaults.bandwidth_hz),
        prf_hz: file.radio.prf_hz.unwrap_or(defaults.prf_hz),
        preamble_length: file
            .radio
            .preamble_length
            .unwrap_or(defaults.preamble_length),
        data_rate_bps: file.radio.data_rate_bps.unwrap_or(defaults.data_rate_bps),
        tx_power_dbm: file.radio.tx_power_dbm.unwrap_or(defaults.tx_power_dbm),
    };
    if radio.bandwidth_hz <= 0.0 {
        return Err(ConfigError::Invalid(
            "radio.bandwidth_hz must be positive".into(),
        ));
    }
    // The transceiver counter runs at 128x the channel bandwidth; that is
    // the tick unless a station pins its own.
    let derived_tick = 1.0 / (128.0 * radio.bandwidth_hz);

    let mut stations = Vec::with_capacity(file.stations.len());
    for s in &file.stations {
        let clock = s.clock.as_ref().cloned().unwrap_or_default();
        stations.push(Station {
            id: s.id,
            role: s.role,
            position: Position::new(s.position[0], s.position[1], s.position[2]),
            hardware_delay: s.hardware_delay,
            clock: ClockModel {
                offset: clock.offset.unwrap_or(0.0),
                frequency_offset: clock.frequency_offset.unwrap_or(0.0),
                tick: clock.tick.unwrap_or(derived_tick),
            },
            power_curve: resolve_curve(s.power_curve.as_deref(), &base)?,
            rx_jitter_sigma: s.rx_jitter_sigma,
        });
    }

    let scene = Scene {
        stations,
        round_interval: file.round_interval,
        tag_response_delay: file.tag_response_delay,
        noise: NoiseSpec {
            timestamp_jitter_sigma: file.noise.timestamp_jitter_sigma.unwrap_or(0.0),
            power_jitter_sigma: file.noise.power_jitter_sigma.unwrap_or(0.0),
            seed: file.noise.seed.unwrap_or(0),
        },
        radio,
    };
    scene.validate()?;
    Ok(scene)
}

// ---------------------------------------------------------------------------
// Experiment files
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    scene: String,
    rounds: Option<u64>,
    mode: Option<String>,
    seed: Option<u64>,
    diagnostics: Option<bool>,
}

/// A fully resolved experiment: loaded scene plus run parameters.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scene: Scene,
    pub rounds: u64,
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub diagnostics: bool,
}

/// Parse a `--mode` style string.
pub fn parse_modes(s: &str) -> Result<Vec<Mode>, ConfigError> {
    match s {
        "toa" => Ok(vec![Mode::ToaOnly]),
        "fused" => Ok(vec![Mode::Fused]),
        "both" => Ok(vec![Mode::ToaOnly, Mode::Fused]),
        other => Err(ConfigError::Invalid(format!(
            "mode must be toa, fused, or both; got '{other}'"
        ))),
    }
}

/// Load an experiment file; command-line values override file values.
/// The scene path resolves against the experiment file's directory.
pub fn load_experiment(
    path: &Path,
    seed_override: Option<u64>,
    rounds_override: Option<u64>,
    mode_override: Option<&str>,
    diagnostics_override: bool,
) -> Result<ExperimentConfig, ConfigError> {
    let text = read(path)?;
    let file: ExperimentFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scene = load_scene(&base.join(&file.scene))?;

    let rounds = rounds_override.or(file.rounds).unwrap_or(1000);
    if rounds == 0 {
        return Err(ConfigError::Invalid("rounds must be >= 1".into()));
    }
    let mode_str = mode_override
        .map(str::to_string)
        .or(file.mode)
        .unwrap_or_else(|| "both".to_string());
    let modes = parse_modes(&mode_str)?;
    let seed = seed_override.or(file.seed).unwrap_or(scene.noise.seed);
    let diagnostics = diagnostics_override || file.diagnostics.unwrap_or(false);

    Ok(ExperimentConfig {
        scene,
        rounds,
        modes,
        seed,
        diagnostics,
    })
}
