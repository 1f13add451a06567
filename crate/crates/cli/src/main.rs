//! `uwbfuse`: simulate ranging exchanges, correct their timestamps, solve
//! tag positions, and report statistics.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
//! degeneracy.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use uwbfuse_cli::config::{load_experiment, load_scene, ConfigError};
use uwbfuse_cli::experiment::{fused_estimates, run_experiment, toa_estimates, PipelineError};
use uwbfuse_cli::report::{build_report, format_report};
use uwbfuse_core::correct::{correct_record, Calibration};
use uwbfuse_core::io::{
    read_corrected_csv, read_estimates_csv, read_records_csv, write_corrected_csv,
    write_estimates_csv, write_records_csv, CorrectedRow, EstimateRow,
};
use uwbfuse_core::sim::simulate_session;

#[derive(Parser)]
#[command(
    name = "uwbfuse",
    version,
    about = "Simulate, correct, solve, and report UWB ranging sessions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Toa,
    Fused,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a session of ranging exchanges into records.csv.
    Simulate {
        /// Scene description (TOML).
        #[arg(long)]
        scene: PathBuf,
        /// Number of rounds (default 1000).
        #[arg(long)]
        rounds: Option<u64>,
        /// Session seed (default: the scene's noise.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Correct a records CSV into corrected.csv.
    Correct {
        #[arg(long)]
        scene: PathBuf,
        /// Records CSV produced by `simulate`.
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Emit the drift/power/offset diagnostic columns.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Solve positions from corrected CSVs into estimates.csv.
    ///
    /// Fused mode takes one corrected CSV. Range-only (toa) mode takes one
    /// `<station_id>=<path>` pair per initiating station, e.g.
    /// `1=c1.csv 3=c3.csv 4=c4.csv` from an experiment's rotation files.
    Solve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        /// Corrected input(s); see the mode-specific forms above.
        inputs: Vec<String>,
    },
    /// Run the full pipeline (simulate, correct, solve, report).
    Experiment {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        diagnostics: bool,
    },
    /// Statistics over an estimates CSV.
    Report {
        /// Estimates CSV produced by `solve` or `experiment`.
        estimates: PathBuf,
        /// Ground truth as `x,y` meters, for deviation reporting.
        #[arg(long)]
        truth: Option<String>,
        /// Also write report.txt into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn mode_str(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Toa => "toa",
        ModeArg::Fused => "fused",
        ModeArg::Both => "both",
    }
}

fn open_data(path: &Path) -> Result<BufReader<std::fs::File>, PipelineError> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn write_data<F>(path: &Path, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<(), uwbfuse_core::io::CsvError>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", parent.display())))?;
    }
    let file = std::fs::File::create(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).map_err(|e| PipelineError::Data(e.to_string()))?;
    use std::io::Write;
    w.flush()
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn parse_truth(s: &str) -> Result<(f64, f64), PipelineError> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || {
        PipelineError::Config(ConfigError::Invalid(format!(
            "--truth expects 'x,y' in meters, got '{s}'"
        )))
    };
    if parts.len() != 2 {
        return Err(bad());
    }
    let x = parts[0].trim().parse().map_err(|_| bad())?;
    let y = parts[1].trim().parse().map_err(|_| bad())?;
    Ok((x, y))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate {
            scene,
            rounds,
            seed,
            out,
        } => {
            let scene = load_scene(&scene)?;
            let rounds = rounds.unwrap_or(1000);
            if rounds == 0 {
                return Err(PipelineError::Config(ConfigError::Invalid(
                    "rounds must be >= 1".into(),
                )));
            }
            let seed = seed.unwrap_or(scene.noise.seed);
            let records = simulate_session(&scene, rounds, seed)?;
            let path = out.join("records.csv");
            write_data(&path, |w| write_records_csv(w, &records))?;
            println!("wrote {}", path.display());
        }
        Command::Correct {
            scene,
            records,
            out,
            diagnostics,
        } => {
            let scene = load_scene(&scene)?;
            let records = read_records_csv(open_data(&records)?)
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            let cal = Calibration::from_scene(&scene);
            let corrected = records
                .iter()
                .map(|r| correct_record(r, &cal))
                .collect::<Result<Vec<_>, _>>()?;
            let path = out.join("corrected.csv");
            write_data(&path, |w| write_corrected_csv(w, &corrected, diagnostics))?;
            println!("wrote {}", path.display());
        }
        Command::Solve {
            scene,
            mode,
            out,
            inputs,
        } => {
            let scene = load_scene(&scene)?;
            let estimates = match mode {
                ModeArg::Both => {
                    return Err(PipelineError::Config(ConfigError::Invalid(
                        "solve handles one mode at a time; use `experiment` for both".into(),
                    )))
                }
                ModeArg::Fused => {
                    let [input] = inputs.as_slice() else {
                        return Err(PipelineError::Config(ConfigError::Invalid(format!(
                            "fused mode takes exactly one corrected CSV, got {}",
                            inputs.len()
                        ))));
                    };
                    let rows = read_corrected_csv(open_data(Path::new(input))?)
                        .map_err(|e| PipelineError::Data(e.to_string()))?;
                    fused_estimates(&scene, &rows)?
                }
                ModeArg::Toa => {
                    let mut per_ref: BTreeMap<u32, Vec<CorrectedRow>> = BTreeMap::new();
                    for input in &inputs {
                        let (id, path) = input.split_once('=').ok_or_else(|| {
                            PipelineError::Config(ConfigError::Invalid(format!(
                                "toa inputs are <station_id>=<path>, got '{input}'"
                            )))
                        })?;
                        let id: u32 = id.trim().parse().map_err(|_| {
                            PipelineError::Config(ConfigError::Invalid(format!(
                                "bad station id in '{input}'"
                            )))
                        })?;
                        let rows = read_corrected_csv(open_data(Path::new(path))?)
                            .map_err(|e| PipelineError::Data(e.to_string()))?;
                        per_ref.insert(id, rows);
                    }
                    if per_ref.len() < 3 {
                        return Err(PipelineError::Config(ConfigError::Invalid(format!(
                            "range-only solving needs at least 3 initiator files, got {}",
                            per_ref.len()
                        ))));
                    }
                    toa_estimates(&scene, &per_ref)?
                }
            };
            let path = out.join("estimates.csv");
            write_data(&path, |w| write_estimates_csv(w, &estimates))?;
            println!("wrote {}", path.display());
        }
        Command::Experiment {
            config,
            seed,
            rounds,
            mode,
            out,
            diagnostics,
        } => {
            let config = load_experiment(&config, seed, rounds, mode.map(mode_str), diagnostics)?;
            let report = run_experiment(&config, &out)?;
            print!("{}", format_report(&report));
            println!("wrote {}", out.join("report.txt").display());
        }
        Command::Report {
            estimates,
            truth,
            out,
        } => {
            let rows = read_estimates_csv(open_data(&estimates)?)
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            let truth = truth.as_deref().map(parse_truth).transpose()?;
            let mut by_mode: BTreeMap<String, Vec<EstimateRow>> = BTreeMap::new();
            for row in rows {
                by_mode.entry(row.mode.to_string()).or_default().push(row);
            }
            let report = build_report(&by_mode, None, None, None, truth)
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            let text = format_report(&report);
            print!("{text}");
            if let Some(out) = out {
                let path = out.join("report.txt");
                std::fs::create_dir_all(&out)
                    .map_err(|e| PipelineError::Data(format!("{}: {e}", out.display())))?;
                std::fs::write(&path, &text)
                    .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match &err {
                PipelineError::Config(_) => 2,
                PipelineError::Data(_) => 3,
                PipelineError::Solve(_) => 4,
            };
            std::process::exit(code);
        }
    }
}
