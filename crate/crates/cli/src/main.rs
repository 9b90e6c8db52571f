//! `ergosearch` command-line front end.
//!
//! Exit codes: 0 converged (or report-only success), 1 solver failure,
//! 2 input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use ergosearch::pmp::{check_conditions, lift_and_costate, PmpReport};
use ergosearch::scenario::{self, RunOutcome, ScenarioConfig, SweepParam, TrajectoryArtifact};
use ergosearch::Error as CoreError;

const TRAJECTORY_FILE: &str = "trajectory.json";
const HISTORY_FILE: &str = "history.csv";
const KKT_FILE: &str = "kkt.json";
const PMP_FILE: &str = "pmp.json";

#[derive(Parser)]
#[command(name = "ergosearch", version, about = "Minimum-time ergodic coverage trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write trajectory, history, KKT and PMP reports.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve once per value of a swept parameter and write a summary CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// gamma, N, tf_init or init_shape.
        #[arg(long, default_value = "gamma")]
        param: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Rows solved concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-check a trajectory artifact and write fresh KKT and PMP reports.
    Verify {
        /// Path to a trajectory JSON written by `solve`.
        artifact: PathBuf,
        /// Report directory; defaults to `verify/` next to the artifact.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the distribution coefficients of a scenario as CSV.
    Coeffs {
        #[arg(long)]
        config: PathBuf,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Solver(_) => 1,
            CliError::Input(_) => 2,
        }
    }
}

fn input(e: CoreError) -> CliError {
    CliError::Input(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Input(e.to_string()))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("{}: no such file", path.display())));
    }
    let mut cfg = ScenarioConfig::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output_dir(cfg: &ScenarioConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

fn pmp_report(outcome: &RunOutcome, cfg: &ScenarioConfig) -> Result<PmpReport, CoreError> {
    let d = &outcome.result.decision;
    let ext = lift_and_costate(d, &outcome.spec, &outcome.result.multipliers)?;
    check_conditions(&ext, d, &outcome.spec, cfg.pmp)
}

/// Runs one scenario and writes its files into `dir`.
fn solve_into(cfg: &ScenarioConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let outcome = match scenario::run(cfg) {
        Ok(o) => o,
        Err(e @ CoreError::Diverged { .. }) => return Err(CliError::Solver(e.to_string())),
        Err(e) => return Err(input(e)),
    };
    let mut artifact = outcome.artifact.clone();
    artifact.history_file = Some(HISTORY_FILE.into());
    artifact.pmp_report_file = Some(PMP_FILE.into());
    let mut csv = Vec::new();
    scenario::write_history_csv(&outcome.result.history, &mut csv).map_err(input)?;
    write_file(&dir.join(HISTORY_FILE), &String::from_utf8_lossy(&csv))?;
    write_file(&dir.join(KKT_FILE), &to_json(&outcome.result.kkt)?)?;
    let pmp = pmp_report(&outcome, cfg).map_err(input)?;
    write_file(&dir.join(PMP_FILE), &to_json(&pmp)?)?;
    write_file(&dir.join(TRAJECTORY_FILE), &(artifact.to_json().map_err(input)? + "\n"))?;
    Ok(RunOutcome { artifact, ..outcome })
}

fn cmd_solve(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    cfg.gamma().map_err(input)?;
    let dir = output_dir(&cfg, out);
    let o = solve_into(&cfg, &dir)?;
    let kkt = &o.result.kkt;
    println!(
        "{}: t_f = {:.4} s, E = {:.6}, outer = {}, {} ({:.1} s) -> {}",
        cfg.name,
        o.artifact.t_f,
        o.artifact.ergodic_metric,
        o.result.history.len(),
        kkt.reason,
        o.wall_time,
        dir.display()
    );
    if kkt.converged {
        Ok(())
    } else {
        Err(CliError::Solver(format!("not converged: {}", kkt.reason)))
    }
}

struct Row {
    label: String,
    t_f: f64,
    metric: f64,
    feasible: bool,
    converged: bool,
    wall_time: f64,
    note: String,
}

fn cmd_sweep(config: &Path, param: &str, out: Option<PathBuf>, seed: Option<u64>, jobs: usize) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let param: SweepParam = param.parse().map_err(input)?;
    let variants = cfg.sweep_variants(param).map_err(input)?;
    if jobs == 0 {
        return Err(CliError::Input("--jobs must be at least 1".into()));
    }
    let dir = output_dir(&cfg, out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let tol_eq = cfg.solver.tol_eq;
    let tol_ineq = cfg.solver.tol_ineq;
    let rows: Vec<Row> = pool.install(|| {
        variants
            .par_iter()
            .enumerate()
            .map(|(i, (label, c))| {
                let row_dir = dir.join(format!("{}_{i:02}", param.name()));
                match solve_into(c, &row_dir) {
                    Ok(o) => Row {
                        label: label.clone(),
                        t_f: o.artifact.t_f,
                        metric: o.artifact.ergodic_metric,
                        feasible: o.result.kkt.max_eq_violation <= tol_eq
                            && o.result.kkt.max_ineq_violation <= tol_ineq,
                        converged: o.result.kkt.converged,
                        wall_time: o.wall_time,
                        note: o.result.kkt.reason.clone(),
                    },
                    Err(e) => Row {
                        label: label.clone(),
                        t_f: f64::NAN,
                        metric: f64::NAN,
                        feasible: false,
                        converged: false,
                        wall_time: 0.0,
                        note: e.to_string(),
                    },
                }
            })
            .collect()
    });
    let path = dir.join("summary.csv");
    write_file(&path, &summary_csv(param, &rows)?)?;
    for r in &rows {
        println!(
            "{} = {}: t_f = {:.4} s, E = {:.6}, converged = {}",
            param, r.label, r.t_f, r.metric, r.converged
        );
    }
    println!("summary -> {}", path.display());
    if rows.iter().all(|r| r.converged) {
        Ok(())
    } else {
        Err(CliError::Solver(format!(
            "{} of {} rows did not converge",
            rows.iter().filter(|r| !r.converged).count(),
            rows.len()
        )))
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One row per value, then `mean` and `std` rows over the converged ones.
fn summary_csv(param: SweepParam, rows: &[Row]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(["parameter", "value", "t_f", "ergodic_metric", "feasible", "converged", "wall_time_s", "note"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            param.name().to_string(),
            r.label.clone(),
            r.t_f.to_string(),
            r.metric.to_string(),
            r.feasible.to_string(),
            r.converged.to_string(),
            format!("{:.3}", r.wall_time),
            r.note.clone(),
        ])
        .map_err(err)?;
    }
    let ok: Vec<&Row> = rows.iter().filter(|r| r.converged).collect();
    if !ok.is_empty() {
        let (tf_mean, tf_std) = mean_std(&ok.iter().map(|r| r.t_f).collect::<Vec<_>>());
        let (e_mean, e_std) = mean_std(&ok.iter().map(|r| r.metric).collect::<Vec<_>>());
        for (label, tf, e) in [("mean", tf_mean, e_mean), ("std", tf_std, e_std)] {
            w.write_record([
                param.name().to_string(),
                label.to_string(),
                tf.to_string(),
                e.to_string(),
                String::new(),
                String::new(),
                String::new(),
                format!("over {} converged rows", ok.len()),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn cmd_verify(path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let artifact =
        TrajectoryArtifact::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let spec = artifact.problem().map_err(input)?;
    let d = artifact.decision().map_err(input)?;
    spec.check_decision(&d).map_err(input)?;
    let check = artifact.verify().map_err(input)?;
    let kkt = artifact.kkt_report().map_err(input)?;
    let ext = lift_and_costate(&d, &spec, &artifact.multipliers).map_err(input)?;
    let pmp = check_conditions(&ext, &d, &spec, artifact.scenario.pmp).map_err(input)?;
    let dir = out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("verify"));
    write_file(&dir.join("check.json"), &to_json(&check)?)?;
    write_file(&dir.join(KKT_FILE), &to_json(&kkt)?)?;
    write_file(&dir.join(PMP_FILE), &to_json(&pmp)?)?;
    if check.metric_matches {
        println!("metric: stored {:.12e} matches recomputed", check.stored_metric);
    } else {
        println!(
            "metric MISMATCH: stored {:.12e}, recomputed {:.12e}",
            check.stored_metric, check.recomputed_metric
        );
    }
    if !check.violations_match {
        println!(
            "violation MISMATCH: stored {:.3e}, recomputed {:.3e}",
            check.stored_max_violation, check.recomputed_max_violation
        );
    }
    println!("kkt: {}", kkt.reason);
    println!(
        "pmp: input stationarity at {:.1}% of knots, costate defect {:.3e}, transversality {:.3e}",
        100.0 * pmp.input_stationarity_fraction,
        pmp.costate_defect_max,
        pmp.transversality_residual
    );
    println!("reports -> {}", dir.display());
    Ok(())
}

fn cmd_coeffs(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(config, None)?;
    let spec = cfg.build_problem(cfg.gamma_values()[0]).map_err(input)?;
    let mut buf = Vec::new();
    scenario::write_coefficients_csv(&spec, &mut buf).map_err(input)?;
    let text = String::from_utf8_lossy(&buf);
    match out {
        Some(path) => write_file(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config, out, seed } => cmd_solve(&config, out, seed),
        Command::Sweep {
            config,
            param,
            out,
            seed,
            jobs,
        } => cmd_sweep(&config, &param, out, seed, jobs),
        Command::Verify { artifact, out } => cmd_verify(&artifact, out),
        Command::Coeffs { config, out } => cmd_coeffs(&config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
