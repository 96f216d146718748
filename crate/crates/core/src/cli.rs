//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (solve completed, study finished or skipped, projectors validated) |
//! | 1 | config, schema or I/O error |
//! | 2 | pencil error (not regular, index above 1, decomposition failure) |
//! | 3 | solve stopped by blow-up |
//! | 4 | algebraic corrector or consistent initialization failed |
//! | 5 | projector identities or residue agreement failed |
//! | 6 | order study produced no estimate (errors at roundoff level) |

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig, InitialState};
use crate::dae_model::{consistent_initialize, ModelError, SemilinearDae};
use crate::diagnostics::{empirical_order, DiagnosticsError, Reference};
use crate::integrators::{solve, SolveError, Trajectory, TrajectoryStatus};
use crate::linalg::{max_abs, to_rows};
use crate::pencil::{
    default_contour_radius, projectors_algebraic, projectors_residue, regularity_probe, validate_decomposition,
    PencilError, SpectralDecomposition,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PENCIL: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;
pub const EXIT_CORRECTOR: i32 = 4;
pub const EXIT_PROJECTORS: i32 = 5;
pub const EXIT_STUDY: i32 = 6;

/// Identity residuals pass at `VALIDATION_TOL · (1 + ‖A‖ + ‖B‖)`.
pub const VALIDATION_TOL: f64 = 1e-10;
pub const RESIDUE_AGREEMENT_TOL: f64 = 1e-8;
pub const RESIDUE_NODES: usize = 256;
const CONSISTENT_INIT_TOL: f64 = 1e-12;
const CONSISTENT_INIT_MAX_ITER: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "semidae", version, about = "Semilinear DAE solver for regular index-≤1 pencils")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write outputs into this directory, keeping configured file names.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Do not print results to stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the configured problem; writes a trajectory CSV and a JSON summary.
    Solve { config: PathBuf },
    /// Mesh-refinement order study; needs a `study` section.
    Converge { config: PathBuf },
    /// Algebraic and residue projectors with the identity check.
    Projectors { config: PathBuf },
    /// Schema and field checks only.
    Validate { config: PathBuf },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("pencil: {0}")]
    Pencil(#[from] PencilError),
    #[error("corrector: {0}")]
    Corrector(ModelError),
    #[error("order study: {0}")]
    Study(DiagnosticsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(ConfigError::Pencil(e)) | Self::Pencil(e) => pencil_exit(e),
            Self::Config(_) | Self::Io { .. } => EXIT_CONFIG,
            Self::Corrector(_) => EXIT_CORRECTOR,
            Self::Study(DiagnosticsError::Incomplete { status: TrajectoryStatus::BlowUp { .. }, .. }) => EXIT_BLOW_UP,
            Self::Study(DiagnosticsError::Incomplete { .. }) => EXIT_CORRECTOR,
            Self::Study(DiagnosticsError::Solve(e)) => solve_exit(e),
            Self::Study(_) => EXIT_STUDY,
        }
    }
}

fn pencil_exit(e: &PencilError) -> i32 {
    match e {
        PencilError::DimensionMismatch { .. } | PencilError::Empty | PencilError::NonFinite => EXIT_CONFIG,
        _ => EXIT_PENCIL,
    }
}

fn solve_exit(e: &SolveError) -> i32 {
    match e {
        SolveError::Model(_) => EXIT_CORRECTOR,
        _ => EXIT_CONFIG,
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Solve { config } => cmd_solve(cli, config),
        Command::Converge { config } => cmd_converge(cli, config),
        Command::Projectors { config } => cmd_projectors(cli, config),
        Command::Validate { config } => cmd_validate(cli, config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(path: &Path) -> Result<Experiment, CliError> {
    Ok(ExperimentConfig::from_path(path)?.resolve()?)
}

fn analyze(dae: &SemilinearDae) -> Result<SpectralDecomposition, CliError> {
    regularity_probe(dae.pencil(), 32, 0x5eed)?;
    Ok(projectors_algebraic(dae.pencil())?)
}

fn output_path(cli: &Cli, configured: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    match (&cli.out_dir, configured) {
        (Some(dir), Some(p)) => Some(dir.join(p.file_name().map_or(default_name.as_ref(), |n| n))),
        (Some(dir), None) => Some(dir.join(default_name)),
        (None, Some(p)) => Some(p.to_path_buf()),
        (None, None) => None,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

fn emit_json(cli: &Cli, path: Option<PathBuf>, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize") + "\n";
    if let Some(p) = path {
        write_file(&p, &text)?;
    }
    if !cli.quiet {
        let _ = std::io::stdout().write_all(text.as_bytes());
    }
    Ok(())
}

/// CSV with a header row and every value printed with 17 significant digits.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.dim();
    let mut out = String::from("t");
    for k in 1..=n {
        let _ = write!(out, ",x{k}");
    }
    out.push_str(",z_norm,u_norm,constraint_residual\n");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for i in 0..traj.len() {
        let _ = write!(out, "{:.16e}", traj.times[i]);
        for v in traj.state(i) {
            let _ = write!(out, ",{v:.16e}");
        }
        let _ = writeln!(out, ",{:.16e},{:.16e},{:.16e}", norm(traj.z(i)), norm(traj.u(i)), traj.residuals[i]);
    }
    out
}

fn initial_state(exp: &Experiment, d: &SpectralDecomposition) -> Result<nalgebra::DVector<f64>, CliError> {
    match &exp.initial_state {
        InitialState::Explicit(x0) => Ok(x0.clone()),
        InitialState::Consistent { z0, u_guess } => {
            let t0 = exp.mesh.t0();
            match consistent_initialize(&exp.dae, d, t0, z0, u_guess, CONSISTENT_INIT_TOL, CONSISTENT_INIT_MAX_ITER) {
                Ok(u0) => Ok(z0 + u0),
                Err(e @ (ModelError::NotInSubspace { .. } | ModelError::DimensionMismatch { .. })) => {
                    Err(ConfigError::Field { field: "initial_state", message: e.to_string() }.into())
                }
                Err(e) => Err(CliError::Corrector(e)),
            }
        }
    }
}

fn solve_error(e: SolveError) -> CliError {
    match e {
        SolveError::Model(m) => CliError::Corrector(m),
        other => ConfigError::Field { field: "initial_state", message: other.to_string() }.into(),
    }
}

fn cmd_solve(cli: &Cli, config: &Path) -> Result<i32, CliError> {
    let exp = load(config)?;
    let d = analyze(&exp.dae)?;
    let x0 = initial_state(&exp, &d)?;
    let start = Instant::now();
    let traj = match solve(&exp.dae, &d, &exp.mesh, &x0, &exp.solver) {
        Ok(t) => t,
        Err(e @ SolveError::InconsistentInitialState { .. }) => return Err(solve_error(e)),
        Err(SolveError::Model(m)) => return Err(CliError::Corrector(m)),
        Err(e) => return Err(ConfigError::Field { field: "mesh", message: e.to_string() }.into()),
    };
    let wall_time = start.elapsed().as_secs_f64();
    if let Some(p) = output_path(cli, exp.outputs.trajectory_csv.as_deref(), "trajectory.csv") {
        write_file(&p, &trajectory_csv(&traj))?;
    }
    let mut summary = serde_json::to_value(traj.status).expect("status serializes");
    let obj = summary.as_object_mut().expect("status is an object");
    obj.insert("model".into(), json!(exp.model_name));
    obj.insert("method".into(), json!(exp.solver.method));
    obj.insert("max_norm".into(), json!(traj.max_norm()));
    obj.insert("final_state".into(), json!(traj.final_state().map(|v| v.as_slice().to_vec())));
    obj.insert("wall_time".into(), json!(wall_time));
    emit_json(cli, output_path(cli, exp.outputs.summary_json.as_deref(), "summary.json"), &summary)?;
    Ok(match traj.status {
        TrajectoryStatus::Completed => EXIT_OK,
        TrajectoryStatus::BlowUp { .. } => EXIT_BLOW_UP,
        TrajectoryStatus::CorrectorFailed { .. } => EXIT_CORRECTOR,
    })
}

fn cmd_converge(cli: &Cli, config: &Path) -> Result<i32, CliError> {
    let exp = load(config)?;
    let study = exp
        .study
        .ok_or(ConfigError::Field { field: "study", message: "converge needs a study section".into() })?;
    let path = output_path(cli, exp.outputs.summary_json.as_deref(), "converge.json");
    if !exp.smooth {
        let value = json!({
            "model": exp.model_name,
            "method": exp.solver.method,
            "skipped_reason": "non-smooth input",
        });
        emit_json(cli, path, &value)?;
        return Ok(EXIT_OK);
    }
    let d = analyze(&exp.dae)?;
    let x0 = initial_state(&exp, &d)?;
    let est = empirical_order(&exp.dae, &d, &exp.solver, &exp.mesh, &x0, study.refinements, &Reference::FinestSelf)
        .map_err(CliError::Study)?;
    let mut value = serde_json::to_value(&est).expect("estimate serializes");
    value.as_object_mut().expect("object").insert("model".into(), json!(exp.model_name));
    emit_json(cli, path, &value)?;
    Ok(EXIT_OK)
}

fn cmd_projectors(cli: &Cli, config: &Path) -> Result<i32, CliError> {
    let exp = load(config)?;
    let d = analyze(&exp.dae)?;
    let pencil = exp.dae.pencil();
    let tol = VALIDATION_TOL * pencil.residual_scale();
    let report = validate_decomposition(pencil, &d, tol);
    let radius = default_contour_radius(pencil)?;
    let residue = projectors_residue(pencil, radius, RESIDUE_NODES)?;
    let agreement = max_abs(&(&residue.p1 - &d.p1)).max(max_abs(&(&residue.q1 - &d.q1)));
    let passed = report.passed() && agreement <= RESIDUE_AGREEMENT_TOL;
    let value = json!({
        "model": exp.model_name,
        "p1": to_rows(&d.p1),
        "p2": to_rows(&d.p2),
        "q1": to_rows(&d.q1),
        "q2": to_rows(&d.q2),
        "g": to_rows(&d.g),
        "det_g": d.det_g(),
        "index": d.index.as_u8(),
        "validation": report,
        "validation_tol": tol,
        "validation_passed": report.passed(),
        "residue_agreement": agreement,
        "residue_radius": radius,
        "residue_nodes": RESIDUE_NODES,
    });
    emit_json(cli, output_path(cli, exp.outputs.summary_json.as_deref(), "projectors.json"), &value)?;
    Ok(if passed { EXIT_OK } else { EXIT_PROJECTORS })
}

fn cmd_validate(cli: &Cli, config: &Path) -> Result<i32, CliError> {
    ExperimentConfig::from_path(config)?.validate()?;
    if !cli.quiet {
        println!("ok");
    }
    Ok(EXIT_OK)
}
