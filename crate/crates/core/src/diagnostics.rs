//! Mesh-refinement order studies, stability coefficients and long-run
//! classification.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dae_model::SemilinearDae;
use crate::integrators::{solve, Mesh, Method, SolveError, SolverConfig, Trajectory, TrajectoryStatus};
use crate::linalg::spectral_norm;
use crate::pencil::SpectralDecomposition;

/// Errors below this multiple of the reference's largest entry are treated
/// as roundoff and make a fit meaningless.
pub const DEGENERATE_ERROR_FLOOR: f64 = 1e-13;

/// Levels between the finest measured mesh and the self-refined reference.
pub const REFERENCE_LEVELS_BELOW: u32 = 2;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("an order study needs at least 3 refinements, got {0}")]
    TooFewRefinements(usize),
    #[error("{component} error {error:e} at h = {h:e} is below the fit floor {floor:e}")]
    DegenerateFit { component: &'static str, h: f64, error: f64, floor: f64 },
    #[error("run with h = {h:e} ended early: {status:?}")]
    Incomplete { h: f64, status: TrajectoryStatus },
    #[error("reference trajectory has no node at t = {t}")]
    ReferenceMismatch { t: f64 },
}

#[derive(Debug, Clone)]
pub enum Reference {
    /// Solve again on a mesh `REFERENCE_LEVELS_BELOW` levels finer than the
    /// finest measured one.
    FinestSelf,
    /// Any trajectory with a node at every node of the finest measured mesh.
    External(Trajectory),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentOrder {
    pub errors: Vec<f64>,
    /// `log2(E(h_k) / E(h_k / 2))`
    pub pairwise_orders: Vec<f64>,
    /// Least-squares slope of `log E` against `log h`.
    pub asymptotic_order: f64,
}

impl ComponentOrder {
    fn from_errors(step_sizes: &[f64], errors: Vec<f64>) -> Self {
        let pairwise_orders = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let asymptotic_order = log_log_slope(step_sizes, &errors);
        Self { errors, pairwise_orders, asymptotic_order }
    }

    /// Whether errors never grow once the coarsest level is dropped.
    pub fn is_monotone_after_first(&self) -> bool {
        self.errors.iter().skip(1).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub method: Method,
    pub step_sizes: Vec<f64>,
    pub reference_step: f64,
    pub z: ComponentOrder,
    /// Absent for index-0 problems, where `u ≡ 0`.
    pub u: Option<ComponentOrder>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Row of `traj` holding node `i` of a mesh with step `h` starting at `t0`.
fn row_at(traj: &Trajectory, t0: f64, h: f64, i: usize) -> Result<usize, DiagnosticsError> {
    let ratio = (h / traj.h).round() as usize;
    let t = t0 + i as f64 * h;
    let row = traj.find_step(i * ratio).ok_or(DiagnosticsError::ReferenceMismatch { t })?;
    if ratio == 0 || (traj.times[row] - t).abs() > 1e-9 * (1.0 + t.abs()) {
        return Err(DiagnosticsError::ReferenceMismatch { t });
    }
    Ok(row)
}

fn run_completed(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    mesh: &Mesh,
    x0: &nalgebra::DVector<f64>,
    config: &SolverConfig,
    stride: usize,
) -> Result<Trajectory, DiagnosticsError> {
    let traj = solve(dae, decomp, mesh, x0, &config.with_output_stride(stride))?;
    if traj.status != TrajectoryStatus::Completed {
        return Err(DiagnosticsError::Incomplete { h: mesh.h(), status: traj.status });
    }
    Ok(traj)
}

/// Solve on `h, h/2, …, h/2^refinements` and measure, for each level, the
/// max-norm errors of `z` and `u` over all nodes of that level's mesh. Each of
/// those nodes is also a reference node, so nothing is interpolated. Sampling
/// only the shared base nodes would hide the alternating parasitic error of
/// the leapfrog scheme on every level but the coarsest.
///
/// Ladder solves run in parallel; results are aggregated in ladder order.
pub fn empirical_order(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    config: &SolverConfig,
    mesh_base: &Mesh,
    x0: &nalgebra::DVector<f64>,
    refinements: usize,
    reference: &Reference,
) -> Result<OrderEstimate, DiagnosticsError> {
    if refinements < 3 {
        return Err(DiagnosticsError::TooFewRefinements(refinements));
    }
    let factors: Vec<usize> = (0..=refinements).map(|k| 1usize << k).collect();
    let own_reference = matches!(reference, Reference::FinestSelf);
    let ref_factor = 1usize << (refinements + REFERENCE_LEVELS_BELOW as usize);
    let mut jobs = factors.clone();
    if own_reference {
        jobs.push(ref_factor);
    }
    let mut runs: Vec<Trajectory> = jobs
        .par_iter()
        .map(|&f| run_completed(dae, decomp, &mesh_base.refined(f), x0, config, 1))
        .collect::<Result<_, _>>()?;
    let reference = match reference {
        Reference::FinestSelf => runs.pop().expect("reference run"),
        Reference::External(t) => t.clone(),
    };

    let step_sizes: Vec<f64> = factors.iter().map(|&f| mesh_base.refined(f).h()).collect();
    let mut z_err = Vec::with_capacity(runs.len());
    let mut u_err = Vec::with_capacity(runs.len());
    for run in &runs {
        let (mut ez, mut eu) = (0.0_f64, 0.0_f64);
        for i in 0..run.len() {
            let rr = row_at(&reference, mesh_base.t0(), run.h, i)?;
            ez = ez.max(max_diff(run.z(i), reference.z(rr)));
            eu = eu.max(max_diff(run.u(i), reference.u(rr)));
        }
        z_err.push(ez);
        u_err.push(eu);
    }
    let has_u = decomp.algebraic_dim() > 0;
    let scale = (0..reference.len())
        .flat_map(|i| reference.state(i).iter().copied())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let floor = DEGENERATE_ERROR_FLOOR * scale;
    let check = |component: &'static str, errors: &[f64]| -> Result<(), DiagnosticsError> {
        for (&h, &error) in step_sizes.iter().zip(errors) {
            if !(error > floor) {
                return Err(DiagnosticsError::DegenerateFit { component, h, error, floor });
            }
        }
        Ok(())
    };
    check("z", &z_err)?;
    if has_u {
        check("u", &u_err)?;
    }
    Ok(OrderEstimate {
        method: config.method,
        reference_step: reference.h,
        z: ComponentOrder::from_errors(&step_sizes, z_err),
        u: has_u.then(|| ComponentOrder::from_errors(&step_sizes, u_err)),
        step_sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub h: f64,
    pub norm_ginv_b: f64,
    /// Largest `‖G⁻¹·Q1·∂f/∂x‖₂` over the recorded states. A lower estimate
    /// of the supremum it stands in for.
    pub m1_estimate: f64,
    /// `‖I − h·G⁻¹B‖ + h·M1`, the Method 1 amplification coefficient.
    pub g_of_h: f64,
    /// `1 + 2h·(‖G⁻¹B‖ + M1)`, the Method 2 coefficient.
    pub ghat_norm: f64,
}

pub fn stability_report(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    trajectory: &Trajectory,
    h: f64,
) -> Result<StabilityReport, DiagnosticsError> {
    let n = dae.dim();
    let ginv_b = &decomp.g_inv * dae.pencil().b();
    let ginv_q1 = &decomp.g_inv * &decomp.q1;
    let norm_ginv_b = spectral_norm(&ginv_b);
    let mut m1 = 0.0_f64;
    for i in 0..trajectory.len() {
        let x = trajectory.state_vector(i);
        let jac = dae
            .jacobian(trajectory.times[i], &x)
            .map_err(|e| DiagnosticsError::Solve(SolveError::Model(e)))?;
        m1 = m1.max(spectral_norm(&(&ginv_q1 * jac)));
    }
    let g_of_h = spectral_norm(&(DMatrix::identity(n, n) - ginv_b * h)) + h * m1;
    let ghat_norm = 1.0 + 2.0 * h * (norm_ginv_b + m1);
    Ok(StabilityReport { h, norm_ginv_b, m1_estimate: m1, g_of_h, ghat_norm })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum LongRunClass {
    Bounded { max_norm: f64 },
    BlowUp { at_time: f64 },
    Inconclusive,
}

pub fn classify_long_run(trajectory: &Trajectory) -> LongRunClass {
    match trajectory.status {
        TrajectoryStatus::Completed => LongRunClass::Bounded { max_norm: trajectory.max_norm() },
        TrajectoryStatus::BlowUp { at_time } => LongRunClass::BlowUp { at_time },
        TrajectoryStatus::CorrectorFailed { .. } => LongRunClass::Inconclusive,
    }
}

/// Largest `|x_c − x_ref,c|` over the selected components and over the
/// nodes of `mesh` (the coarser of the two grids) inside `[t_from, t_to]`.
/// Both trajectories must hold a node at each such mesh node.
pub fn windowed_deviation(
    trajectory: &Trajectory,
    reference: &Trajectory,
    mesh: &Mesh,
    components: &[usize],
    t_from: f64,
    t_to: f64,
) -> Result<f64, DiagnosticsError> {
    let mut amp = 0.0_f64;
    for i in 0..=mesh.n_steps() {
        let t = mesh.node(i);
        if t < t_from || t > t_to {
            continue;
        }
        let (a, b) = (row_at(trajectory, mesh.t0(), mesh.h(), i)?, row_at(reference, mesh.t0(), mesh.h(), i)?);
        let (xa, xb) = (trajectory.state(a), reference.state(b));
        for &c in components {
            amp = amp.max((xa[c] - xb[c]).abs());
        }
    }
    Ok(amp)
}
