//! The two combined schemes on a uniform mesh.
//!
//! Both advance the differential component `z = P1·x` explicitly and then
//! correct the algebraic component `u = P2·x` with one Newton-like step:
//!
//! ```text
//! Method 1   z_{i+1} = (I − h·G⁻¹B)·z_i + h·G⁻¹Q1·f(t_i, z_i + u_i)
//! Method 2   z_1 as in Method 1, then
//!            z_{i+1} = z_{i−1} + 2h·G⁻¹[Q1·f(t_i, z_i + u_i) − B·z_i]
//! both       u_{i+1} = u_i − [I − G⁻¹·∂(Q2 f)/∂x]⁻¹|_{X2} · [u_i − G⁻¹Q2·f(t_{i+1}, z_{i+1} + u_i)]
//! ```

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dae_model::{
    constraint_residual, fixed_point_residual, newton_correction, ModelError, ReducedOperators,
    SemilinearDae,
};
use crate::pencil::SpectralDecomposition;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("method 2 needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("initial state has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("initial state is not consistent: constraint residual {residual:e} exceeds {tol:e}")]
    InconsistentInitialState { residual: f64, tol: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uniform mesh `t_i = t0 + i·h`, `h = (t_end − t0)/n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl Mesh {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self, SolveError> {
        if !(t0.is_finite() && t_end.is_finite()) {
            return Err(SolveError::InvalidMesh("t0 and t_end must be finite".into()));
        }
        if !(t_end > t0) {
            return Err(SolveError::InvalidMesh(format!("t_end ({t_end}) must exceed t0 ({t0})")));
        }
        if n_steps == 0 {
            return Err(SolveError::InvalidMesh("n_steps must be positive".into()));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    /// Mesh with the given step size; `(t_end − t0)/h` must be an integer
    /// up to roundoff.
    pub fn with_step(t0: f64, t_end: f64, h: f64) -> Result<Self, SolveError> {
        let steps = (t_end - t0) / h;
        let n = steps.round();
        if !(h > 0.0) || !n.is_finite() || (steps - n).abs() > 1e-9 * n.max(1.0) {
            return Err(SolveError::InvalidMesh(format!("step {h} does not divide [{t0}, {t_end}]")));
        }
        Self::new(t0, t_end, n as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    /// `t0 + i·h`, computed directly rather than by accumulation.
    pub fn node(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.h()
    }

    /// The mesh with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self { n_steps: self.n_steps * factor, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Method1,
    Method2,
}

impl Method {
    pub fn nominal_order(self) -> f64 {
        match self {
            Method::Method1 => 1.0,
            Method::Method2 => 2.0,
        }
    }
}

/// How the algebraic component is corrected at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corrector {
    /// Exactly one Newton-like update per step.
    SingleStep,
    /// Repeat the update with a refreshed Jacobian until the fixed-point
    /// residual is below `tol` or `max_iter` updates were made.
    IterateToTol { tol: f64, max_iter: usize },
}

pub const DEFAULT_BLOW_UP_THRESHOLD: f64 = 1e6;
pub const DEFAULT_INIT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub corrector: Corrector,
    /// The run stops with [`TrajectoryStatus::BlowUp`] once `‖x_i‖₂` exceeds this.
    pub blow_up_threshold: f64,
    /// `x0` is accepted when its constraint residual is at most
    /// `init_tolerance · (1 + ‖B‖)`.
    pub init_tolerance: f64,
    /// Keep every `output_stride`-th node (plus the last one).
    pub output_stride: usize,
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            corrector: Corrector::SingleStep,
            blow_up_threshold: DEFAULT_BLOW_UP_THRESHOLD,
            init_tolerance: DEFAULT_INIT_TOLERANCE,
            output_stride: 1,
        }
    }

    pub fn with_corrector(mut self, corrector: Corrector) -> Self {
        self.corrector = corrector;
        self
    }

    pub fn with_blow_up_threshold(mut self, threshold: f64) -> Self {
        self.blow_up_threshold = threshold;
        self
    }

    pub fn with_output_stride(mut self, stride: usize) -> Self {
        self.output_stride = stride;
        self
    }

    fn validate(&self) -> Result<(), SolveError> {
        if let Corrector::IterateToTol { tol, max_iter } = self.corrector {
            if !(tol > 0.0) || max_iter == 0 {
                return Err(SolveError::InvalidConfig("iterated corrector needs tol > 0 and max_iter ≥ 1".into()));
            }
        }
        if !(self.blow_up_threshold > 0.0) {
            return Err(SolveError::InvalidConfig("blow_up_threshold must be positive".into()));
        }
        if !(self.init_tolerance >= 0.0) {
            return Err(SolveError::InvalidConfig("init_tolerance must be nonnegative".into()));
        }
        if self.output_stride == 0 {
            return Err(SolveError::InvalidConfig("output_stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    BlowUp { at_time: f64 },
    CorrectorFailed { at_step: usize },
}

/// Recorded solution. States are stored row by row in flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    /// Step size of the mesh the trajectory was computed on.
    pub h: f64,
    pub times: Vec<f64>,
    /// Mesh index of each recorded node.
    pub steps: Vec<usize>,
    states: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    /// Constraint residual norm `‖Q2[Bx − f]‖` at each recorded node.
    pub residuals: Vec<f64>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    fn with_capacity(dim: usize, h: f64, nodes: usize) -> Self {
        Self {
            dim,
            h,
            times: Vec::with_capacity(nodes),
            steps: Vec::with_capacity(nodes),
            states: Vec::with_capacity(nodes * dim),
            z: Vec::with_capacity(nodes * dim),
            u: Vec::with_capacity(nodes * dim),
            residuals: Vec::with_capacity(nodes),
            status: TrajectoryStatus::Completed,
        }
    }

    /// Trajectory from externally supplied samples (for instance a closed-form
    /// solution), split with the given decomposition.
    pub fn from_samples(
        decomp: &SpectralDecomposition,
        h: f64,
        steps: Vec<usize>,
        times: Vec<f64>,
        states: &[DVector<f64>],
    ) -> Self {
        let dim = decomp.dim();
        let mut tr = Self::with_capacity(dim, h, states.len());
        for ((step, t), x) in steps.into_iter().zip(times).zip(states) {
            let z = &decomp.p1 * x;
            let u = &decomp.p2 * x;
            tr.push(step, t, x, &z, &u, 0.0);
        }
        tr
    }

    fn push(&mut self, step: usize, t: f64, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, residual: f64) {
        self.steps.push(step);
        self.times.push(t);
        self.states.extend(x.iter());
        self.z.extend(z.iter());
        self.u.extend(u.iter());
        self.residuals.push(residual);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    pub fn u(&self, i: usize) -> &[f64] {
        &self.u[i * self.dim..(i + 1) * self.dim]
    }

    pub fn state_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.state(i))
    }

    pub fn final_state(&self) -> Option<DVector<f64>> {
        (!self.is_empty()).then(|| self.state_vector(self.len() - 1))
    }

    /// Largest Euclidean state norm over the recorded nodes.
    pub fn max_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| norm2(self.state(i)))
            .fold(0.0_f64, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) })
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .fold(0.0_f64, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(*v) })
    }

    /// Index of the recorded node with mesh index `step`, if any.
    pub fn find_step(&self, step: usize) -> Option<usize> {
        self.steps.binary_search(&step).ok()
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One algebraic update at `(t_next, z_next)` starting from `u_prev`.
pub fn algebraic_update(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    t_next: f64,
    z_next: &DVector<f64>,
    u_prev: &DVector<f64>,
    corrector: Corrector,
) -> Result<DVector<f64>, ModelError> {
    let ops = ReducedOperators::new(dae, decomp);
    algebraic_update_with(dae, &ops, t_next, z_next, u_prev, corrector)
}

pub fn algebraic_update_with(
    dae: &SemilinearDae,
    ops: &ReducedOperators,
    t_next: f64,
    z_next: &DVector<f64>,
    u_prev: &DVector<f64>,
    corrector: Corrector,
) -> Result<DVector<f64>, ModelError> {
    match corrector {
        Corrector::SingleStep => newton_correction(dae, ops, t_next, z_next, u_prev),
        Corrector::IterateToTol { tol, max_iter } => {
            let mut u = u_prev.clone();
            for _ in 0..max_iter {
                u = newton_correction(dae, ops, t_next, z_next, &u)?;
                if fixed_point_residual(dae, ops, t_next, z_next, &u).norm() <= tol {
                    break;
                }
            }
            Ok(u)
        }
    }
}

pub fn method1_solve(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    mesh: &Mesh,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Trajectory, SolveError> {
    let config = SolverConfig { method: Method::Method1, ..*config };
    solve(dae, decomp, mesh, x0, &config)
}

pub fn method2_solve(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    mesh: &Mesh,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Trajectory, SolveError> {
    let config = SolverConfig { method: Method::Method2, ..*config };
    solve(dae, decomp, mesh, x0, &config)
}

/// Run the method selected in `config`.
pub fn solve(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    mesh: &Mesh,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Trajectory, SolveError> {
    config.validate()?;
    let n = dae.dim();
    if x0.len() != n {
        return Err(SolveError::DimensionMismatch { expected: n, got: x0.len() });
    }
    if config.method == Method::Method2 && mesh.n_steps() < 2 {
        return Err(SolveError::TooFewSteps(mesh.n_steps()));
    }
    let t0 = mesh.t0();
    let (_, residual0) = constraint_residual(dae, decomp, t0, x0);
    let init_tol = config.init_tolerance * (1.0 + dae.pencil().norm_b());
    if !(residual0 <= init_tol) {
        return Err(SolveError::InconsistentInitialState { residual: residual0, tol: init_tol });
    }

    let ops = ReducedOperators::new(dae, decomp);
    let h = mesh.h();
    let steps = mesh.n_steps();
    let stride = config.output_stride;
    let mut traj = Trajectory::with_capacity(n, h, steps / stride + 2);

    let mut z = &decomp.p1 * x0;
    let mut u = &decomp.p2 * x0;
    traj.push(0, t0, &(&z + &u), &z, &u, residual0);
    let mut z_prev: Option<DVector<f64>> = None;

    for i in 0..steps {
        let t = mesh.node(i);
        let t_next = mesh.node(i + 1);
        let x = &z + &u;
        let forcing = &ops.ginv_q1 * dae.rhs(t, &x);
        let drift = &ops.ginv_b * &z;
        let z_next = match (&z_prev, config.method) {
            (Some(zp), Method::Method2) => zp + (forcing - drift) * (2.0 * h),
            _ => &z + (forcing - drift) * h,
        };
        let u_next = match algebraic_update_with(dae, &ops, t_next, &z_next, &u, config.corrector) {
            Ok(u_next) => u_next,
            Err(_) => {
                traj.status = TrajectoryStatus::CorrectorFailed { at_step: i + 1 };
                return Ok(traj);
            }
        };
        let x_next = &z_next + &u_next;
        let norm = x_next.norm();
        let blown = !norm.is_finite() || norm > config.blow_up_threshold;
        let last = i + 1 == steps;
        if blown || last || (i + 1) % stride == 0 {
            let (_, residual) = constraint_residual(dae, decomp, t_next, &x_next);
            traj.push(i + 1, t_next, &x_next, &z_next, &u_next, residual);
        }
        if blown {
            traj.status = TrajectoryStatus::BlowUp { at_time: t_next };
            return Ok(traj);
        }
        z_prev = Some(std::mem::replace(&mut z, z_next));
        u = u_next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae_model::{JacFn, RhsFn};
    use crate::pencil::{projectors_algebraic, MatrixPencil};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn scalar(a: f64, b: f64, f_coef: f64) -> (SemilinearDae, SpectralDecomposition) {
        let p = MatrixPencil::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap();
        let dae = SemilinearDae::affine(p, DVector::zeros(1), DMatrix::from_element(1, 1, f_coef)).unwrap();
        let d = projectors_algebraic(dae.pencil()).unwrap();
        (dae, d)
    }

    fn one() -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }

    #[test]
    fn mesh_validation_and_nodes() {
        assert!(Mesh::new(0.0, 1.0, 0).is_err());
        assert!(Mesh::new(1.0, 1.0, 10).is_err());
        assert!(Mesh::new(0.0, f64::NAN, 10).is_err());
        let m = Mesh::new(0.0, 1.0, 10).unwrap();
        assert_eq!(m.h(), 0.1);
        assert_eq!(m.node(3), 3.0 * 0.1);
        assert_eq!(m.node(10), 1.0);
        assert_eq!(Mesh::with_step(0.0, 1.0, 0.01).unwrap().n_steps(), 100);
        assert!(Mesh::with_step(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn method1_growth_is_explicit_euler() {
        let (dae, d) = scalar(1.0, 0.0, 1.0);
        let mesh = Mesh::new(0.0, 0.1, 1).unwrap();
        let tr = method1_solve(&dae, &d, &mesh, &one(), &SolverConfig::new(Method::Method1)).unwrap();
        assert!((tr.state(1)[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn method1_decay_step() {
        let (dae, d) = scalar(1.0, 1.0, 0.0);
        let mesh = Mesh::new(0.0, 0.1, 1).unwrap();
        let tr = method1_solve(&dae, &d, &mesh, &one(), &SolverConfig::new(Method::Method1)).unwrap();
        assert!((tr.state(1)[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn method2_leapfrog_steps() {
        let (dae, d) = scalar(1.0, 1.0, 0.0);
        let mesh = Mesh::new(0.0, 0.2, 2).unwrap();
        let tr = method2_solve(&dae, &d, &mesh, &one(), &SolverConfig::new(Method::Method2)).unwrap();
        assert!((tr.z(1)[0] - 0.9).abs() < 1e-15);
        assert!((tr.z(2)[0] - 0.82).abs() < 1e-15);

        let (dae, d) = scalar(1.0, 0.0, 1.0);
        let tr = method2_solve(&dae, &d, &mesh, &one(), &SolverConfig::new(Method::Method2)).unwrap();
        assert!((tr.z(1)[0] - 1.1).abs() < 1e-15);
        assert!((tr.z(2)[0] - 1.22).abs() < 1e-15);
    }

    #[test]
    fn method2_needs_two_steps() {
        let (dae, d) = scalar(1.0, 1.0, 0.0);
        let mesh = Mesh::new(0.0, 0.1, 1).unwrap();
        let err = method2_solve(&dae, &d, &mesh, &one(), &SolverConfig::new(Method::Method2)).unwrap_err();
        assert_eq!(err, SolveError::TooFewSteps(1));
    }

    #[test]
    fn affine_algebraic_update_is_exact() {
        // A = diag(1, 0), B = I, f ≡ c: u = G⁻¹Q2·c after one update
        let p = MatrixPencil::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let c = DVector::from_vec(vec![0.7, -1.3]);
        let dae = SemilinearDae::affine(p, c.clone(), DMatrix::zeros(2, 2)).unwrap();
        let d = projectors_algebraic(dae.pencil()).unwrap();
        let u = algebraic_update(&dae, &d, 0.0, &DVector::from_vec(vec![2.0, 0.0]), &DVector::zeros(2), Corrector::SingleStep).unwrap();
        let expect = &d.g_inv * &d.q2 * c;
        assert!((u - expect).norm() < 1e-15);
    }

    #[test]
    fn inconsistent_start_rejected() {
        let p = MatrixPencil::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let dae = SemilinearDae::affine(p, DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        let d = projectors_algebraic(dae.pencil()).unwrap();
        let mesh = Mesh::new(0.0, 1.0, 10).unwrap();
        let err = method1_solve(&dae, &d, &mesh, &DVector::from_vec(vec![0.0, 1.0]), &SolverConfig::new(Method::Method1)).unwrap_err();
        assert!(matches!(err, SolveError::InconsistentInitialState { .. }));
    }

    #[test]
    fn blow_up_is_detected_and_truncates() {
        // x' = x² blows up at t = 1 from x0 = 1
        let p = MatrixPencil::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let rhs: RhsFn = Arc::new(|_t, x| x.map(|v| v * v));
        let jac: JacFn = Arc::new(|_t, x| DMatrix::from_element(1, 1, 2.0 * x[0]));
        let dae = SemilinearDae::new(p, rhs).with_jacobian(jac);
        let d = projectors_algebraic(dae.pencil()).unwrap();
        let mesh = Mesh::new(0.0, 2.0, 2000).unwrap();
        let cfg = SolverConfig::new(Method::Method1);
        let tr = method1_solve(&dae, &d, &mesh, &one(), &cfg).unwrap();
        let TrajectoryStatus::BlowUp { at_time } = tr.status else { panic!("{:?}", tr.status) };
        assert!(at_time > 1.0 && at_time < 2.0);
        assert!(tr.max_norm() > 1e6);

        let low = method1_solve(&dae, &d, &mesh, &one(), &cfg.with_blow_up_threshold(10.0)).unwrap();
        assert!(low.len() < tr.len());
        for i in 0..low.len() {
            assert_eq!(low.state(i), tr.state(i));
        }
    }

    #[test]
    fn corrector_failure_truncates() {
        // f2 = x2 − x2²/2 + t² gives the Newton matrix 1 − (1 − x2) = x2, singular at x2 = 0
        let p = MatrixPencil::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let rhs: RhsFn = Arc::new(|t, x| DVector::from_vec(vec![1.0, x[1] - 0.5 * x[1] * x[1] + t * t]));
        let jac: JacFn = Arc::new(|_t, x| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0 - x[1]]));
        let dae = SemilinearDae::new(p, rhs).with_jacobian(jac);
        let d = projectors_algebraic(dae.pencil()).unwrap();
        let mesh = Mesh::new(0.0, 1.0, 10).unwrap();
        let tr = method1_solve(&dae, &d, &mesh, &DVector::zeros(2), &SolverConfig::new(Method::Method1)).unwrap();
        assert_eq!(tr.status, TrajectoryStatus::CorrectorFailed { at_step: 1 });
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn output_stride_keeps_last_node() {
        let (dae, d) = scalar(1.0, 1.0, 0.0);
        let mesh = Mesh::new(0.0, 1.0, 10).unwrap();
        let full = method1_solve(&dae, &d, &mesh, &one(), &SolverConfig::new(Method::Method1)).unwrap();
        let thin = method1_solve(&dae, &d, &mesh, &one(), &SolverConfig::new(Method::Method1).with_output_stride(3)).unwrap();
        assert_eq!(thin.steps, vec![0, 3, 6, 9, 10]);
        for (k, &s) in thin.steps.iter().enumerate() {
            assert_eq!(thin.state(k), full.state(s));
        }
    }
}
