//! Semilinear DAE `d/dt[Ax] + Bx = f(t, x)` together with the operations
//! that only need the spectral decomposition: state splitting `x = z + u`,
//! the constraint residual of the manifold `L0`, Jacobians, and Newton
//! consistent initialization.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::all_finite;
use crate::pencil::{MatrixPencil, SpectralDecomposition};

/// Right-hand side `f(t, x)`.
pub type RhsFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// State Jacobian `∂f/∂x (t, x)`.
pub type JacFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

pub const DEFAULT_FD_STEP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianMode {
    Analytic,
    ForwardDifference { step: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("analytic Jacobian mode requested without a Jacobian function")]
    MissingJacobian,
    #[error("forward-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("Jacobian contains non-finite entries at t = {t}")]
    NonFiniteJacobian { t: f64 },
    #[error("right-hand side returned non-finite values at t = {t}")]
    NonFiniteRhs { t: f64 },
    #[error("Newton iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Newton matrix restricted to X2 is numerically singular at t = {t}")]
    SingularNewtonMatrix { t: f64 },
    #[error("vector is not in the expected subspace (deviation {deviation:e})")]
    NotInSubspace { deviation: f64 },
}

#[derive(Clone)]
pub struct SemilinearDae {
    pencil: MatrixPencil,
    rhs: RhsFn,
    jac: Option<JacFn>,
    jac_mode: JacobianMode,
}

impl fmt::Debug for SemilinearDae {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemilinearDae")
            .field("pencil", &self.pencil)
            .field("jac_mode", &self.jac_mode)
            .finish_non_exhaustive()
    }
}

impl SemilinearDae {
    /// A DAE whose Jacobian is approximated by forward differences.
    pub fn new(pencil: MatrixPencil, rhs: RhsFn) -> Self {
        Self {
            pencil,
            rhs,
            jac: None,
            jac_mode: JacobianMode::ForwardDifference { step: DEFAULT_FD_STEP },
        }
    }

    /// Attach an analytic Jacobian and switch to [`JacobianMode::Analytic`].
    pub fn with_jacobian(mut self, jac: JacFn) -> Self {
        self.jac = Some(jac);
        self.jac_mode = JacobianMode::Analytic;
        self
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Result<Self, ModelError> {
        match mode {
            JacobianMode::Analytic if self.jac.is_none() => return Err(ModelError::MissingJacobian),
            JacobianMode::ForwardDifference { step } if !(step > 0.0 && step.is_finite()) => {
                return Err(ModelError::InvalidStep(step))
            }
            _ => {}
        }
        self.jac_mode = mode;
        Ok(self)
    }

    /// Affine right-hand side `f(t, x) = c + M·x` with its exact Jacobian.
    pub fn affine(pencil: MatrixPencil, c: DVector<f64>, m: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = pencil.dim();
        if c.len() != n {
            return Err(ModelError::DimensionMismatch { expected: n, got: c.len() });
        }
        if m.shape() != (n, n) {
            return Err(ModelError::DimensionMismatch { expected: n, got: m.nrows() });
        }
        let mj = m.clone();
        let rhs: RhsFn = Arc::new(move |_t, x| &c + &m * x);
        let jac: JacFn = Arc::new(move |_t, _x| mj.clone());
        Ok(Self::new(pencil, rhs).with_jacobian(jac))
    }

    pub fn pencil(&self) -> &MatrixPencil {
        &self.pencil
    }

    pub fn dim(&self) -> usize {
        self.pencil.dim()
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jac_mode
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn rhs(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.rhs)(t, x)
    }

    /// `∂f/∂x` in the configured mode.
    pub fn jacobian(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        let j = match (self.jac_mode, &self.jac) {
            (JacobianMode::Analytic, Some(jac)) => jac(t, x),
            (JacobianMode::Analytic, None) => return Err(ModelError::MissingJacobian),
            (JacobianMode::ForwardDifference { step }, _) => self.fd_jacobian(t, x, step),
        };
        if !all_finite(&j) {
            return Err(ModelError::NonFiniteJacobian { t });
        }
        Ok(j)
    }

    /// Columnwise `(f(t, x + step·eⱼ) − f(t, x)) / step`.
    pub fn fd_jacobian(&self, t: f64, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
        let n = x.len();
        let f0 = self.rhs(t, x);
        let mut j = DMatrix::zeros(f0.len(), n);
        let mut xp = x.clone();
        for col in 0..n {
            xp[col] = x[col] + step;
            let fp = self.rhs(t, &xp);
            j.set_column(col, &((fp - &f0) / step));
            xp[col] = x[col];
        }
        j
    }

    /// Largest entrywise gap between the analytic and forward-difference
    /// Jacobians over the given probe points. `None` without an analytic
    /// Jacobian.
    pub fn jacobian_self_test(&self, probes: &[(f64, DVector<f64>)], step: f64) -> Option<f64> {
        let jac = self.jac.as_ref()?;
        let mut worst = 0.0_f64;
        for (t, x) in probes {
            let exact = jac(*t, x);
            let approx = self.fd_jacobian(*t, x, step);
            let gap = (exact - approx).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            worst = worst.max(if gap.is_nan() { f64::INFINITY } else { gap });
        }
        Some(worst)
    }
}

/// `x = z + u` with `z ∈ X1`, `u ∈ X2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub t: f64,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
}

impl SplitState {
    pub fn recombine(&self) -> DVector<f64> {
        &self.z + &self.u
    }
}

pub fn split_state(decomp: &SpectralDecomposition, x: &DVector<f64>, t: f64) -> SplitState {
    SplitState { t, z: &decomp.p1 * x, u: &decomp.p2 * x }
}

/// `Q2·[B·x − f(t, x)]` and its Euclidean norm. Zero exactly on `L0`.
pub fn constraint_residual(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    t: f64,
    x: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let r = &decomp.q2 * (dae.pencil().b() * x - dae.rhs(t, x));
    let norm = r.norm();
    (r, norm)
}

/// Operators derived once from the decomposition and reused at every step.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    /// `G⁻¹·B`
    pub ginv_b: DMatrix<f64>,
    /// `G⁻¹·Q1`
    pub ginv_q1: DMatrix<f64>,
    /// `G⁻¹·Q2`
    pub ginv_q2: DMatrix<f64>,
    /// `X2` basis `K` (n×k, orthonormal columns)
    pub basis: DMatrix<f64>,
    /// `Kᵀ·G⁻¹·Q2` (k×n)
    pub basis_t_ginv_q2: DMatrix<f64>,
}

impl ReducedOperators {
    pub fn new(dae: &SemilinearDae, decomp: &SpectralDecomposition) -> Self {
        let b = dae.pencil().b();
        let ginv_q2 = &decomp.g_inv * &decomp.q2;
        Self {
            ginv_b: &decomp.g_inv * b,
            ginv_q1: &decomp.g_inv * &decomp.q1,
            basis_t_ginv_q2: decomp.x2_basis.transpose() * &ginv_q2,
            ginv_q2,
            basis: decomp.x2_basis.clone(),
        }
    }

    pub fn algebraic_dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// `F(u) = u − G⁻¹·Q2·f(t, z + u)`.
pub fn fixed_point_residual(
    dae: &SemilinearDae,
    ops: &ReducedOperators,
    t: f64,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let x = z + u;
    u - &ops.ginv_q2 * dae.rhs(t, &x)
}

/// One Newton correction of `u` at fixed `(t, z)`:
/// `u ← u − [I − G⁻¹·Q2·∂f/∂x(t, z + u)]⁻¹|_{X2} · F(u)`.
///
/// The restricted inverse is a k×k solve in the `X2` basis coordinates.
pub fn newton_correction(
    dae: &SemilinearDae,
    ops: &ReducedOperators,
    t: f64,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let k = ops.algebraic_dim();
    if k == 0 {
        return Ok(u.clone());
    }
    let x = z + u;
    let f = dae.rhs(t, &x);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteRhs { t });
    }
    let residual = u - &ops.ginv_q2 * f;
    let jac = dae.jacobian(t, &x)?;
    // Kᵀ[I − G⁻¹Q2 J]K = I_k − (KᵀG⁻¹Q2)·J·K
    let newton = DMatrix::<f64>::identity(k, k) - &ops.basis_t_ginv_q2 * jac * &ops.basis;
    let rhs = ops.basis.transpose() * residual;
    let delta = newton
        .lu()
        .solve(&rhs)
        .filter(|d| d.iter().all(|v| v.is_finite()))
        .ok_or(ModelError::SingularNewtonMatrix { t })?;
    Ok(u - &ops.basis * delta)
}

/// Newton iteration for the consistent algebraic component `u0 ∈ X2` that
/// solves `u0 = G⁻¹·Q2·f(t0, z0 + u0)`.
///
/// When the constraint has several roots the one returned depends on
/// `u_guess`.
pub fn consistent_initialize(
    dae: &SemilinearDae,
    decomp: &SpectralDecomposition,
    t0: f64,
    z0: &DVector<f64>,
    u_guess: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, ModelError> {
    let n = dae.dim();
    for v in [z0, u_guess] {
        if v.len() != n {
            return Err(ModelError::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let scale = 1.0 + z0.norm() + u_guess.norm();
    let z_dev = (&decomp.p1 * z0 - z0).norm();
    let u_dev = (&decomp.p2 * u_guess - u_guess).norm();
    if z_dev.max(u_dev) > 1e-10 * scale {
        return Err(ModelError::NotInSubspace { deviation: z_dev.max(u_dev) });
    }
    let ops = ReducedOperators::new(dae, decomp);
    if ops.algebraic_dim() == 0 {
        return Ok(DVector::zeros(n));
    }
    let mut u = u_guess.clone();
    let mut residual = fixed_point_residual(dae, &ops, t0, z0, &u).norm();
    for _ in 0..max_iter {
        if residual <= tol {
            return Ok(u);
        }
        u = newton_correction(dae, &ops, t0, z0, &u)?;
        residual = fixed_point_residual(dae, &ops, t0, z0, &u).norm();
    }
    if residual <= tol {
        Ok(u)
    } else {
        Err(ModelError::NoConvergence { iterations: max_iter, residual })
    }
}
