//! Regular matrix pencils `λA + B` of index at most one.
//!
//! The algebraic route builds the spectral projectors from the kernel of
//! `A` and the subspace `{x : Bx ∈ range A}`. The residue route evaluates
//! the contour integrals of the resolvent `(A + μB)⁻¹` with the trapezoidal
//! rule and is kept as an independent cross-check.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::{Serialize, SerializeMap, Serializer};
use thiserror::Error;

use crate::linalg::{
    all_finite, max_abs, normalize_column_signs, sorted_svd, spectral_norm, min_singular_value,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PencilError {
    #[error("pencil matrices must be square of equal size, got A {a:?} and B {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("pencil matrices must be non-empty")]
    Empty,
    #[error("pencil entries must be finite")]
    NonFinite,
    #[error("pencil is not regular: det(λA + B) vanished at all {samples} probe points")]
    NotRegular { samples: usize },
    #[error("pencil index is higher than one")]
    IndexTooHigh,
    #[error("spectral decomposition failed: {0}")]
    DecompositionFailed(String),
    #[error("generalized eigenvalue μ = {pole} lies on or near the contour |μ| = {radius}")]
    PoleOnContour { radius: f64, pole: f64 },
    #[error("contour |μ| = {radius} encloses the nonzero eigenvalue modulus {modulus}")]
    ContourEnclosesEigenvalue { radius: f64, modulus: f64 },
    #[error("A + μB is numerically singular at contour node {node}")]
    ContourSolveFailed { node: usize },
    #[error("residue projector has imaginary part {imag:e}, expected a real result")]
    ComplexResidue { imag: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// The pair `(A, B)` defining `λA + B`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPencil {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl MatrixPencil {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, PencilError> {
        if !a.is_square() || a.shape() != b.shape() {
            return Err(PencilError::DimensionMismatch { a: a.shape(), b: b.shape() });
        }
        if a.nrows() == 0 {
            return Err(PencilError::Empty);
        }
        if !all_finite(&a) || !all_finite(&b) {
            return Err(PencilError::NonFinite);
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `‖A‖₂`
    pub fn norm_a(&self) -> f64 {
        spectral_norm(&self.a)
    }

    /// `‖B‖₂`
    pub fn norm_b(&self) -> f64 {
        spectral_norm(&self.b)
    }

    /// `λA + B` for a real `λ`.
    pub fn at(&self, lambda: f64) -> DMatrix<f64> {
        &self.a * lambda + &self.b
    }

    /// Scale used for identity residual tolerances: `1 + ‖A‖ + ‖B‖`.
    pub fn residual_scale(&self) -> f64 {
        1.0 + self.norm_a() + self.norm_b()
    }
}

/// Threshold policy for numerical rank decisions.
///
/// A singular value `σ` of a matrix `M` counts as zero when
/// `σ ≤ factor · n · ε · σ_max(M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    pub factor: f64,
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self { factor: 1.0 }
    }
}

impl RankPolicy {
    fn threshold(&self, n: usize, sigma_max: f64) -> f64 {
        self.factor * n as f64 * f64::EPSILON * sigma_max
    }
}

/// Index of a regular pencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PencilIndex {
    Index0,
    Index1,
    IndexHigher,
}

impl PencilIndex {
    pub fn as_u8(self) -> Option<u8> {
        match self {
            PencilIndex::Index0 => Some(0),
            PencilIndex::Index1 => Some(1),
            PencilIndex::IndexHigher => None,
        }
    }
}

/// A point where `λA + B` is numerically invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityWitness {
    pub lambda: f64,
    pub det: f64,
}

/// Look for a real `λ₀` with `λ₀A + B` invertible by sampling.
///
/// A regular pencil has a determinant that is a nonzero polynomial of degree
/// at most `n` in `λ`, so random samples miss its roots almost surely.
pub fn regularity_probe(
    pencil: &MatrixPencil,
    sample_count: usize,
    seed: u64,
) -> Result<RegularityWitness, PencilError> {
    regularity_probe_with(pencil, sample_count, seed, RankPolicy::default())
}

pub fn regularity_probe_with(
    pencil: &MatrixPencil,
    sample_count: usize,
    seed: u64,
    policy: RankPolicy,
) -> Result<RegularityWitness, PencilError> {
    if sample_count == 0 {
        return Err(PencilError::InvalidArgument("sample_count must be positive".into()));
    }
    let n = pencil.dim();
    let norm_a = pencil.norm_a();
    let scale = if norm_a > 0.0 { (1.0 + pencil.norm_b()) / norm_a } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..sample_count {
        let magnitude: f64 = rng.random_range(0.5..2.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let lambda = sign * magnitude * scale;
        let m = pencil.at(lambda);
        let svd = sorted_svd(&m);
        let sigma_max = svd.sigma[0];
        let sigma_min = *svd.sigma.last().expect("non-empty");
        if sigma_max > 0.0 && sigma_min > policy.threshold(n, sigma_max) {
            let det = m.lu().determinant();
            if det != 0.0 && det.is_finite() {
                return Ok(RegularityWitness { lambda, det });
            }
        }
    }
    Err(PencilError::NotRegular { samples: sample_count })
}

/// Subspace data shared by classification and the algebraic projectors.
struct Structure {
    /// orthonormal basis of ker A (n×k)
    kernel: DMatrix<f64>,
    /// orthonormal basis of range(A)^⊥ (n×k)
    cokernel: DMatrix<f64>,
    /// `cokernelᵀ · B · kernel` (k×k)
    coupling: DMatrix<f64>,
    coupling_invertible: bool,
}

fn structure(pencil: &MatrixPencil, policy: RankPolicy) -> Structure {
    let n = pencil.dim();
    let svd = sorted_svd(pencil.a());
    let sigma_max = svd.sigma[0];
    let tol = policy.threshold(n, sigma_max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        svd.sigma.iter().filter(|s| **s > tol).count()
    };
    let k = n - rank;
    let mut kernel = svd.v_t.rows(rank, k).transpose();
    normalize_column_signs(&mut kernel);
    let cokernel = svd.u.columns(rank, k).into_owned();
    let coupling = cokernel.transpose() * pencil.b() * &kernel;
    let coupling_invertible = if k == 0 {
        true
    } else {
        let scale = pencil.norm_b().max(sigma_max);
        let smin = min_singular_value(&coupling);
        smin > 0.0 && smin > policy.threshold(n, scale)
    };
    Structure { kernel, cokernel, coupling, coupling_invertible }
}

/// Index 0 when `A` is invertible, index 1 when `ker A ⊕ {x : Bx ∈ range A}`
/// spans the whole space, higher otherwise.
///
/// The direct-sum test reduces to invertibility of the k×k coupling
/// `Ũᵀ B K`, where `K` spans `ker A` and `Ũ` spans `range(A)^⊥`.
pub fn classify_index(pencil: &MatrixPencil) -> PencilIndex {
    classify_index_with(pencil, RankPolicy::default())
}

pub fn classify_index_with(pencil: &MatrixPencil, policy: RankPolicy) -> PencilIndex {
    let s = structure(pencil, policy);
    if s.kernel.ncols() == 0 {
        PencilIndex::Index0
    } else if s.coupling_invertible {
        PencilIndex::Index1
    } else {
        PencilIndex::IndexHigher
    }
}

/// Spectral projectors `P1, P2, Q1, Q2`, the operator `G = A + B·P2` and
/// its inverse for a pencil of index 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub index: PencilIndex,
    /// n×k orthonormal basis of `X2 = range(P2) = ker A`.
    pub x2_basis: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.p1.nrows()
    }

    /// Dimension `k` of the algebraic subspace.
    pub fn algebraic_dim(&self) -> usize {
        self.x2_basis.ncols()
    }

    pub fn det_g(&self) -> f64 {
        self.g.clone().lu().determinant()
    }
}

/// Nullspace-based construction of the spectral decomposition.
///
/// With `K` spanning `ker A`, `Ũ` spanning `range(A)^⊥` and `M = ŨᵀBK`:
/// `P2 = K M⁻¹ ŨᵀB` projects onto `ker A` along `{x : Bx ∈ range A}` and
/// `Q2 = BK M⁻¹ Ũᵀ` projects onto `B·ker A` along `range A`.
pub fn projectors_algebraic(pencil: &MatrixPencil) -> Result<SpectralDecomposition, PencilError> {
    projectors_algebraic_with(pencil, RankPolicy::default())
}

pub fn projectors_algebraic_with(
    pencil: &MatrixPencil,
    policy: RankPolicy,
) -> Result<SpectralDecomposition, PencilError> {
    let n = pencil.dim();
    let id = DMatrix::<f64>::identity(n, n);
    let s = structure(pencil, policy);
    if s.kernel.ncols() == 0 {
        let g = pencil.a().clone();
        let g_inv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| PencilError::DecompositionFailed("A reported invertible but inversion failed".into()))?;
        return Ok(SpectralDecomposition {
            p1: id.clone(),
            p2: DMatrix::zeros(n, n),
            q1: id,
            q2: DMatrix::zeros(n, n),
            g,
            g_inv,
            index: PencilIndex::Index0,
            x2_basis: DMatrix::zeros(n, 0),
        });
    }
    if !s.coupling_invertible {
        return Err(PencilError::IndexTooHigh);
    }
    let m_inv = s
        .coupling
        .clone()
        .try_inverse()
        .ok_or_else(|| PencilError::DecompositionFailed("kernel coupling matrix not invertible".into()))?;
    let ut = s.cokernel.transpose();
    let bk = pencil.b() * &s.kernel;
    let p2 = &s.kernel * &m_inv * &ut * pencil.b();
    let q2 = &bk * &m_inv * &ut;
    let p1 = &id - &p2;
    let q1 = &id - &q2;
    let g = pencil.a() + pencil.b() * &p2;
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| PencilError::DecompositionFailed("G = A + B·P2 is singular".into()))?;
    if !all_finite(&g_inv) {
        return Err(PencilError::DecompositionFailed("G⁻¹ has non-finite entries".into()));
    }
    Ok(SpectralDecomposition {
        p1,
        p2,
        q1,
        q2,
        g,
        g_inv,
        index: PencilIndex::Index1,
        x2_basis: s.kernel,
    })
}

/// Nonzero finite roots `μ` of `det(A + μB) = 0`, i.e. the generalized
/// eigenvalues of `A·v = −μ·B·v` other than zero.
///
/// Computed through the shift-invert matrix `W = (λ₀A + B)⁻¹A`: an eigenvalue
/// `ν ≠ 0` of `W` gives `μ = ν / (λ₀ν − 1)`.
pub fn nonzero_mu_roots(pencil: &MatrixPencil) -> Result<Vec<Complex<f64>>, PencilError> {
    let witness = regularity_probe(pencil, 32, 0x5eed)?;
    let shifted = pencil.at(witness.lambda);
    let w = shifted
        .lu()
        .solve(pencil.a())
        .ok_or_else(|| PencilError::DecompositionFailed("shifted pencil not invertible".into()))?;
    let w_norm = spectral_norm(&w);
    let cutoff = 1e-9 * w_norm;
    let lambda0 = witness.lambda;
    let roots = w
        .complex_eigenvalues()
        .iter()
        .filter(|nu| nu.norm() > cutoff)
        .filter_map(|nu| {
            let denom = nu * lambda0 - Complex::new(1.0, 0.0);
            if denom.norm() <= f64::EPSILON * (1.0 + nu.norm() * lambda0.abs()) {
                None
            } else {
                Some(nu / denom)
            }
        })
        .collect();
    Ok(roots)
}

/// Half the smallest nonzero root modulus of `det(A + μB)`, or 1 when there
/// is no such root.
pub fn default_contour_radius(pencil: &MatrixPencil) -> Result<f64, PencilError> {
    let roots = nonzero_mu_roots(pencil)?;
    let rmin = roots.iter().map(|r| r.norm()).fold(f64::INFINITY, f64::min);
    Ok(if rmin.is_finite() { 0.5 * rmin } else { 1.0 })
}

/// `P1` and `Q1` from the residue quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueProjectors {
    pub p1: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub radius: f64,
    pub node_count: usize,
    /// Largest discarded imaginary part.
    pub max_imag: f64,
}

const CONTOUR_BAND: f64 = 1e-3;
const MAX_IMAG: f64 = 1e-9;

/// Trapezoidal evaluation of
/// `P1 = (1/2πi)∮ (A + μB)⁻¹A dμ/μ` and `Q1 = (1/2πi)∮ A(A + μB)⁻¹ dμ/μ`
/// on `|μ| = radius`.
///
/// With `μ = ρe^{iθ}` the measure `dμ/(2πiμ)` becomes `dθ/2π`, so each rule
/// is the plain average of the integrand over equispaced nodes.
pub fn projectors_residue(
    pencil: &MatrixPencil,
    radius: f64,
    node_count: usize,
) -> Result<ResidueProjectors, PencilError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(PencilError::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if node_count < 8 {
        return Err(PencilError::InvalidArgument(format!("node_count must be at least 8, got {node_count}")));
    }
    for root in nonzero_mu_roots(pencil)? {
        let modulus = root.norm();
        if (modulus - radius).abs() <= CONTOUR_BAND * radius {
            return Err(PencilError::PoleOnContour { radius, pole: modulus });
        }
        if modulus < radius {
            return Err(PencilError::ContourEnclosesEigenvalue { radius, modulus });
        }
    }

    let n = pencil.dim();
    let a_c: DMatrix<Complex<f64>> = pencil.a().map(|v| Complex::new(v, 0.0));
    let b_c: DMatrix<Complex<f64>> = pencil.b().map(|v| Complex::new(v, 0.0));
    let mut p_acc = DMatrix::<Complex<f64>>::zeros(n, n);
    let mut q_acc = DMatrix::<Complex<f64>>::zeros(n, n);
    let id = DMatrix::<Complex<f64>>::identity(n, n);
    for node in 0..node_count {
        let theta = std::f64::consts::TAU * node as f64 / node_count as f64;
        let mu = Complex::from_polar(radius, theta);
        let m = &a_c + &b_c * mu;
        let lu = m.lu();
        let resolvent = lu.solve(&id).ok_or(PencilError::ContourSolveFailed { node })?;
        if resolvent.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(PencilError::ContourSolveFailed { node });
        }
        p_acc += &resolvent * &a_c;
        q_acc += &a_c * &resolvent;
    }
    let scale = 1.0 / node_count as f64;
    p_acc *= Complex::new(scale, 0.0);
    q_acc *= Complex::new(scale, 0.0);

    let max_imag = p_acc
        .iter()
        .chain(q_acc.iter())
        .fold(0.0_f64, |acc, z| acc.max(z.im.abs()));
    let p1 = p_acc.map(|z| z.re);
    let q1 = q_acc.map(|z| z.re);
    let magnitude = 1.0_f64.max(max_abs(&p1)).max(max_abs(&q1));
    if max_imag > MAX_IMAG * magnitude {
        return Err(PencilError::ComplexResidue { imag: max_imag });
    }
    Ok(ResidueProjectors { p1, q1, radius, node_count, max_imag })
}

/// Residual of each decomposition identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub entries: Vec<(String, f64)>,
    pub tol: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|(_, r)| *r <= self.tol)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, r)| !(*r <= self.tol))
            .map(|(name, _)| name.as_str())
            .collect()
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, r)| *r)
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |acc, (_, r)| acc.max(*r))
    }
}

impl Serialize for ValidationReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (name, residual) in &self.entries {
            map.serialize_entry(name, residual)?;
        }
        map.end()
    }
}

/// Names of the checked identities, in report order.
pub const IDENTITY_NAMES: [&str; 21] = [
    "P1 + P2 = I",
    "Q1 + Q2 = I",
    "P1² = P1",
    "P2² = P2",
    "Q1² = Q1",
    "Q2² = Q2",
    "P1·P2 = 0",
    "A·P1 = A",
    "Q1·A = A",
    "A·P2 = 0",
    "Q2·A = 0",
    "B·P1 = Q1·B",
    "B·P2 = Q2·B",
    "G = A + B·P2",
    "G·G⁻¹ = I",
    "G⁻¹·A·P1 = P1",
    "G⁻¹·B·P2 = P2",
    "A·G⁻¹·Q1 = Q1",
    "B·G⁻¹·Q2 = Q2",
    "A·X2 = 0",
    "P2·X2 = X2",
];

/// Max-norm residual of every decomposition identity; passes iff all are ≤ `tol`.
pub fn validate_decomposition(
    pencil: &MatrixPencil,
    d: &SpectralDecomposition,
    tol: f64,
) -> ValidationReport {
    let a = pencil.a();
    let b = pencil.b();
    let n = pencil.dim();
    let id = DMatrix::<f64>::identity(n, n);
    let zero = DMatrix::<f64>::zeros(n, n);
    let res = |lhs: DMatrix<f64>, rhs: &DMatrix<f64>| -> f64 {
        if lhs.shape() != rhs.shape() {
            f64::INFINITY
        } else {
            let r = max_abs(&(lhs - rhs));
            if r.is_nan() { f64::INFINITY } else { r }
        }
    };
    let x2 = &d.x2_basis;
    let kernel_res = if x2.ncols() == 0 {
        0.0
    } else {
        res(a * x2, &DMatrix::zeros(n, x2.ncols()))
    };
    let fixed_res = if x2.ncols() == 0 { 0.0 } else { res(&d.p2 * x2, x2) };
    let values = [
        res(&d.p1 + &d.p2, &id),
        res(&d.q1 + &d.q2, &id),
        res(&d.p1 * &d.p1, &d.p1),
        res(&d.p2 * &d.p2, &d.p2),
        res(&d.q1 * &d.q1, &d.q1),
        res(&d.q2 * &d.q2, &d.q2),
        res(&d.p1 * &d.p2, &zero),
        res(a * &d.p1, a),
        res(&d.q1 * a, a),
        res(a * &d.p2, &zero),
        res(&d.q2 * a, &zero),
        res(b * &d.p1, &(&d.q1 * b)),
        res(b * &d.p2, &(&d.q2 * b)),
        res(a + b * &d.p2, &d.g),
        res(&d.g * &d.g_inv, &id),
        res(&d.g_inv * a * &d.p1, &d.p1),
        res(&d.g_inv * b * &d.p2, &d.p2),
        res(a * &d.g_inv * &d.q1, &d.q1),
        res(b * &d.g_inv * &d.q2, &d.q2),
        kernel_res,
        fixed_res,
    ];
    let entries = IDENTITY_NAMES
        .iter()
        .zip(values)
        .map(|(name, v)| (name.to_string(), v))
        .collect();
    ValidationReport { entries, tol }
}
