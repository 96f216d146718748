//! The nonlinear two-pole circuit and small synthetic test problems.
//!
//! Circuit state `x = (I_L, U_C, I)`:
//!
//! ```text
//! A = diag(L, C, 0)    B = | 0 1  r |    f = | e(t) − φ0(x1) − φ(x3) |
//!                          | 0 g −1 |        | −h(x2)                 |
//!                          | 0 1  r |        | ψ(x1 − x3) − φ(x3)     |
//! ```
//!
//! Parameters are stored in SI units (H, F, Ω, S). The presets integrate in
//! µH, µF and µs, so `L` and `C` are multiplied by 10⁶ when the DAE is built
//! and time is read in microseconds. This keeps the tiny SI values of `L`
//! and `C` from making the explicit z-update unstable.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dae_model::{JacFn, RhsFn, SemilinearDae};
use crate::integrators::Mesh;
use crate::pencil::MatrixPencil;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelLibraryError {
    #[error("circuit parameter {name} must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("unknown preset id {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    pub l_ind: f64,
    pub c_cap: f64,
    pub r_res: f64,
    pub g_cond: f64,
}

impl CircuitParams {
    pub fn new(l_ind: f64, c_cap: f64, r_res: f64, g_cond: f64) -> Result<Self, ModelLibraryError> {
        for (name, value) in [("L", l_ind), ("C", c_cap), ("r", r_res), ("g", g_cond)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelLibraryError::InvalidParameter { name, value });
            }
        }
        Ok(Self { l_ind, c_cap, r_res, g_cond })
    }

    /// Inductance and capacitance in µH and µF, for time measured in µs.
    pub fn in_micro_units(&self) -> Self {
        Self { l_ind: self.l_ind * 1e6, c_cap: self.c_cap * 1e6, ..*self }
    }

    pub fn pencil(&self) -> MatrixPencil {
        let (l, c, r, g) = (self.l_ind, self.c_cap, self.r_res, self.g_cond);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![l, c, 0.0]));
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, r, 0.0, g, -1.0, 0.0, 1.0, r]);
        MatrixPencil::new(a, b).expect("positive finite parameters give a valid pencil")
    }
}

/// Scalar nonlinear resistance or conductance.
#[derive(Clone)]
pub enum Nonlinearity {
    /// `coef · x^(2k−1)`
    OddPower { coef: f64, k: u32 },
    /// `coef · sin x`
    Sine { coef: f64 },
    /// `−x²`
    NegSquare,
    /// `x²`
    Square,
    Custom { value: ScalarFn, derivative: ScalarFn },
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OddPower { coef, k } => write!(f, "OddPower({coef}·x^{})", 2 * k - 1),
            Self::Sine { coef } => write!(f, "Sine({coef}·sin x)"),
            Self::NegSquare => f.write_str("NegSquare"),
            Self::Square => f.write_str("Square"),
            Self::Custom { .. } => f.write_str("Custom"),
        }
    }
}

impl Nonlinearity {
    pub fn cubic() -> Self {
        Self::OddPower { coef: 1.0, k: 2 }
    }

    pub fn sine() -> Self {
        Self::Sine { coef: 1.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::OddPower { coef, k } => coef * x.powi(2 * *k as i32 - 1),
            Self::Sine { coef } => coef * x.sin(),
            Self::NegSquare => -x * x,
            Self::Square => x * x,
            Self::Custom { value, .. } => value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::OddPower { coef, k } => {
                let p = 2 * *k as i32 - 1;
                if p == 1 { *coef } else { coef * p as f64 * x.powi(p - 1) }
            }
            Self::Sine { coef } => coef * x.cos(),
            Self::NegSquare => -2.0 * x,
            Self::Square => 2.0 * x,
            Self::Custom { derivative, .. } => derivative(x),
        }
    }
}

/// Input voltage `e(t)`.
#[derive(Clone)]
pub enum VoltageWaveform {
    /// `β·sin(ωt + θ)`
    Sinusoidal { beta: f64, omega: f64, theta: f64 },
    /// `β·(t + α)^(−n)`
    PowerDecay { beta: f64, alpha: f64, n: i32 },
    /// `β·(t + α)^n`
    Polynomial { beta: f64, alpha: f64, n: i32 },
    /// `β·e^(−αt)`
    Exponential { beta: f64, alpha: f64 },
    /// `β·e^(−(t − α)²/σ²)`
    Gaussian { beta: f64, alpha: f64, sigma: f64 },
    /// Period 100: `50 − |t − 50 − 100k|` on `[100k, 100k + 100]`.
    Triangular,
    /// Period 5: `t − 5k` on `[5k, 5k + 4]`, `20(k + 1) − 4t` on `[5k + 4, 5k + 5]`.
    Sawtooth,
    Custom { func: ScalarFn, smooth: bool },
}

impl fmt::Debug for VoltageWaveform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sinusoidal { beta, omega, theta } => write!(f, "Sinusoidal({beta}·sin({omega}t + {theta}))"),
            Self::PowerDecay { beta, alpha, n } => write!(f, "PowerDecay({beta}·(t + {alpha})^-{n})"),
            Self::Polynomial { beta, alpha, n } => write!(f, "Polynomial({beta}·(t + {alpha})^{n})"),
            Self::Exponential { beta, alpha } => write!(f, "Exponential({beta}·exp(-{alpha}t))"),
            Self::Gaussian { beta, alpha, sigma } => write!(f, "Gaussian({beta}, {alpha}, {sigma})"),
            Self::Triangular => f.write_str("Triangular"),
            Self::Sawtooth => f.write_str("Sawtooth"),
            Self::Custom { smooth, .. } => write!(f, "Custom(smooth = {smooth})"),
        }
    }
}

pub const TRIANGULAR_PERIOD: f64 = 100.0;
pub const SAWTOOTH_PERIOD: f64 = 5.0;

impl VoltageWaveform {
    pub fn sine() -> Self {
        Self::Sinusoidal { beta: 1.0, omega: 1.0, theta: 0.0 }
    }

    /// Triangular and sawtooth inputs have kinks, so the methods are only
    /// expected to converge, not at their nominal order.
    pub fn is_smooth(&self) -> bool {
        match self {
            Self::Triangular | Self::Sawtooth => false,
            Self::Custom { smooth, .. } => *smooth,
            _ => true,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            Self::Triangular => Some(TRIANGULAR_PERIOD),
            Self::Sawtooth => Some(SAWTOOTH_PERIOD),
            Self::Sinusoidal { omega, .. } if *omega != 0.0 => Some(2.0 * PI / omega.abs()),
            _ => None,
        }
    }
}

/// Evaluate `e(t)`. Periodic shapes reduce `t` with an exact floating-point
/// remainder; at segment boundaries the left-segment formula is used (both
/// formulas agree there).
pub fn eval_waveform(w: &VoltageWaveform, t: f64) -> f64 {
    match w {
        VoltageWaveform::Sinusoidal { beta, omega, theta } => beta * (omega * t + theta).sin(),
        VoltageWaveform::PowerDecay { beta, alpha, n } => beta * (t + alpha).powi(-n),
        VoltageWaveform::Polynomial { beta, alpha, n } => beta * (t + alpha).powi(*n),
        VoltageWaveform::Exponential { beta, alpha } => beta * (-alpha * t).exp(),
        VoltageWaveform::Gaussian { beta, alpha, sigma } => {
            let d = t - alpha;
            beta * (-(d * d) / (sigma * sigma)).exp()
        }
        VoltageWaveform::Triangular => {
            let s = t.rem_euclid(TRIANGULAR_PERIOD);
            50.0 - (s - 50.0).abs()
        }
        VoltageWaveform::Sawtooth => {
            let s = t.rem_euclid(SAWTOOTH_PERIOD);
            if s <= 4.0 { s } else { 20.0 - 4.0 * s }
        }
        VoltageWaveform::Custom { func, .. } => func(t),
    }
}

/// Everything needed to build one circuit DAE.
#[derive(Debug, Clone)]
pub struct CircuitModel {
    pub params: CircuitParams,
    pub phi0: Nonlinearity,
    pub phi: Nonlinearity,
    pub psi: Nonlinearity,
    pub h_cond: Nonlinearity,
    pub e: VoltageWaveform,
}

impl CircuitModel {
    pub fn build(&self) -> SemilinearDae {
        build_circuit_dae(
            &self.params,
            &self.phi0,
            &self.phi,
            &self.psi,
            &self.h_cond,
            &self.e,
        )
    }
}

/// Assemble the circuit DAE with an analytic Jacobian. `params` are used as
/// given; call [`CircuitParams::in_micro_units`] first for the µs time scale.
pub fn build_circuit_dae(
    params: &CircuitParams,
    phi0: &Nonlinearity,
    phi: &Nonlinearity,
    psi: &Nonlinearity,
    h_cond: &Nonlinearity,
    e: &VoltageWaveform,
) -> SemilinearDae {
    let pencil = params.pencil();
    let (phi0_f, phi_f, psi_f, h_f, e_f) = (phi0.clone(), phi.clone(), psi.clone(), h_cond.clone(), e.clone());
    let rhs: RhsFn = Arc::new(move |t, x| {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let phi3 = phi_f.eval(x3);
        DVector::from_vec(vec![
            eval_waveform(&e_f, t) - phi0_f.eval(x1) - phi3,
            -h_f.eval(x2),
            psi_f.eval(x1 - x3) - phi3,
        ])
    });
    let (phi0_j, phi_j, psi_j, h_j) = (phi0.clone(), phi.clone(), psi.clone(), h_cond.clone());
    let jac: JacFn = Arc::new(move |_t, x| {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let dphi = phi_j.derivative(x3);
        let dpsi = psi_j.derivative(x1 - x3);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -phi0_j.derivative(x1), 0.0, -dphi,
                0.0, -h_j.derivative(x2), 0.0,
                dpsi, 0.0, -dpsi - dphi,
            ],
        )
    });
    SemilinearDae::new(pencil, rhs).with_jacobian(jac)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyCheck {
    pub consistent: bool,
    /// `x2 + r·x3 − ψ(x1 − x3) + φ(x3)`
    pub residual: f64,
}

/// Scalar form of the circuit constraint `x2 + r·x3 = ψ(x1 − x3) − φ(x3)`.
pub fn circuit_consistency_check(
    params: &CircuitParams,
    psi: &Nonlinearity,
    phi: &Nonlinearity,
    x0: &DVector<f64>,
) -> ConsistencyCheck {
    let (x1, x2, x3) = (x0[0], x0[1], x0[2]);
    let r = params.r_res;
    let residual = x2 + r * x3 - psi.eval(x1 - x3) + phi.eval(x3);
    let consistent = residual.abs() <= 1e-10 * (1.0 + x2.abs() + r * x3.abs());
    ConsistencyCheck { consistent, residual }
}

/// A named, ready-to-run problem.
#[derive(Debug, Clone)]
pub struct Preset {
    pub id: &'static str,
    pub description: &'static str,
    pub dae: SemilinearDae,
    /// Circuit definition in SI units, when the preset is a circuit.
    pub circuit: Option<CircuitModel>,
    pub x0: DVector<f64>,
    pub mesh: Mesh,
    /// False when the input has kinks and order studies do not apply.
    pub smooth: bool,
}

pub const PRESET_IDS: [&str; 10] = [
    "sec5_cubic",
    "sec5_r4_g01",
    "sec6_sine_powerdecay",
    "sec6_polynomial",
    "sec6_triangular",
    "sec6_sawtooth",
    "sec6_blowup",
    "lagrange_unstable",
    "ode_decay",
    "index1_linear",
];

fn cubic_set(params: CircuitParams, e: VoltageWaveform) -> CircuitModel {
    CircuitModel {
        params,
        phi0: Nonlinearity::cubic(),
        phi: Nonlinearity::cubic(),
        psi: Nonlinearity::cubic(),
        h_cond: Nonlinearity::cubic(),
        e,
    }
}

fn circuit_preset(
    id: &'static str,
    description: &'static str,
    model: CircuitModel,
    x0: [f64; 3],
    t_end: f64,
    h: f64,
) -> Preset {
    let micro = CircuitModel { params: model.params.in_micro_units(), ..model.clone() };
    let smooth = model.e.is_smooth();
    Preset {
        id,
        description,
        dae: micro.build(),
        circuit: Some(model),
        x0: DVector::from_vec(x0.to_vec()),
        mesh: Mesh::with_step(0.0, t_end, h).expect("preset mesh"),
        smooth,
    }
}

fn params(l: f64, c: f64, r: f64, g: f64) -> CircuitParams {
    CircuitParams::new(l, c, r, g).expect("preset parameters are positive")
}

/// Lagrange-unstable parameter set; the solution blows up in finite time.
pub fn lagrange_unstable() -> CircuitModel {
    CircuitModel {
        params: params(5e-6, 5e-7, 2.0, 0.2),
        phi0: Nonlinearity::NegSquare,
        phi: Nonlinearity::cubic(),
        psi: Nonlinearity::cubic(),
        h_cond: Nonlinearity::Square,
        e: VoltageWaveform::Sinusoidal { beta: 2.0, omega: 1.0, theta: 0.0 },
    }
}

pub fn preset(id: &str) -> Result<Preset, ModelLibraryError> {
    let p = match id {
        "sec5_cubic" => circuit_preset(
            "sec5_cubic",
            "cubic nonlinearities, L = 5e-4, C = 5e-7, r = 2, g = 0.2, e = sin t",
            cubic_set(params(5e-4, 5e-7, 2.0, 0.2), VoltageWaveform::sine()),
            [0.0; 3],
            10.0,
            1e-3,
        ),
        "sec5_r4_g01" => circuit_preset(
            "sec5_r4_g01",
            "as sec5_cubic with r = 4, g = 0.1",
            cubic_set(params(5e-4, 5e-7, 4.0, 0.1), VoltageWaveform::sine()),
            [0.0; 3],
            10.0,
            1e-3,
        ),
        "sec6_sine_powerdecay" => circuit_preset(
            "sec6_sine_powerdecay",
            "φ0 = x³, φ = ψ = h = sin, e = (2t + 10)^-2, x0 = (10, -10, 5)",
            CircuitModel {
                params: params(5e-4, 5e-7, 2.0, 0.2),
                phi0: Nonlinearity::cubic(),
                phi: Nonlinearity::sine(),
                psi: Nonlinearity::sine(),
                h_cond: Nonlinearity::sine(),
                e: VoltageWaveform::PowerDecay { beta: 0.25, alpha: 5.0, n: 2 },
            },
            [10.0, -10.0, 5.0],
            100.0,
            1e-3,
        ),
        "sec6_polynomial" => circuit_preset(
            "sec6_polynomial",
            "cubic nonlinearities, L = 1e-3, C = 5e-7, r = 2, g = 0.3, e = t²",
            cubic_set(
                params(1e-3, 5e-7, 2.0, 0.3),
                VoltageWaveform::Polynomial { beta: 1.0, alpha: 0.0, n: 2 },
            ),
            [0.0; 3],
            100.0,
            1e-3,
        ),
        "sec6_triangular" => circuit_preset(
            "sec6_triangular",
            "cubic nonlinearities, triangular input of period 100",
            cubic_set(params(5e-4, 5e-7, 2.0, 0.2), VoltageWaveform::Triangular),
            [0.0; 3],
            300.0,
            1e-3,
        ),
        "sec6_sawtooth" => circuit_preset(
            "sec6_sawtooth",
            "cubic nonlinearities, L = 1e-5, C = 2e-7, r = 55, g = 0.015, sawtooth input of period 5",
            cubic_set(params(1e-5, 2e-7, 55.0, 0.015), VoltageWaveform::Sawtooth),
            [0.0; 3],
            50.0,
            1e-3,
        ),
        "sec6_blowup" | "lagrange_unstable" => circuit_preset(
            if id == "sec6_blowup" { "sec6_blowup" } else { "lagrange_unstable" },
            "φ0 = -x², h = x², L = 5e-6, e = 2 sin t, x0 = (1, -6.5, 1.5); blows up in finite time",
            lagrange_unstable(),
            [1.0, -6.5, 1.5],
            10.0,
            1e-3,
        ),
        "ode_decay" => {
            let pencil = MatrixPencil::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).expect("valid");
            Preset {
                id: "ode_decay",
                description: "index-0 scalar problem x' + x = 0, x(0) = 1",
                dae: SemilinearDae::affine(pencil, DVector::zeros(1), DMatrix::zeros(1, 1)).expect("valid"),
                circuit: None,
                x0: DVector::from_element(1, 1.0),
                mesh: Mesh::new(0.0, 1.0, 10).expect("valid"),
                smooth: true,
            }
        }
        "index1_linear" => Preset {
            id: "index1_linear",
            description: "index-1 problem x1' + x1 = sin t, x2 = x1",
            dae: index1_linear(),
            circuit: None,
            x0: DVector::zeros(2),
            mesh: Mesh::new(0.0, 1.0, 100).expect("valid"),
            smooth: true,
        },
        other => return Err(ModelLibraryError::UnknownPreset(other.to_string())),
    };
    Ok(p)
}

/// `x1' + x1 = sin t`, `x2 − x1 = 0`; exact solution from `x(0) = 0` is
/// `x1 = x2 = (sin t − cos t + e^{−t})/2`.
pub fn index1_linear() -> SemilinearDae {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 1.0]);
    let pencil = MatrixPencil::new(a, b).expect("valid");
    let rhs: RhsFn = Arc::new(|t, _x| DVector::from_vec(vec![t.sin(), 0.0]));
    let jac: JacFn = Arc::new(|_t, _x| DMatrix::zeros(2, 2));
    SemilinearDae::new(pencil, rhs).with_jacobian(jac)
}

/// Every nonlinearity family shipped with the presets.
pub fn shipped_nonlinearities() -> Vec<(&'static str, Nonlinearity)> {
    vec![
        ("cubic", Nonlinearity::cubic()),
        ("odd_power_k1", Nonlinearity::OddPower { coef: 2.0, k: 1 }),
        ("odd_power_k3", Nonlinearity::OddPower { coef: 0.5, k: 3 }),
        ("sine", Nonlinearity::sine()),
        ("neg_square", Nonlinearity::NegSquare),
        ("square", Nonlinearity::Square),
    ]
}
