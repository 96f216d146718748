//! JSON experiment configuration. Unknown keys are rejected and every field
//! is checked before anything is computed.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::dae_model::SemilinearDae;
use crate::integrators::{Corrector, Mesh, Method, SolverConfig};
use crate::linalg::from_rows;
use crate::models::{preset, Preset};
use crate::pencil::{MatrixPencil, PencilError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Field { field: &'static str, message: String },
    #[error(transparent)]
    Pencil(#[from] PencilError),
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Preset(String),
    Inline(InlineModel),
}

/// `A d/dt x + B x = c + M x`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub f: LinearForcing,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearForcing {
    pub constant: Option<Vec<f64>>,
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    Explicit { x0: Vec<f64> },
    /// Keep `z0` and solve the constraint for `u0`.
    Z0WithConsistentU { z0: Vec<f64>, u_guess: Option<Vec<f64>> },
    #[default]
    PresetDefault,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorrectorSpec {
    #[default]
    SingleStep,
    IterateToTol { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trajectory_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub refinements: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Optional for presets, which carry a default mesh.
    pub mesh: Option<MeshSpec>,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub corrector: CorrectorSpec,
    pub blow_up_threshold: Option<f64>,
    #[serde(default)]
    pub outputs: OutputSpec,
    pub study: Option<StudySpec>,
}

fn default_method() -> Method {
    Method::Method1
}

/// How `x0` is obtained once the model is known.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Explicit(DVector<f64>),
    Consistent { z0: DVector<f64>, u_guess: DVector<f64> },
}

/// A checked configuration with the model built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model_name: String,
    pub dae: SemilinearDae,
    pub mesh: Mesh,
    pub initial_state: InitialState,
    pub solver: SolverConfig,
    /// False for inputs with kinks.
    pub smooth: bool,
    pub study: Option<StudySpec>,
    pub outputs: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    /// Field-level checks that need no model.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(m) = &self.mesh {
            if m.n_steps == 0 {
                return Err(field("mesh.n_steps", "must be at least 1"));
            }
            if !m.t0.is_finite() {
                return Err(field("mesh.t0", "must be finite"));
            }
            if !(m.t_end.is_finite() && m.t_end > m.t0) {
                return Err(field("mesh.t_end", "must be finite and greater than mesh.t0"));
            }
        }
        if let CorrectorSpec::IterateToTol { tol, max_iter } = self.corrector {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(field("corrector.tol", "must be positive"));
            }
            if max_iter == 0 {
                return Err(field("corrector.max_iter", "must be at least 1"));
            }
        }
        if let Some(t) = self.blow_up_threshold {
            if !(t > 0.0) {
                return Err(field("blow_up_threshold", "must be positive"));
            }
        }
        if let Some(s) = self.study {
            if s.refinements < 3 {
                return Err(field("study.refinements", "must be at least 3"));
            }
        }
        if let ModelSpec::Inline(_) = self.model {
            if self.mesh.is_none() {
                return Err(field("mesh", "required for inline models"));
            }
            if self.initial_state == InitialStateSpec::PresetDefault {
                return Err(field("initial_state", "inline models need an explicit or z0_with_consistent_u state"));
            }
        }
        Ok(())
    }

    /// Validate, then build the model and solver settings.
    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        self.validate()?;
        let (model_name, dae, default_mesh, default_x0, smooth) = match &self.model {
            ModelSpec::Preset(id) => {
                let Preset { dae, mesh, x0, smooth, .. } =
                    preset(id).map_err(|e| field("model.preset", e.to_string()))?;
                (id.clone(), dae, Some(mesh), Some(x0), smooth)
            }
            ModelSpec::Inline(m) => ("inline".to_string(), inline_dae(m)?, None, None, true),
        };
        let n = dae.dim();
        let mesh = match (self.mesh, default_mesh) {
            (Some(m), _) => Mesh::new(m.t0, m.t_end, m.n_steps).map_err(|e| field("mesh", e.to_string()))?,
            (None, Some(m)) => m,
            (None, None) => return Err(field("mesh", "required for inline models")),
        };
        let vector = |name: &'static str, v: &[f64]| -> Result<DVector<f64>, ConfigError> {
            if v.len() != n {
                return Err(field(name, format!("expected {n} entries, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(field(name, "entries must be finite"));
            }
            Ok(DVector::from_column_slice(v))
        };
        let initial_state = match &self.initial_state {
            InitialStateSpec::Explicit { x0 } => InitialState::Explicit(vector("initial_state.x0", x0)?),
            InitialStateSpec::Z0WithConsistentU { z0, u_guess } => InitialState::Consistent {
                z0: vector("initial_state.z0", z0)?,
                u_guess: match u_guess {
                    Some(u) => vector("initial_state.u_guess", u)?,
                    None => DVector::zeros(n),
                },
            },
            InitialStateSpec::PresetDefault => InitialState::Explicit(
                default_x0.ok_or_else(|| field("initial_state", "no preset default for inline models"))?,
            ),
        };
        let mut solver = SolverConfig::new(self.method).with_corrector(match self.corrector {
            CorrectorSpec::SingleStep => Corrector::SingleStep,
            CorrectorSpec::IterateToTol { tol, max_iter } => Corrector::IterateToTol { tol, max_iter },
        });
        if let Some(t) = self.blow_up_threshold {
            solver = solver.with_blow_up_threshold(t);
        }
        Ok(Experiment {
            model_name,
            dae,
            mesh,
            initial_state,
            solver,
            smooth,
            study: self.study,
            outputs: self.outputs.clone(),
        })
    }
}

fn matrix(name: &'static str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, ConfigError> {
    let m = from_rows(rows).ok_or_else(|| field(name, "rows must all have the same length"))?;
    if m.nrows() != n || m.ncols() != n {
        return Err(field(name, format!("expected a {n}×{n} matrix, got {}×{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(field(name, "entries must be finite"));
    }
    Ok(m)
}

fn inline_dae(m: &InlineModel) -> Result<SemilinearDae, ConfigError> {
    let n = m.a.len();
    if n == 0 {
        return Err(field("model.inline.a", "must not be empty"));
    }
    let a = matrix("model.inline.a", &m.a, n)?;
    let b = matrix("model.inline.b", &m.b, n)?;
    let c = match &m.f.constant {
        Some(c) if c.len() != n => {
            return Err(field("model.inline.f.constant", format!("expected {n} entries, got {}", c.len())))
        }
        Some(c) => DVector::from_column_slice(c),
        None => DVector::zeros(n),
    };
    let fm = match &m.f.matrix {
        Some(rows) => matrix("model.inline.f.matrix", rows, n)?,
        None => DMatrix::zeros(n, n),
    };
    let pencil = MatrixPencil::new(a, b)?;
    SemilinearDae::affine(pencil, c, fm).map_err(|e| field("model.inline.f", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset_config() {
        let c = ExperimentConfig::from_json(r#"{"model": {"preset": "sec5_cubic"}}"#).unwrap();
        let e = c.resolve().unwrap();
        assert_eq!(e.solver.method, Method::Method1);
        assert_eq!(e.mesh.n_steps(), 10_000);
        assert_eq!(e.initial_state, InitialState::Explicit(DVector::zeros(3)));
        assert!(e.smooth);
    }

    #[test]
    fn full_config_round_trip() {
        let text = r#"{
            "model": {"preset": "sec6_triangular"},
            "method": "method2",
            "mesh": {"t0": 0.0, "t_end": 2.0, "n_steps": 200},
            "initial_state": {"mode": "z0_with_consistent_u", "z0": [0.0, 0.0, 0.0]},
            "corrector": {"mode": "iterate_to_tol", "tol": 1e-12, "max_iter": 5},
            "blow_up_threshold": 1e3,
            "outputs": {"trajectory_csv": "t.csv", "summary_json": "s.json"},
            "study": {"refinements": 3}
        }"#;
        let e = ExperimentConfig::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(e.solver.method, Method::Method2);
        assert_eq!(e.solver.blow_up_threshold, 1e3);
        assert_eq!(e.solver.corrector, Corrector::IterateToTol { tol: 1e-12, max_iter: 5 });
        assert!(!e.smooth);
        assert_eq!(e.outputs.trajectory_csv.as_deref(), Some(Path::new("t.csv")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"model": {"preset": "sec5_cubic"}, "extra": 1}"#,
            r#"{"model": {"preset": "sec5_cubic"}, "mesh": {"t_end": 1, "n_steps": 2, "h": 0.5}}"#,
            r#"{"model": {"preset": "sec5_cubic"}, "corrector": {"mode": "newton"}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(ConfigError::Parse(_))), "{text}");
        }
    }

    #[test]
    fn field_errors_name_the_field() {
        let cases = [
            (r#"{"model": {"preset": "sec5_cubic"}, "mesh": {"t_end": 1, "n_steps": 0}}"#, "mesh.n_steps"),
            (r#"{"model": {"preset": "nope"}}"#, "model.preset"),
            (r#"{"model": {"preset": "sec5_cubic"}, "study": {"refinements": 2}}"#, "study.refinements"),
            (r#"{"model": {"preset": "sec5_cubic"}, "initial_state": {"mode": "explicit", "x0": [1]}}"#, "initial_state.x0"),
            (
                r#"{"model": {"inline": {"a": [[1, 0], [0]], "b": [[1, 0], [0, 1]]}}, "mesh": {"t_end": 1, "n_steps": 2},
                   "initial_state": {"mode": "explicit", "x0": [0, 0]}}"#,
                "model.inline.a",
            ),
            (r#"{"model": {"inline": {"a": [[1]], "b": [[1]]}}, "initial_state": {"mode": "explicit", "x0": [0]}}"#, "mesh"),
        ];
        for (text, name) in cases {
            match ExperimentConfig::from_json(text).unwrap().resolve() {
                Err(ConfigError::Field { field, .. }) => assert_eq!(field, name, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn inline_affine_model() {
        let text = r#"{
            "model": {"inline": {"a": [[1, 0], [0, 0]], "b": [[1, 0], [-1, 1]], "f": {"constant": [1, 0]}}},
            "mesh": {"t_end": 1, "n_steps": 10},
            "initial_state": {"mode": "explicit", "x0": [0, 0]}
        }"#;
        let e = ExperimentConfig::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(e.dae.dim(), 2);
        assert_eq!(e.dae.rhs(0.0, &DVector::zeros(2)), DVector::from_vec(vec![1.0, 0.0]));
    }
}
