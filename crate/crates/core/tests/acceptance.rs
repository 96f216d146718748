//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. All tolerances are pinned below.

mod common;

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semidae::dae_model::{consistent_initialize, JacFn, RhsFn, SemilinearDae};
use semidae::diagnostics::{
    classify_long_run, empirical_order, log_log_slope, windowed_deviation, LongRunClass, Reference,
};
use semidae::integrators::{solve, Corrector, Mesh, Method, SolverConfig, Trajectory, TrajectoryStatus};
use semidae::linalg::max_abs;
use semidae::models::{
    build_circuit_dae, preset, shipped_nonlinearities, CircuitParams, Nonlinearity, VoltageWaveform, PRESET_IDS,
};
use semidae::pencil::{
    classify_index, default_contour_radius, projectors_algebraic, projectors_residue, validate_decomposition,
    MatrixPencil, PencilIndex, SpectralDecomposition,
};

// Criterion 1
const IDENTITY_TOL: f64 = 1e-10;
const RESIDUE_TOL: f64 = 1e-8;
const RESIDUE_NODES: usize = 256;
const RANDOM_PENCILS: usize = 50;
const CONSTRUCTION_TOL: f64 = 1e-9;
const C1_TIME: Duration = Duration::from_secs(5);
// Criteria 2, 3
const ORDER_T_END: f64 = 1.0;
const ORDER_BASE_STEPS: usize = 100;
const ORDER_REFINEMENTS: usize = 4;
const M1_ORDER: (f64, f64) = (0.8, 1.2);
const M2_ORDER: (f64, f64) = (1.7, 2.3);
const ORDER_TIME: Duration = Duration::from_secs(30);
// Criterion 4
const EULER_STEPS: usize = 10_000;
const EULER_REL_TOL: f64 = 1e-12;
// Criterion 5
const ITER_TOL: f64 = 1e-10;
const ITER_MAX: usize = 20;
const ITER_RESIDUAL_TOL: f64 = 1e-8;
const SINGLE_STEP_MIN_SLOPE: f64 = 1.0;
/// Residuals below `ROUNDOFF_FACTOR·ε·(1+‖B‖)·max‖x‖∞` are roundoff and carry no slope.
const ROUNDOFF_FACTOR: f64 = 64.0;
// Criterion 6
const LONG_T_END: f64 = 10.0;
const WINDOW_FROM: f64 = 8.0;
const COARSE_H: f64 = 1e-3;
const FINE_H: f64 = 1e-5;
const GROWTH_FACTOR: f64 = 10.0;
const OSCILLATING_COMPONENTS: [usize; 2] = [1, 2];
// Criterion 7
const POLY_HORIZONS: [f64; 3] = [10.0, 50.0, 100.0];
const BOUNDED_MAX_NORM: f64 = 1e3;
// Criterion 8
const JAC_PROBES: usize = 100;
const JAC_TOL: f64 = 1e-6;
const JAC_BOX: f64 = 1.0;
/// About √ε; the forward-difference truncation error h·|f''|/2 stays below
/// the tolerance for the quintic family on the probe box.
const JAC_FD_STEP: f64 = 1e-8;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn decompose(p: &MatrixPencil) -> SpectralDecomposition {
    projectors_algebraic(p).expect("index ≤ 1 pencil")
}

fn check_pencil(p: &MatrixPencil) -> (f64, f64, bool) {
    let d = decompose(p);
    let tol = IDENTITY_TOL * p.residual_scale();
    let report = validate_decomposition(p, &d, tol);
    let residue = projectors_residue(p, default_contour_radius(p).unwrap(), RESIDUE_NODES).unwrap();
    let agreement = max_abs(&(&residue.p1 - &d.p1)).max(max_abs(&(&residue.q1 - &d.q1)));
    (report.max_residual() / p.residual_scale(), agreement, report.passed())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_identity = 0.0_f64;
    let mut worst_agreement = 0.0_f64;
    let mut worst_construction = 0.0_f64;
    let mut ok = true;
    let micro = CircuitParams::new(5e-4, 5e-7, 2.0, 0.2).unwrap().in_micro_units();
    let (id, agr, pass) = check_pencil(&micro.pencil());
    ok &= pass && agr <= RESIDUE_TOL && classify_index(&micro.pencil()) == PencilIndex::Index1;
    worst_identity = worst_identity.max(id);
    worst_agreement = worst_agreement.max(agr);
    for i in 0..RANDOM_PENCILS {
        let n = 2 + i % 7;
        let k = rng.random_range(0..n);
        let kp = common::known_pencil(&mut rng, n, k);
        let expected = if k == 0 { PencilIndex::Index0 } else { PencilIndex::Index1 };
        ok &= classify_index(&kp.pencil) == expected;
        let (id, agr, pass) = check_pencil(&kp.pencil);
        let d = decompose(&kp.pencil);
        let construction = max_abs(&(&d.p1 - &kp.p1)).max(max_abs(&(&d.q1 - &kp.q1)));
        ok &= pass && agr <= RESIDUE_TOL && construction <= CONSTRUCTION_TOL;
        worst_identity = worst_identity.max(id);
        worst_agreement = worst_agreement.max(agr);
        worst_construction = worst_construction.max(construction);
    }
    let elapsed = start.elapsed();
    ok &= elapsed < C1_TIME;
    outcome(
        ok,
        format!(
            "circuit + {RANDOM_PENCILS} random pencils: max identity residual {worst_identity:.2e}·(1+‖A‖+‖B‖) \
             (tol {IDENTITY_TOL:e}), residue gap {worst_agreement:.2e} (tol {RESIDUE_TOL:e}), \
             construction gap {worst_construction:.2e} (tol {CONSTRUCTION_TOL:e}), {elapsed:.2?} (limit {C1_TIME:?})"
        ),
    )
}

fn order_criterion(method: Method, range: (f64, f64)) -> Outcome {
    let start = Instant::now();
    let p = preset("sec5_cubic").unwrap();
    let d = decompose(p.dae.pencil());
    let mesh = Mesh::new(0.0, ORDER_T_END, ORDER_BASE_STEPS).unwrap();
    let est = empirical_order(
        &p.dae,
        &d,
        &SolverConfig::new(method),
        &mesh,
        &p.x0,
        ORDER_REFINEMENTS,
        &Reference::FinestSelf,
    );
    let elapsed = start.elapsed();
    match est {
        Ok(est) => {
            let pz = est.z.asymptotic_order;
            let pu = est.u.as_ref().map_or(f64::NAN, |u| u.asymptotic_order);
            let inside = |v: f64| v >= range.0 && v <= range.1;
            outcome(
                inside(pz) && inside(pu) && elapsed < ORDER_TIME,
                format!(
                    "sec5_cubic {method:?}: order z {pz:.3}, u {pu:.3} (range [{}, {}]), {elapsed:.2?} (limit {ORDER_TIME:?})",
                    range.0, range.1
                ),
            )
        }
        Err(e) => outcome(false, format!("sec5_cubic {method:?}: {e}")),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 3;
    let a = common::well_conditioned(&mut rng, n);
    let b = DMatrix::identity(n, n) * 0.5 + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
    let f = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(3, |i, _| 0.3 * (t + i as f64).sin() - 0.1 * x[i].powi(3))
    };
    let rhs: RhsFn = Arc::new(move |t, x| f(t, x));
    let jac: JacFn = Arc::new(|_t, x| DMatrix::from_fn(3, 3, |i, j| if i == j { -0.3 * x[i] * x[i] } else { 0.0 }));
    let pencil = MatrixPencil::new(a.clone(), b.clone()).unwrap();
    let dae = SemilinearDae::new(pencil, rhs).with_jacobian(jac);
    let d = decompose(dae.pencil());
    let h = 1e-3;
    let mesh = Mesh::new(0.0, h * EULER_STEPS as f64, EULER_STEPS).unwrap();
    let x0 = DVector::from_vec(vec![0.5, -0.2, 0.1]);
    let traj = solve(&dae, &d, &mesh, &x0, &SolverConfig::new(Method::Method1)).unwrap();

    // explicit Euler on x' = A⁻¹(f − Bx)
    let lu = a.lu();
    let mut x = x0;
    let mut worst = 0.0_f64;
    for i in 0..EULER_STEPS {
        let t = mesh.node(i);
        x = &x + lu.solve(&(f(t, &x) - &b * &x)).unwrap() * h;
        let got = traj.state_vector(i + 1);
        worst = worst.max((got - &x).norm() / x.norm());
    }
    let ok = traj.status == TrajectoryStatus::Completed && traj.len() == EULER_STEPS + 1 && worst <= EULER_REL_TOL;
    outcome(ok, format!("index-0 3×3 problem, {EULER_STEPS} steps: max relative gap {worst:.2e} (tol {EULER_REL_TOL:e})"))
}

fn criterion_5() -> Outcome {
    let iterate = Corrector::IterateToTol { tol: ITER_TOL, max_iter: ITER_MAX };
    let mut worst_ratio = 0.0_f64;
    let mut accepted = 0;
    let mut runs: Vec<(&str, Method, Option<f64>)> = PRESET_IDS.iter().map(|id| (*id, Method::Method1, None)).collect();
    runs.push(("sec5_cubic", Method::Method2, Some(1.0)));
    runs.push(("sec6_sine_powerdecay", Method::Method2, Some(1.0)));
    runs.push(("index1_linear", Method::Method2, None));
    for (id, method, t_end) in runs {
        let p = preset(id).unwrap();
        let d = decompose(p.dae.pencil());
        let mesh = match t_end {
            Some(t) => Mesh::with_step(0.0, t, p.mesh.h()).unwrap(),
            None => p.mesh,
        };
        let tr = solve(&p.dae, &d, &mesh, &p.x0, &SolverConfig::new(method).with_corrector(iterate)).unwrap();
        if tr.status != TrajectoryStatus::Completed {
            continue;
        }
        accepted += 1;
        let bound = ITER_RESIDUAL_TOL * (1.0 + p.dae.pencil().norm_b());
        worst_ratio = worst_ratio.max(tr.max_residual() / bound);
    }

    // ladders: the circuit at rest, the circuit from z0 = (1, 0, 0) with a
    // consistent u0, and the sine/power-decay set
    let mut ladders = Vec::new();
    for id in ["sec5_cubic", "sec6_sine_powerdecay"] {
        let p = preset(id).unwrap();
        ladders.push((id, p.x0.clone(), p));
    }
    let p = preset("sec5_cubic").unwrap();
    let d = decompose(p.dae.pencil());
    let z0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let u0 = consistent_initialize(&p.dae, &d, 0.0, &z0, &DVector::zeros(3), 1e-14, 50).unwrap();
    ladders.push(("sec5_cubic from z0 = (1, 0, 0)", z0 + u0, p));

    let mut slopes = Vec::new();
    let mut skipped = Vec::new();
    for (name, x0, p) in &ladders {
        let d = decompose(p.dae.pencil());
        let mut hs = Vec::new();
        let mut res = Vec::new();
        let mut floor = 0.0_f64;
        for k in 0..=ORDER_REFINEMENTS {
            let mesh = Mesh::new(0.0, ORDER_T_END, ORDER_BASE_STEPS << k).unwrap();
            let tr = solve(&p.dae, &d, &mesh, x0, &SolverConfig::new(Method::Method1)).unwrap();
            let scale = (0..tr.len()).flat_map(|i| tr.state(i).to_vec()).fold(0.0_f64, |a, v| a.max(v.abs()));
            floor = floor.max(ROUNDOFF_FACTOR * f64::EPSILON * (1.0 + p.dae.pencil().norm_b()) * scale);
            hs.push(mesh.h());
            res.push(tr.max_residual());
        }
        if res.iter().all(|r| *r > floor) {
            slopes.push((*name, log_log_slope(&hs, &res)));
        } else {
            let top = res.iter().fold(0.0_f64, |a, v| a.max(*v));
            skipped.push(format!("{name} at roundoff (max {top:.1e} ≤ floor {floor:.1e})"));
        }
    }
    let ok = accepted >= 10
        && worst_ratio <= 1.0
        && slopes.len() >= 2
        && slopes.iter().all(|(_, s)| *s >= SINGLE_STEP_MIN_SLOPE);
    outcome(
        ok,
        format!(
            "IterateToTol({ITER_TOL:e}): {accepted} accepted runs, max residual {worst_ratio:.2e}×{ITER_RESIDUAL_TOL:e}(1+‖B‖); \
             SingleStep residual slopes {slopes:.2?} (min {SINGLE_STEP_MIN_SLOPE}); skipped: {skipped:?}"
        ),
    )
}

fn run(p: &semidae::models::Preset, d: &SpectralDecomposition, method: Method, h: f64, t_end: f64) -> (Trajectory, Mesh) {
    let mesh = Mesh::with_step(0.0, t_end, h).unwrap();
    let stride = (COARSE_H / h).round() as usize;
    let tr = solve(&p.dae, d, &mesh, &p.x0, &SolverConfig::new(method).with_output_stride(stride)).unwrap();
    (tr, mesh)
}

fn criterion_6() -> Outcome {
    let p = preset("sec5_cubic").unwrap();
    let d = decompose(p.dae.pencil());
    let coarse = Mesh::with_step(0.0, LONG_T_END, COARSE_H).unwrap();
    let (reference, _) = run(&p, &d, Method::Method1, FINE_H, LONG_T_END);
    let (m1, _) = run(&p, &d, Method::Method1, COARSE_H, LONG_T_END);
    let (m2, _) = run(&p, &d, Method::Method2, COARSE_H, LONG_T_END);
    let (m2_fine, _) = run(&p, &d, Method::Method2, FINE_H, LONG_T_END);
    let amp = |tr: &Trajectory| {
        windowed_deviation(tr, &reference, &coarse, &OSCILLATING_COMPONENTS, WINDOW_FROM, LONG_T_END).unwrap()
    };
    let completed = [&reference, &m1, &m2, &m2_fine].iter().all(|t| t.status == TrajectoryStatus::Completed);
    let (a1, a2, a2f) = (amp(&m1), amp(&m2), amp(&m2_fine));

    let q = preset("sec5_r4_g01").unwrap();
    let dq = decompose(q.dae.pencil());
    let (stable, _) = run(&q, &dq, Method::Method2, COARSE_H, LONG_T_END);
    let bounded = matches!(classify_long_run(&stable), LongRunClass::Bounded { max_norm } if max_norm < BOUNDED_MAX_NORM);

    let ok = completed && a2 >= GROWTH_FACTOR * a1 && a2f < a1 && bounded;
    outcome(
        ok,
        format!(
            "window [{WINDOW_FROM}, {LONG_T_END}] on U_C, I: M1(h={COARSE_H:e}) {a1:.2e}, M2(h={COARSE_H:e}) {a2:.2e} \
             (ratio {:.1}, need ≥ {GROWTH_FACTOR}), M2(h={FINE_H:e}) {a2f:.2e} (need < M1); r=4, g=0.1 M2 bounded: {bounded}",
            a2 / a1
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in ["sec6_sine_powerdecay", "sec6_triangular", "sec6_sawtooth"] {
        let p = preset(id).unwrap();
        let d = decompose(p.dae.pencil());
        let tr = solve(&p.dae, &d, &p.mesh, &p.x0, &SolverConfig::new(Method::Method1)).unwrap();
        let class = classify_long_run(&tr);
        ok &= matches!(class, LongRunClass::Bounded { max_norm } if max_norm < BOUNDED_MAX_NORM);
        parts.push(format!("{id} T={} {class:?}", p.mesh.t_end()));
    }
    let p = preset("sec6_polynomial").unwrap();
    let d = decompose(p.dae.pencil());
    let mut norms = Vec::new();
    for t_end in POLY_HORIZONS {
        let mesh = Mesh::with_step(0.0, t_end, p.mesh.h()).unwrap();
        let tr = solve(&p.dae, &d, &mesh, &p.x0, &SolverConfig::new(Method::Method1)).unwrap();
        ok &= tr.status == TrajectoryStatus::Completed;
        norms.push(tr.max_norm());
    }
    ok &= norms.windows(2).all(|w| w[1] > w[0]);
    parts.push(format!("sec6_polynomial max norms {norms:.3?} at T={POLY_HORIZONS:?}"));

    let p = preset("sec6_blowup").unwrap();
    let d = decompose(p.dae.pencil());
    let tr = solve(&p.dae, &d, &p.mesh, &p.x0, &SolverConfig::new(Method::Method1)).unwrap();
    let class = classify_long_run(&tr);
    ok &= matches!(class, LongRunClass::BlowUp { at_time } if at_time < p.mesh.t_end());
    let dir = tempfile::TempDir::new().unwrap();
    let cfg = dir.path().join("blowup.json");
    std::fs::write(&cfg, r#"{"model": {"preset": "sec6_blowup"}, "method": "method1"}"#).unwrap();
    let code = Command::new(env!("CARGO_BIN_EXE_semidae"))
        .args(["--quiet", "solve", cfg.to_str().unwrap()])
        .status()
        .unwrap()
        .code();
    ok &= code == Some(3);
    parts.push(format!("sec6_blowup {class:?}, CLI exit {code:?}"));
    outcome(ok, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let probes: Vec<(f64, DVector<f64>)> = (0..JAC_PROBES)
        .map(|_| (rng.random_range(0.0..10.0), DVector::from_fn(3, |_, _| rng.random_range(-JAC_BOX..JAC_BOX))))
        .collect();
    let mut worst = 0.0_f64;
    let mut checked = 0;
    // every shipped nonlinearity in every slot of the circuit, with a unit-amplitude source
    let params = CircuitParams::new(5e-4, 5e-7, 2.0, 0.2).unwrap().in_micro_units();
    let family = shipped_nonlinearities();
    for (_, nl) in &family {
        let cubic = Nonlinearity::cubic();
        let dae = build_circuit_dae(&params, nl, nl, nl, nl, &VoltageWaveform::sine());
        worst = worst.max(dae.jacobian_self_test(&probes, JAC_FD_STEP).unwrap());
        let mixed = build_circuit_dae(&params, &cubic, nl, &cubic, nl, &VoltageWaveform::sine());
        worst = worst.max(mixed.jacobian_self_test(&probes, JAC_FD_STEP).unwrap());
        checked += 2;
        for (_, x) in &probes {
            let fd = (nl.eval(x[0] + JAC_FD_STEP) - nl.eval(x[0])) / JAC_FD_STEP;
            worst = worst.max((fd - nl.derivative(x[0])).abs());
        }
    }
    // Presets are reported, not gated: a large source term (e = t² reaches 100)
    // adds ε·|f|/step of cancellation error that says nothing about the Jacobian.
    let mut preset_worst = 0.0_f64;
    for id in PRESET_IDS {
        let p = preset(id).unwrap();
        if p.dae.dim() == 3 {
            preset_worst = preset_worst.max(p.dae.jacobian_self_test(&probes, JAC_FD_STEP).unwrap());
        }
    }
    outcome(
        worst <= JAC_TOL,
        format!(
            "{checked} circuit DAEs and {} scalar families, {JAC_PROBES} probes in [-{JAC_BOX}, {JAC_BOX}]³, \
             FD step {JAC_FD_STEP:e}: max gap {worst:.2e} (tol {JAC_TOL:e}); presets {preset_worst:.2e}",
            family.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("projector identity suite", criterion_1),
        ("Method 1 first order", || order_criterion(Method::Method1, M1_ORDER)),
        ("Method 2 second order", || order_criterion(Method::Method2, M2_ORDER)),
        ("Euler equivalence", criterion_4),
        ("consistency preservation", criterion_5),
        ("stability comparison", criterion_6),
        ("qualitative dynamics", criterion_7),
        ("Jacobian check", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {} ({name}): {}", i + 1, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
