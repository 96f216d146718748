//! Shared generators for integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use semidae::pencil::MatrixPencil;

/// Random regular pencil with known structure: `A = S·diag(D, 0)·T`,
/// `B = S·diag(J, I)·T` with well-conditioned `S`, `T`.
pub struct KnownPencil {
    pub pencil: MatrixPencil,
    /// Size of the algebraic block (0 for an index-0 pencil).
    pub k: usize,
    pub p1: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

/// Orthogonal factor times a diagonal with entries in [0.5, 2].
pub fn well_conditioned<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = m.qr().q();
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { rng.random_range(0.5..2.0) } else { 0.0 });
    q * d
}

pub fn known_pencil<R: Rng>(rng: &mut R, n: usize, k: usize) -> KnownPencil {
    assert!(k < n);
    let r = n - k;
    let mut a0 = DMatrix::zeros(n, n);
    let mut b0 = DMatrix::zeros(n, n);
    let mut e1 = DMatrix::zeros(n, n);
    for i in 0..r {
        a0[(i, i)] = rng.random_range(0.5..2.0);
        e1[(i, i)] = 1.0;
        for j in 0..r {
            b0[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    for i in r..n {
        b0[(i, i)] = 1.0;
    }
    let s = well_conditioned(rng, n);
    let t = well_conditioned(rng, n);
    let s_inv = s.clone().try_inverse().unwrap();
    let t_inv = t.clone().try_inverse().unwrap();
    let a = &s * a0 * &t;
    let b = &s * b0 * &t;
    KnownPencil {
        pencil: MatrixPencil::new(a, b).unwrap(),
        k,
        p1: &t_inv * &e1 * &t,
        q1: &s * &e1 * &s_inv,
        s,
        t,
    }
}
