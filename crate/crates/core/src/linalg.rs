//! Small dense linear-algebra helpers shared by the pencil analysis and the
//! integrators. Everything here works on `nalgebra` dynamic matrices; the
//! SVD is delegated to `faer`.

use nalgebra::{DMatrix, DVector};

/// Singular value decomposition with singular values sorted in
/// descending order and the matching columns of `U` / rows of `Vᵀ`.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

// nalgebra 0.35 returns inaccurate singular vectors for some rank-deficient
// matrices (reconstruction error ~0.1 on a 6×6 of rank 3), so the SVD goes through faer.
fn faer_mat(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let (r, c) = m.shape();
    let svd = match faer_mat(m).svd() {
        Ok(svd) => svd,
        Err(_) => {
            let nan = DMatrix::from_element(r, r, f64::NAN);
            return SortedSvd { u: nan, sigma: vec![f64::NAN; r.min(c)], v_t: DMatrix::from_element(c, c, f64::NAN) };
        }
    };
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let p = r.min(c);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut su = DMatrix::from_fn(r, r, |i, j| u[(i, j)]);
    let mut svt = DMatrix::from_fn(c, c, |i, j| v[(j, i)]);
    for (k, &i) in order.iter().enumerate() {
        su.set_column(k, &DVector::from_fn(r, |row, _| u[(row, i)]));
        svt.set_row(k, &DVector::from_fn(c, |col, _| v[(col, i)]).transpose());
    }
    SortedSvd { u: su, sigma: order.iter().map(|&i| s[i]).collect(), v_t: svt }
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    faer_mat(m).singular_values().unwrap_or_else(|_| vec![f64::NAN; m.nrows().min(m.ncols())])
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute entry of a vector.
pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).iter().fold(0.0_f64, |acc, v| acc.max(*v))
}

/// Smallest singular value, 0 for an empty matrix.
pub(crate) fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).iter().fold(f64::INFINITY, |acc, v| acc.min(*v))
}

/// Flip the sign of each column so that its largest-magnitude entry is
/// positive. Makes SVD-derived bases deterministic.
pub(crate) fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut pivot = 0.0_f64;
        for v in col.iter() {
            if v.abs() > pivot.abs() {
                pivot = *v;
            }
        }
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Rows of a matrix as nested vectors, for JSON output.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Build a square matrix from nested rows. Returns `None` on ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return None;
    }
    Some(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}
