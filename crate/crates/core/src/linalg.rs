//! Dense symmetric spectral helpers shared by the estimators.
//!
//! Everything here works on `nalgebra` dynamic matrices. Eigenpairs are always
//! returned in descending eigenvalue order with a deterministic sign: the
//! component of largest magnitude in each eigenvector is made positive (the
//! first such index wins on exact magnitude ties).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PalsError, Result};

/// Largest tolerated `max |M - M^T|`, relative to `max(1, max |M|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Relative gap below which two adjacent eigenvalues are reported as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Full eigendecomposition of a symmetric matrix, sorted descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Leading `d` eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    /// Set when eigenvalue `d` and `d + 1` coincide, so the leading
    /// subspace is not uniquely determined.
    pub tie: bool,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(PalsError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(PalsError::Numerical("matrix has non-finite entries".into()));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOLERANCE * max_abs(m).max(1.0) {
        return Err(PalsError::NotSymmetric(asym));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Symmetric eigendecomposition with descending values and sign-normalized vectors.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let sym = check_symmetric(m)?;
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        normalize_sign(&mut v);
        vectors.set_column(col, &v);
    }
    Ok(SpectralDecomposition { values, vectors })
}

/// Leading `d` eigenpairs of symmetric `m`.
pub fn eigen_top_d(m: &DMatrix<f64>, d: usize) -> Result<TopEigen> {
    if d == 0 || d > m.nrows() {
        return Err(PalsError::InvalidArgument(format!(
            "requested {d} eigenpairs of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let full = sym_eigen(m)?;
    Ok(truncate(&full, d))
}

pub(crate) fn truncate(full: &SpectralDecomposition, d: usize) -> TopEigen {
    let n = full.values.len();
    let scale = full.values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let tie = d < n && (full.values[d - 1] - full.values[d]).abs() <= TIE_TOLERANCE * scale;
    TopEigen {
        values: full.values.rows(0, d).into_owned(),
        vectors: full.vectors.columns(0, d).into_owned(),
        tie,
    }
}

/// Maps the eigenvalues of a symmetric PSD matrix through `f`, flooring them
/// at `floor` first. Returns the reconstructed matrix and the number of
/// eigenvalues that were clamped.
pub fn sym_matrix_function(
    m: &DMatrix<f64>,
    floor: f64,
    f: impl Fn(f64) -> f64,
) -> Result<(DMatrix<f64>, usize)> {
    let dec = sym_eigen(m)?;
    let mut clamped = 0;
    let mapped = DVector::from_iterator(
        dec.values.len(),
        dec.values.iter().map(|&v| {
            if v < floor {
                clamped += 1;
                f(floor)
            } else {
                f(v)
            }
        }),
    );
    let v = &dec.vectors;
    let out = v * DMatrix::from_diagonal(&mapped) * v.transpose();
    Ok(((&out + out.transpose()) * 0.5, clamped))
}

/// Symmetric square root of a PSD matrix (negative rounding noise is clamped to zero).
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(sym_matrix_function(m, 0.0, f64::sqrt)?.0)
}

/// Orthonormal basis for the column span of `b` via modified Gram-Schmidt with
/// one reorthogonalization pass. Fails if a column is numerically dependent
/// on its predecessors.
pub fn orthonormalize(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = b.shape();
    if cols == 0 || cols > rows {
        return Err(PalsError::RankDeficient(format!(
            "a {rows}x{cols} matrix cannot have full column rank"
        )));
    }
    let scale = b
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut q = DMatrix::<f64>::zeros(rows, cols);
    for j in 0..cols {
        let mut v: DVector<f64> = b.column(j).into_owned();
        for _ in 0..2 {
            for k in 0..j {
                let qk = q.column(k);
                let proj = qk.dot(&v);
                v.axpy(-proj, &qk, 1.0);
            }
        }
        let norm = v.norm();
        if !norm.is_finite() || norm <= 1e-10 * scale {
            return Err(PalsError::RankDeficient(format!(
                "column {j} lies in the span of the preceding columns"
            )));
        }
        q.set_column(j, &(v / norm));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_top_two_are_sign_normalized() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let top = eigen_top_d(&m, 2).unwrap();
        assert_eq!(top.values.as_slice(), &[3.0, 2.0]);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert!((top.vectors.column(0) - e1).norm() < 1e-14);
        assert!((top.vectors.column(1) - e3).norm() < 1e-14);
        assert!(!top.tie);
    }

    #[test]
    fn identity_flags_tie() {
        let top = eigen_top_d(&DMatrix::identity(3, 3), 1).unwrap();
        assert!((top.values[0] - 1.0).abs() < 1e-14);
        assert!((top.vectors.column(0).norm() - 1.0).abs() < 1e-14);
        assert!(top.tie);
    }

    #[test]
    fn full_rank_request_has_no_tie_position() {
        let top = eigen_top_d(&DMatrix::identity(2, 2), 2).unwrap();
        assert!(!top.tie);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 2)] = 1e-6;
        assert!(matches!(eigen_top_d(&m, 1), Err(PalsError::NotSymmetric(_))));
        // tiny asymmetry is symmetrized away
        m[(0, 2)] = 1e-12;
        assert!(eigen_top_d(&m, 1).is_ok());
    }

    #[test]
    fn random_symmetric_residuals() {
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) as f64).sin());
        let m = &a + a.transpose();
        let top = eigen_top_d(&m, 6).unwrap();
        for k in 0..6 {
            let v = top.vectors.column(k);
            let resid = (&m * v - v * top.values[k]).norm();
            assert!(resid < 1e-9, "pair {k} residual {resid}");
        }
        for k in 1..6 {
            assert!(top.values[k - 1] >= top.values[k]);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m).unwrap();
        assert!((&r * &r - &m).norm() < 1e-12);
    }

    #[test]
    fn orthonormalize_rejects_dependent_columns() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0]);
        assert!(matches!(orthonormalize(&b), Err(PalsError::RankDeficient(_))));
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let q = orthonormalize(&b).unwrap();
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-14);
    }
}
