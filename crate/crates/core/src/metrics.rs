//! Accuracy metrics: distance correlation, subspace distance and Υ.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{PalsError, Result};
use crate::linalg;

/// Distance variances below this are treated as a constant sample.
pub const DVAR_FLOOR: f64 = 1e-14;

/// Frobenius distance between two orthogonal projections.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct ProjectionDistance(pub f64);

impl ProjectionDistance {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn double_centered_distances(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..u.ncols() {
                let t = u[(i, k)] - u[(j, k)];
                s += t * t;
            }
            let v = s.sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    d
}

/// Squared sample distance correlation (biased V-statistic form).
///
/// Rows are observations; `u` and `v` may have different column counts.
/// Returns 0 when either sample has distance variance below [`DVAR_FLOOR`].
pub fn dcor2(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if u.nrows() != v.nrows() {
        return Err(PalsError::DimensionMismatch(format!(
            "distance correlation needs matching rows, got {} and {}",
            u.nrows(),
            v.nrows()
        )));
    }
    if u.nrows() < 2 {
        return Err(PalsError::InvalidData("distance correlation needs n >= 2".into()));
    }
    let a = double_centered_distances(u);
    let b = double_centered_distances(v);
    let nn = (u.nrows() * u.nrows()) as f64;
    let dcov = a.component_mul(&b).sum() / nn;
    let var_a = a.norm_squared() / nn;
    let var_b = b.norm_squared() / nn;
    if var_a < DVAR_FLOOR || var_b < DVAR_FLOOR {
        return Ok(0.0);
    }
    Ok((dcov / (var_a * var_b).sqrt()).clamp(0.0, 1.0))
}

/// Sample distance correlation, the square root of [`dcor2`].
pub fn dcor(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    dcor2(u, v).map(f64::sqrt)
}

/// Orthogonal projection onto the column span of `b`.
pub fn projection(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = linalg::orthonormalize(b)?;
    Ok(&q * q.transpose())
}

/// `Δ = ‖P_B − P_B̂‖_F`.
pub fn delta(b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<ProjectionDistance> {
    if b_true.nrows() != b_hat.nrows() {
        return Err(PalsError::DimensionMismatch(format!(
            "bases live in R^{} and R^{}",
            b_true.nrows(),
            b_hat.nrows()
        )));
    }
    let pt = projection(b_true)?;
    let ph = projection(b_hat)?;
    Ok(ProjectionDistance((pt - ph).norm()))
}

/// `Υ = dCor²{φ(X), φ̂(X)}` for evaluated sufficient predictors.
pub fn upsilon(phi_true: &DMatrix<f64>, phi_hat: &DMatrix<f64>) -> Result<f64> {
    dcor2(phi_true, phi_hat)
}
