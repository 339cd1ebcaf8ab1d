//! Sliced inverse regression and sliced average variance estimation.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{standardize, Dataset};
use crate::error::{PalsError, Result};
use crate::linalg;
use crate::linear::SubspaceEstimate;

/// Slice counts used by the simulation tables.
pub const SIR_SLICES: usize = 10;
pub const SAVE_SLICES: usize = 4;

/// Equal-count partition of the observations by response value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceAssignment {
    /// Largest response in each slice but the last.
    pub boundaries: Vec<f64>,
    /// Slice index of every observation, in data order.
    pub labels: Vec<usize>,
    pub h: usize,
}

impl SliceAssignment {
    /// Sorts `y` (stable, so ties keep data order) and cuts it into `h` runs
    /// whose sizes differ by at most one, larger runs first. Slices that end
    /// up with fewer than two observations are merged into a neighbour.
    pub fn quantile(y: &DVector<f64>, h: usize) -> Result<Self> {
        let n = y.len();
        if h < 2 {
            return Err(PalsError::InvalidArgument(format!("need at least 2 slices, got {h}")));
        }
        if n < 2 {
            return Err(PalsError::InvalidData("slicing needs at least 2 observations".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

        let (base, extra) = (n / h, n % h);
        let mut sizes: Vec<usize> = (0..h).map(|s| base + usize::from(s < extra)).collect();
        let before = sizes.len();
        merge_small(&mut sizes);
        if sizes.len() < before {
            warn!("{} slice(s) had fewer than 2 observations and were merged", before - sizes.len());
        }

        let mut labels = vec![0; n];
        let mut boundaries = Vec::with_capacity(sizes.len().saturating_sub(1));
        let mut start = 0;
        for (s, &size) in sizes.iter().enumerate() {
            for &i in &order[start..start + size] {
                labels[i] = s;
            }
            start += size;
            if s + 1 < sizes.len() {
                boundaries.push(y[order[start - 1]]);
            }
        }
        Ok(Self {
            boundaries,
            labels,
            h: sizes.len(),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.h];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }
}

fn merge_small(sizes: &mut Vec<usize>) {
    while sizes.len() > 1 {
        let Some(i) = sizes.iter().position(|&s| s < 2) else {
            break;
        };
        let j = if i + 1 < sizes.len() { i + 1 } else { i - 1 };
        sizes[j] += sizes[i];
        sizes.remove(i);
    }
}

fn slice_rows(z: &DMatrix<f64>, slices: &SliceAssignment) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); slices.h];
    for (i, &l) in slices.labels.iter().enumerate() {
        rows[l].push(i);
    }
    debug_assert!(rows.iter().all(|r| !r.is_empty()) || z.nrows() == 0);
    rows
}

fn slice_mean(z: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut m = DVector::<f64>::zeros(z.ncols());
    for &i in rows {
        m += z.row(i).transpose();
    }
    m / rows.len() as f64
}

/// SIR kernel `Σ_h (n_h/n) m̄_h m̄_hᵀ` on whitened predictors.
pub fn sir_matrix(z: &DMatrix<f64>, slices: &SliceAssignment) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let mut m = DMatrix::<f64>::zeros(z.ncols(), z.ncols());
    for rows in slice_rows(z, slices) {
        let mean = slice_mean(z, &rows);
        m.ger(rows.len() as f64 / n, &mean, &mean, 1.0);
    }
    m
}

/// SAVE kernel `Σ_h (n_h/n) (I - V_h)²`, `V_h` with divisor `n_h`.
pub fn save_matrix(z: &DMatrix<f64>, slices: &SliceAssignment) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let p = z.ncols();
    let mut m = DMatrix::<f64>::zeros(p, p);
    for rows in slice_rows(z, slices) {
        let mean = slice_mean(z, &rows);
        let mut v = DMatrix::<f64>::zeros(p, p);
        for &i in &rows {
            let c = z.row(i).transpose() - &mean;
            v.ger(1.0, &c, &c, 1.0);
        }
        v /= rows.len() as f64;
        let a = DMatrix::<f64>::identity(p, p) - v;
        m += (&a * &a) * (rows.len() as f64 / n);
    }
    (&m + m.transpose()) * 0.5
}

fn fit_sliced(
    data: &Dataset,
    h: usize,
    d: usize,
    kernel: fn(&DMatrix<f64>, &SliceAssignment) -> DMatrix<f64>,
) -> Result<SubspaceEstimate> {
    if d == 0 || d > data.p() {
        return Err(PalsError::InvalidArgument(format!(
            "structural dimension {d} outside 1..={}",
            data.p()
        )));
    }
    let (st, z) = standardize(data)?;
    let slices = SliceAssignment::quantile(data.y(), h)?;
    let top = linalg::eigen_top_d(&kernel(&z, &slices), d)?;
    let basis = linalg::orthonormalize(&(&st.whitener * &top.vectors))?;
    Ok(SubspaceEstimate {
        basis,
        d,
        tie: top.tie,
    })
}

pub fn fit_sir(data: &Dataset, h: usize, d: usize) -> Result<SubspaceEstimate> {
    fit_sliced(data, h, d, sir_matrix)
}

pub fn fit_save(data: &Dataset, h: usize, d: usize) -> Result<SubspaceEstimate> {
    fit_sliced(data, h, d, save_matrix)
}
