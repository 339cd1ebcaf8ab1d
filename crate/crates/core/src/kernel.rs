//! Kernel PALS: a Gaussian-kernel spectral basis and nonlinear sufficient
//! predictors estimated in its feature space.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{center_columns, Dataset, Standardizer};
use crate::error::{PalsError, Result};
use crate::expectile::{ExpectileFit, SolverOptions};
use crate::linalg;
use crate::linear::{self, CandidateMatrix, LevelGrid, PalsOptions, Selection};
use crate::metrics;

/// Monte Carlo pairs used by [`default_bandwidth`] in the estimators.
pub const DEFAULT_BANDWIDTH_PAIRS: usize = 10_000;
const BANDWIDTH_SEED: u64 = 0x006b_7061_6c73;
/// Centered-kernel eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// A positive semi-definite kernel evaluated between the rows of two matrices.
pub trait Kernel: Send + Sync {
    /// `out[i, j] = κ(a_i, b_j)`.
    fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64>;
}

/// `κ(x, x') = exp(-r ‖x - x'‖²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub r: f64,
}

impl GaussianKernel {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(PalsError::InvalidArgument(format!("bandwidth must be positive, got {r}")));
        }
        Ok(Self { r })
    }
}

impl Kernel for GaussianKernel {
    fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                let t = a[(i, k)] - b[(j, k)];
                s += t * t;
            }
            (-self.r * s).exp()
        })
    }
}

/// Gram matrix of the Gaussian kernel on the rows of `x`.
pub fn gaussian_kernel_matrix(x: &DMatrix<f64>, r: f64) -> Result<DMatrix<f64>> {
    let k = GaussianKernel::new(r)?;
    Ok(k.cross(x, x))
}

/// `Q K Q` with `Q = I - J/n`.
pub fn centered_kernel(k: &DMatrix<f64>) -> DMatrix<f64> {
    let kc = center_columns(k);
    center_columns(&kc.transpose())
}

/// `(mean ‖X - X'‖)^{-1/2}` over `mc_pairs` independent `N(0, I_p)` pairs.
///
/// The generator is seeded with a fixed constant, so the result only depends
/// on `p` and `mc_pairs`.
pub fn default_bandwidth(p: usize, mc_pairs: usize) -> Result<f64> {
    if p == 0 {
        return Err(PalsError::InvalidArgument("dimension must be positive".into()));
    }
    if mc_pairs < 1000 {
        return Err(PalsError::InvalidArgument(format!(
            "need at least 1000 Monte Carlo pairs, got {mc_pairs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BANDWIDTH_SEED);
    let mut total = 0.0;
    for _ in 0..mc_pairs {
        let mut s = 0.0;
        for _ in 0..p {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            s += (a - b) * (a - b);
        }
        total += s.sqrt();
    }
    Ok((total / mc_pairs as f64).powf(-0.5))
}

/// Spectral basis `ψ_j(x) = Σ_ℓ κ(x, X_ℓ) w_{jℓ}` built from the training points.
#[derive(Debug, Clone)]
pub struct KernelBasis<K: Kernel = GaussianKernel> {
    kernel: K,
    anchors: DMatrix<f64>,
    weights: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl KernelBasis<GaussianKernel> {
    /// Gaussian basis with bandwidth `r` and `m` functions (default `⌊n/2⌋`).
    pub fn gaussian(x: &DMatrix<f64>, r: f64, m: Option<usize>) -> Result<Self> {
        Self::build(GaussianKernel::new(r)?, x, m)
    }

    pub fn r(&self) -> f64 {
        self.kernel.r
    }
}

impl<K: Kernel> KernelBasis<K> {
    pub fn build(kernel: K, x: &DMatrix<f64>, m: Option<usize>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(PalsError::InvalidData("kernel basis needs at least 2 points".into()));
        }
        let mut m = m.unwrap_or(n / 2).max(1);
        if m > n {
            warn!("basis size {m} exceeds n = {n}; using {n}");
            m = n;
        }
        let k = kernel.cross(x, x);
        let spectrum = linalg::sym_eigen(&centered_kernel(&k))?;
        let top = spectrum.values[0].max(0.0);
        let rank = spectrum
            .values
            .iter()
            .take_while(|&&v| top > 0.0 && v > RANK_TOLERANCE * top)
            .count();
        if rank == 0 {
            return Err(PalsError::RankDeficient("centered kernel matrix is zero".into()));
        }
        if m > rank {
            warn!("basis size {m} exceeds the centered kernel rank {rank}; using {rank}");
            m = rank;
        }
        Ok(Self {
            kernel,
            anchors: x.clone(),
            weights: spectrum.vectors.columns(0, m).into_owned(),
            eigenvalues: spectrum.values.rows(0, m).into_owned(),
        })
    }

    pub fn m(&self) -> usize {
        self.weights.ncols()
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    /// `n × m`, orthonormal columns.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Leading eigenvalues of the centered kernel matrix.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Row i is `ψ(x_i)ᵀ`.
    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.anchors.ncols() {
            return Err(PalsError::DimensionMismatch(format!(
                "basis built on {} predictors, got {}",
                self.anchors.ncols(),
                x.ncols()
            )));
        }
        Ok(self.kernel.cross(x, &self.anchors) * &self.weights)
    }
}

/// Estimated nonlinear sufficient predictors `φ̂_j(x) = ν̂_jᵀ ψ(x)`.
#[derive(Debug, Clone)]
pub struct NonlinearEstimate<K: Kernel = GaussianKernel> {
    /// `m × d`, leading eigenvectors of Γ̂.
    pub gamma_basis: DMatrix<f64>,
    pub kernel_basis: KernelBasis<K>,
    pub candidate: CandidateMatrix,
    pub levels: Vec<ExpectileFit>,
    pub feature_standardizer: Standardizer,
    pub lambda: f64,
    pub tie: bool,
}

impl<K: Kernel> NonlinearEstimate<K> {
    pub fn d(&self) -> usize {
        self.gamma_basis.ncols()
    }

    pub fn converged(&self) -> bool {
        self.levels.iter().all(|f| f.converged)
    }

    /// `n × d` matrix of sufficient predictors at the rows of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.kernel_basis.features(x)? * &self.gamma_basis)
    }
}

/// Options shared by the kernel estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOptions {
    pub grid: LevelGrid,
    pub d: usize,
    /// Basis size, `⌊n/2⌋` when absent.
    pub m: Option<usize>,
    /// Bandwidth, [`default_bandwidth`] when absent.
    pub r: Option<f64>,
    pub solver: SolverOptions,
}

impl KernelOptions {
    pub fn new(d: usize) -> Self {
        Self {
            grid: LevelGrid::default(),
            d,
            m: None,
            r: None,
            solver: SolverOptions::default(),
        }
    }

    fn bandwidth(&self, p: usize) -> Result<f64> {
        match self.r {
            Some(r) => Ok(r),
            None => default_bandwidth(p, DEFAULT_BANDWIDTH_PAIRS),
        }
    }
}

/// Fits PALS on the features of an already built basis.
pub fn fit_on_basis<K: Kernel + Clone>(
    basis: &KernelBasis<K>,
    y: &DVector<f64>,
    grid: &LevelGrid,
    lambda: f64,
    d: usize,
    solver: &SolverOptions,
) -> Result<NonlinearEstimate<K>> {
    if d == 0 || d > basis.m() {
        return Err(PalsError::InvalidArgument(format!(
            "structural dimension {d} outside 1..={}",
            basis.m()
        )));
    }
    let psi = basis.features(basis.anchors())?;
    let opts = PalsOptions {
        grid: grid.clone(),
        lambda,
        d,
        solver: *solver,
    };
    // centering and whitening of Ψ happen inside; β there is γ = G^{-1/2}θ here
    let fit = linear::fit_matrix(&psi, y, &opts)?;
    Ok(NonlinearEstimate {
        gamma_basis: fit.estimate.basis,
        kernel_basis: basis.clone(),
        candidate: fit.candidate,
        levels: fit.levels,
        feature_standardizer: fit.standardizer,
        lambda,
        tie: fit.estimate.tie,
    })
}

/// Kernel PALS with the Gaussian kernel.
pub fn fit_kernel_pals(data: &Dataset, lambda: f64, opts: &KernelOptions) -> Result<NonlinearEstimate> {
    let r = opts.bandwidth(data.p())?;
    let basis = KernelBasis::gaussian(data.x(), r, opts.m)?;
    fit_on_basis(&basis, data.y(), &opts.grid, lambda, opts.d, &opts.solver)
}

/// DC-kPALS: the λ maximizing `dCor²(Y, φ̂_λ(X))`, smallest λ on ties.
pub fn dc_select_lambda_kernel(
    data: &Dataset,
    lambdas: &[f64],
    opts: &KernelOptions,
) -> Result<Selection<NonlinearEstimate>> {
    let r = opts.bandwidth(data.p())?;
    let basis = KernelBasis::gaussian(data.x(), r, opts.m)?;
    let y = DMatrix::from_column_slice(data.n(), 1, data.y().as_slice());
    let psi = basis.features(data.x())?;
    linear::select_by_score(
        lambdas,
        |l| fit_on_basis(&basis, data.y(), &opts.grid, l, opts.d, &opts.solver),
        |est| metrics::dcor2(&y, &(&psi * &est.gamma_basis)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_unit_distance() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let k = gaussian_kernel_matrix(&x, 1.0).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel_matrix(&x, 0.0).is_err());
    }

    #[test]
    fn centering_kills_constants() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.3, 1.1, 2.0]);
        let kc = centered_kernel(&gaussian_kernel_matrix(&x, 0.7).unwrap());
        for i in 0..4 {
            assert!(kc.row(i).sum().abs() < 1e-12);
            assert!(kc.column(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn bandwidth_is_reproducible() {
        let a = default_bandwidth(3, 2000).unwrap();
        assert_eq!(a, default_bandwidth(3, 2000).unwrap());
        assert!(default_bandwidth(3, 999).is_err());
    }

    #[test]
    fn basis_size_is_clamped_to_rank() {
        // 3 distinct points: centered kernel has rank 2
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.5]);
        let basis = KernelBasis::gaussian(&x, 1.0, Some(10)).unwrap();
        assert_eq!(basis.m(), 2);
        let w = basis.weights();
        assert!((w.transpose() * w - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn training_features_match_kernel_times_weights() {
        let x = DMatrix::from_fn(8, 2, |i, j| ((i * 3 + j) as f64).sin());
        let basis = KernelBasis::gaussian(&x, 0.5, None).unwrap();
        assert_eq!(basis.m(), 4);
        let k = gaussian_kernel_matrix(&x, 0.5).unwrap();
        let psi = basis.features(&x).unwrap();
        assert_eq!(psi, &k * basis.weights());
    }
}
