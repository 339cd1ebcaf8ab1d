//! Principal asymmetric least squares (PALS) for sufficient dimension reduction.
//!
//! Linear PALS fits penalized expectile regressions of the response on
//! whitened predictors at a grid of expectile levels and takes the leading
//! eigenvectors of `Σ_k β_k β_kᵀ` as a basis for the central subspace.
//! Kernel PALS repeats the construction on a Gaussian-kernel spectral basis
//! to estimate nonlinear sufficient predictors.
//!
//! | module | contents |
//! |--------|----------|
//! | [`data`] | datasets, CSV loading, covariance and whitening |
//! | [`expectile`] | single-level primal and dual solvers, KKT checks |
//! | [`linear`] | multi-level synthesis, distance-correlation λ selection |
//! | [`kernel`] | kernel basis and nonlinear PALS |
//! | [`metrics`] | distance correlation, projection distance Δ, Υ |
//! | [`baselines`] | SIR and SAVE comparators |
//! | [`simlab`] | simulation models and the Monte Carlo table harness |

pub mod baselines;
pub mod data;
pub mod error;
pub mod expectile;
pub mod kernel;
pub mod linalg;
pub mod linear;
pub mod metrics;
pub mod simlab;

pub use data::{load_csv, standardize, CsvOptions, Dataset, Standardizer};
pub use error::{ErrorKind, PalsError, Result};
pub use expectile::{
    rho, solve_dual, solve_primal, verify_kkt, DualSolution, ExpectileFit, ExpectileLevel,
    KktReport, SolverOptions,
};
pub use kernel::{fit_kernel_pals, KernelBasis, NonlinearEstimate};
pub use linear::{dc_select_lambda, fit_pals, CandidateMatrix, LevelGrid, PalsFit, SubspaceEstimate};
pub use metrics::{dcor2, delta, upsilon};
