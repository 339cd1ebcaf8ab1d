//! Linear PALS: synthesis across expectile levels and λ selection by
//! distance correlation.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, Standardizer};
use crate::error::{PalsError, Result};
use crate::expectile::{solve_primal, ExpectileFit, ExpectileLevel, SolverOptions};
use crate::linalg::{self, SpectralDecomposition};
use crate::metrics;

/// λ values tried by distance-correlation selection when none are given.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

/// Scores closer than this are treated as tied; the smaller λ wins.
const SCORE_TIE: f64 = 1e-12;

/// Strictly increasing expectile levels `0 < τ_1 < … < τ_K < 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LevelGrid(Vec<ExpectileLevel>);

impl LevelGrid {
    pub fn new(taus: &[f64]) -> Result<Self> {
        if taus.is_empty() {
            return Err(PalsError::InvalidArgument("level grid is empty".into()));
        }
        let levels = taus
            .iter()
            .map(|&t| ExpectileLevel::new(t))
            .collect::<Result<Vec<_>>>()?;
        if levels.windows(2).any(|w| w[0].value() >= w[1].value()) {
            return Err(PalsError::InvalidArgument(
                "expectile levels must be strictly increasing".into(),
            ));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[ExpectileLevel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for LevelGrid {
    /// `τ_k = k / 10`, `k = 1, …, 9`.
    fn default() -> Self {
        Self((1..=9).map(|k| ExpectileLevel::new(k as f64 / 10.0).expect("k/10 lies in (0, 1)")).collect())
    }
}

/// `Λ̂ = Σ_k β̂_k β̂_kᵀ` with its spectrum.
#[derive(Debug, Clone)]
pub struct CandidateMatrix {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl CandidateMatrix {
    /// Accumulates outer products in the given order.
    pub fn from_coefficients(coefs: &[DVector<f64>]) -> Result<Self> {
        let p = coefs
            .first()
            .map(|c| c.len())
            .ok_or_else(|| PalsError::InvalidArgument("no coefficient vectors".into()))?;
        let mut matrix = DMatrix::<f64>::zeros(p, p);
        for c in coefs {
            if c.len() != p {
                return Err(PalsError::DimensionMismatch(
                    "coefficient vectors differ in length".into(),
                ));
            }
            matrix.ger(1.0, c, c, 1.0);
        }
        let SpectralDecomposition { values, vectors } = linalg::sym_eigen(&matrix)?;
        Ok(Self {
            matrix,
            eigenvalues: values,
            eigenvectors: vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn leading(&self, d: usize) -> Result<SubspaceEstimate> {
        if d == 0 || d > self.dim() {
            return Err(PalsError::InvalidArgument(format!(
                "structural dimension {d} outside 1..={}",
                self.dim()
            )));
        }
        let top = linalg::truncate(
            &SpectralDecomposition {
                values: self.eigenvalues.clone(),
                vectors: self.eigenvectors.clone(),
            },
            d,
        );
        if top.tie {
            warn!("eigenvalues {d} and {} of the candidate matrix are tied", d + 1);
        }
        Ok(SubspaceEstimate {
            basis: top.vectors,
            d,
            tie: top.tie,
        })
    }
}

/// Orthonormal `p × d` basis of an estimated central subspace.
#[derive(Debug, Clone)]
pub struct SubspaceEstimate {
    pub basis: DMatrix<f64>,
    pub d: usize,
    /// The d-th eigenvalue was tied with the next one.
    pub tie: bool,
}

impl SubspaceEstimate {
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Everything produced by one linear PALS fit.
#[derive(Debug, Clone)]
pub struct PalsFit {
    pub estimate: SubspaceEstimate,
    pub candidate: CandidateMatrix,
    pub levels: Vec<ExpectileFit>,
    pub standardizer: Standardizer,
    pub lambda: f64,
}

impl PalsFit {
    /// Every level solve converged.
    pub fn converged(&self) -> bool {
        self.levels.iter().all(|f| f.converged)
    }

    /// `X B̂` for predictors on the original scale.
    pub fn reduced_predictors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * &self.estimate.basis
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalsOptions {
    pub grid: LevelGrid,
    pub lambda: f64,
    pub d: usize,
    pub solver: SolverOptions,
}

impl PalsOptions {
    pub fn new(lambda: f64, d: usize) -> Self {
        Self {
            grid: LevelGrid::default(),
            lambda,
            d,
            solver: SolverOptions::default(),
        }
    }
}

/// Linear PALS with default solver settings.
pub fn fit_pals(data: &Dataset, grid: &LevelGrid, lambda: f64, d: usize) -> Result<PalsFit> {
    let opts = PalsOptions {
        grid: grid.clone(),
        lambda,
        d,
        solver: SolverOptions::default(),
    };
    fit_pals_with(data, &opts)
}

pub fn fit_pals_with(data: &Dataset, opts: &PalsOptions) -> Result<PalsFit> {
    fit_matrix(data.x(), data.y(), opts)
}

/// Core of linear PALS on an arbitrary predictor matrix; kernel PALS reuses it
/// on the feature matrix.
pub(crate) fn fit_matrix(x: &DMatrix<f64>, y: &DVector<f64>, opts: &PalsOptions) -> Result<PalsFit> {
    if opts.d == 0 || opts.d > x.ncols() {
        return Err(PalsError::InvalidArgument(format!(
            "structural dimension {} outside 1..={}",
            opts.d,
            x.ncols()
        )));
    }
    if opts.d > opts.grid.len() {
        warn!(
            "d = {} exceeds the number of levels {}; the candidate matrix has rank at most {}",
            opts.d,
            opts.grid.len(),
            opts.grid.len()
        );
    }
    let st = Standardizer::fit(x)?;
    let z = st.transform(x);
    let levels = opts
        .grid
        .levels()
        .par_iter()
        .map(|&tau| solve_primal(&z, y, tau, opts.lambda, &opts.solver).map(|f| f.with_whitener(&st)))
        .collect::<Result<Vec<_>>>()?;
    if levels.iter().any(|f| !f.converged) {
        warn!("at least one expectile level did not converge (lambda = {})", opts.lambda);
    }
    let betas: Vec<DVector<f64>> = levels.iter().map(|f| f.beta.clone()).collect();
    let candidate = CandidateMatrix::from_coefficients(&betas)?;
    let estimate = candidate.leading(opts.d)?;
    Ok(PalsFit {
        estimate,
        candidate,
        levels,
        standardizer: st,
        lambda: opts.lambda,
    })
}

/// Outcome of one λ candidate during selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub dcor2: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Selection<F> {
    pub lambda: f64,
    pub fit: F,
    pub scores: Vec<LambdaScore>,
}

/// Sorted, deduplicated, validated λ list.
pub fn prepare_lambdas(lambdas: &[f64]) -> Result<Vec<f64>> {
    if lambdas.is_empty() {
        return Err(PalsError::InvalidArgument("empty lambda list".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(PalsError::InvalidArgument(format!("lambda must be positive, got {bad}")));
    }
    let mut out = lambdas.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Generic argmax over λ of `score(fit)`, smallest λ on ties.
pub(crate) fn select_by_score<F: Send>(
    lambdas: &[f64],
    fit: impl Fn(f64) -> Result<F> + Sync,
    score: impl Fn(&F) -> Result<f64> + Sync,
) -> Result<Selection<F>> {
    let lambdas = prepare_lambdas(lambdas)?;
    let outcomes: Vec<(f64, Result<(F, f64)>)> = lambdas
        .par_iter()
        .map(|&l| (l, fit(l).and_then(|f| score(&f).map(|s| (f, s)))))
        .collect();

    let mut scores = Vec::with_capacity(outcomes.len());
    let mut fits = Vec::with_capacity(outcomes.len());
    for (lambda, outcome) in outcomes {
        match outcome {
            Ok((f, s)) => {
                scores.push(LambdaScore {
                    lambda,
                    dcor2: Some(s),
                    error: None,
                });
                fits.push(Some(f));
            }
            Err(e) => {
                scores.push(LambdaScore {
                    lambda,
                    dcor2: None,
                    error: Some(e.to_string()),
                });
                fits.push(None);
            }
        }
    }
    match best_index(scores.iter().map(|s| s.dcor2)) {
        Some(i) => Ok(Selection {
            lambda: scores[i].lambda,
            fit: fits.swap_remove(i).expect("scored fit is present"),
            scores,
        }),
        None => Err(PalsError::Numerical(format!(
            "every fit failed; lambda values tried: {lambdas:?}"
        ))),
    }
}

/// Index of the largest score in λ-ascending order; a later score must beat
/// the incumbent by more than the tie margin.
pub fn best_index(scores: impl IntoIterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| s > b + SCORE_TIE) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// DC-PALS: the λ maximizing `dCor²(Y, B̂_λᵀX)`.
pub fn dc_select_lambda(
    data: &Dataset,
    grid: &LevelGrid,
    lambdas: &[f64],
    d: usize,
) -> Result<Selection<PalsFit>> {
    let y = DMatrix::from_column_slice(data.n(), 1, data.y().as_slice());
    select_by_score(
        lambdas,
        |l| fit_pals(data, grid, l, d),
        |f| metrics::dcor2(&y, &f.reduced_predictors(data.x())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0_f64));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + 0.3 * x[(i, 1)].powi(2) + 0.1 * rng.random_range(-1.0..1.0));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert_eq!(LevelGrid::default().len(), 9);
        assert!((LevelGrid::default().levels()[2].value() - 0.3).abs() < 1e-15);
        assert!(LevelGrid::new(&[0.2, 0.2]).is_err());
        assert!(LevelGrid::new(&[0.5, 0.1]).is_err());
        assert!(LevelGrid::new(&[0.0, 0.5]).is_err());
        assert!(LevelGrid::new(&[]).is_err());
    }

    #[test]
    fn single_level_basis_is_normalized_coefficient() {
        let data = toy(1, 60, 4);
        let grid = LevelGrid::new(&[0.4]).unwrap();
        let fit = fit_pals(&data, &grid, 1.0, 1).unwrap();
        let beta = &fit.levels[0].beta;
        let b = beta / beta.norm();
        let basis = fit.estimate.basis.column(0);
        assert!((basis - &b).norm() < 1e-10 || (basis + &b).norm() < 1e-10);
    }

    #[test]
    fn candidate_matrix_reconstruction_and_psd() {
        let data = toy(2, 80, 5);
        let fit = fit_pals(&data, &LevelGrid::default(), 10.0, 2).unwrap();
        let mut manual = DMatrix::<f64>::zeros(5, 5);
        for f in &fit.levels {
            manual += &f.beta * f.beta.transpose();
        }
        assert!((&manual - &fit.candidate.matrix).amax() < 1e-10);
        assert!(fit.candidate.eigenvalues.iter().all(|&v| v >= -1e-10));
        let b = &fit.estimate.basis;
        assert!((b.transpose() * b - DMatrix::identity(2, 2)).amax() < 1e-10);
        let p = fit.estimate.projector();
        assert!((&p * &p - &p).amax() < 1e-10);
        assert!((&p - p.transpose()).amax() < 1e-10);
        for f in &fit.levels {
            assert!((&f.beta - &fit.standardizer.whitener * &f.theta).amax() < 1e-10);
        }
        assert!(fit.converged());
    }

    #[test]
    fn dimension_checks() {
        let data = toy(3, 30, 3);
        assert!(fit_pals(&data, &LevelGrid::default(), 1.0, 0).is_err());
        assert!(fit_pals(&data, &LevelGrid::default(), 1.0, 4).is_err());
    }

    #[test]
    fn single_lambda_is_selected() {
        let data = toy(4, 40, 3);
        let sel = dc_select_lambda(&data, &LevelGrid::default(), &[10.0], 1).unwrap();
        assert_eq!(sel.lambda, 10.0);
        assert_eq!(sel.scores.len(), 1);
    }

    #[test]
    fn identical_estimates_pick_smaller_lambda() {
        // with one predictor every λ yields the same unit basis
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(30, 1, |_, _| rng.random_range(-1.0..1.0_f64));
        let y = DVector::from_fn(30, |i, _| x[(i, 0)].sin());
        let data = Dataset::new(x, y).unwrap();
        let sel = dc_select_lambda(&data, &LevelGrid::default(), &[10.0, 1.0, 100.0], 1).unwrap();
        assert_eq!(sel.lambda, 1.0);
    }

    #[test]
    fn all_failures_name_lambdas() {
        let data = toy(6, 20, 2);
        let err = select_by_score::<()>(
            &[0.5, 2.0],
            |_| Err(PalsError::Numerical("boom".into())),
            |_| Ok(0.0),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0.5") && msg.contains("2.0"), "{msg}");
        let _ = data;
    }
}
