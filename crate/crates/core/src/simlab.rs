//! Simulation models, the Monte Carlo table harness and a consistency
//! diagnostic.
//!
//! Every repetition draws its data from `ChaCha8Rng::seed_from_u64(base_seed + rep)`
//! and all methods in a repetition share that dataset. Repetitions run on a
//! dedicated rayon pool; results are gathered by repetition index, so tables
//! do not depend on the number of worker threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{fit_save, fit_sir, SAVE_SLICES, SIR_SLICES};
use crate::data::Dataset;
use crate::error::{PalsError, Result};
use crate::expectile::SolverOptions;
use crate::kernel::{self, KernelBasis, DEFAULT_BANDWIDTH_PAIRS};
use crate::linalg;
use crate::linear::{self, fit_pals, LevelGrid, DEFAULT_LAMBDAS};
use crate::metrics;

/// Version stamped on every emitted table.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest tolerated fraction of failed repetitions in a cell.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ModelId {
    I,
    II,
    III,
    IV,
    V,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [ModelId::I, ModelId::II, ModelId::III, ModelId::IV, ModelId::V];

    pub fn is_nonlinear(self) -> bool {
        matches!(self, ModelId::IV | ModelId::V)
    }

    /// Structural dimension of the truth.
    pub fn dim(self) -> usize {
        match self {
            ModelId::IV => 1,
            _ => 2,
        }
    }

    fn min_p(self) -> usize {
        match self {
            ModelId::II => 4,
            _ => 2,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
            ModelId::IV => "IV",
            ModelId::V => "V",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = PalsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ModelId::I),
            "II" | "2" => Ok(ModelId::II),
            "III" | "3" => Ok(ModelId::III),
            "IV" | "4" => Ok(ModelId::IV),
            "V" | "5" => Ok(ModelId::V),
            other => Err(PalsError::InvalidArgument(format!(
                "unknown model '{other}', expected one of I, II, III, IV, V"
            ))),
        }
    }
}

/// Predictor distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PredictorCase {
    /// `N(0, I_p)`
    Independent,
    /// `N(0, Σ)`, `Σ_ij = 0.5^{|i-j|}`
    Correlated,
    /// independent `Uniform(-1, 1)`
    Uniform,
}

impl fmt::Display for PredictorCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorCase::Independent => "i",
            PredictorCase::Correlated => "ii",
            PredictorCase::Uniform => "iii",
        })
    }
}

impl FromStr for PredictorCase {
    type Err = PalsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(PredictorCase::Independent),
            "ii" | "2" => Ok(PredictorCase::Correlated),
            "iii" | "3" => Ok(PredictorCase::Uniform),
            other => Err(PalsError::InvalidArgument(format!(
                "unknown predictor case '{other}', expected i, ii or iii"
            ))),
        }
    }
}

/// How the `0.2` in the noise of models IV and V is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    #[default]
    Variance,
    StdDev,
}

impl FromStr for NoiseConvention {
    type Err = PalsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "variance" | "var" => Ok(NoiseConvention::Variance),
            "sd" | "std" | "stddev" => Ok(NoiseConvention::StdDev),
            other => Err(PalsError::InvalidArgument(format!(
                "unknown noise convention '{other}', expected variance or sd"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimModel {
    pub id: ModelId,
    pub p: usize,
    pub case: PredictorCase,
    pub noise_convention: NoiseConvention,
    /// Multiplies every noise draw; 0 gives the noise-free model.
    pub noise_scale: f64,
}

impl SimModel {
    pub fn new(id: ModelId, p: usize, case: PredictorCase) -> Result<Self> {
        if p < id.min_p() {
            return Err(PalsError::InvalidArgument(format!(
                "model {id} needs p >= {}, got {p}",
                id.min_p()
            )));
        }
        if id.is_nonlinear() && case != PredictorCase::Independent {
            return Err(PalsError::InvalidArgument(format!(
                "model {id} is defined for predictor case i only"
            )));
        }
        Ok(Self {
            id,
            p,
            case,
            noise_convention: NoiseConvention::default(),
            noise_scale: 1.0,
        })
    }

    pub fn with_noise_convention(mut self, c: NoiseConvention) -> Self {
        self.noise_convention = c;
        self
    }

    pub fn with_noise_scale(mut self, s: f64) -> Self {
        self.noise_scale = s;
        self
    }

    /// Ground-truth basis of the central subspace for models I–III.
    pub fn true_basis(&self) -> Option<DMatrix<f64>> {
        let mut b = DMatrix::<f64>::zeros(self.p, 2);
        match self.id {
            ModelId::I | ModelId::III => {
                b[(0, 0)] = 1.0;
                b[(1, 1)] = 1.0;
            }
            ModelId::II => {
                b[(0, 0)] = 1.0;
                b[(1, 0)] = 1.0;
                b[(2, 1)] = 1.0;
                b[(3, 1)] = 1.0;
            }
            ModelId::IV | ModelId::V => return None,
        }
        Some(b)
    }

    fn case_covariance_root(&self) -> Result<DMatrix<f64>> {
        let sigma = ar_covariance(self.p);
        linalg::sym_sqrt(&sigma)
    }
}

/// `Σ_ij = 0.5^{|i-j|}`.
pub fn ar_covariance(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| 0.5f64.powi(i.abs_diff(j) as i32))
}

/// What the estimate of a simulated dataset is scored against.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    /// `p × d` basis for Δ.
    Basis(DMatrix<f64>),
    /// `n × d` true sufficient predictors at the drawn X, for Υ.
    Functions(DMatrix<f64>),
}

/// Draws `n` observations from `model` with a fresh `ChaCha8Rng` seeded by `seed`.
pub fn generate(model: &SimModel, n: usize, seed: u64) -> Result<(Dataset, Truth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(model, n, &mut rng)
}

/// Draws X row by row, then the noise vector.
pub fn generate_with<R: Rng>(model: &SimModel, n: usize, rng: &mut R) -> Result<(Dataset, Truth)> {
    if n < 2 {
        return Err(PalsError::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let p = model.p;
    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = match model.case {
                PredictorCase::Uniform => rng.random_range(-1.0..1.0),
                _ => rng.sample(StandardNormal),
            };
        }
    }
    if model.case == PredictorCase::Correlated {
        x *= model.case_covariance_root()?;
    }
    let eps_sd = match (model.id.is_nonlinear(), model.noise_convention) {
        (false, _) => 1.0,
        (true, NoiseConvention::Variance) => 0.2f64.sqrt(),
        (true, NoiseConvention::StdDev) => 0.2,
    } * model.noise_scale;
    let eps: Vec<f64> = (0..n).map(|_| eps_sd * rng.sample::<f64, _>(StandardNormal)).collect();

    let mut phi = DMatrix::<f64>::zeros(n, model.id.dim());
    let y = DVector::from_fn(n, |i, _| {
        let (x1, x2) = (x[(i, 0)], x[(i, 1)]);
        let e = eps[i];
        match model.id {
            ModelId::I => x1 / (0.5 + (x2 + 1.5).powi(2)) + e,
            ModelId::II => {
                3.0 * (0.25 * (x1 + x2)).sin() + 3.0 * (0.25 * (x[(i, 2)] + x[(i, 3)])).sin() + e
            }
            ModelId::III => x1 + 0.5 * (0.15 * x2).exp() * e,
            ModelId::IV => {
                let f1 = x1.hypot(x2);
                phi[(i, 0)] = f1;
                let s = f1.sqrt();
                // s ln s → 0 as s → 0
                let core = if s > 0.0 { s * s.ln() } else { 0.0 };
                core + 0.5 * e
            }
            ModelId::V => {
                let f1 = x1.hypot(x2);
                let f2 = x2.sin();
                phi[(i, 0)] = f1;
                phi[(i, 1)] = f2;
                f1 * f1 + 0.5 * f2 * e
            }
        }
    });
    let truth = match model.true_basis() {
        Some(b) => Truth::Basis(b),
        None => Truth::Functions(phi),
    };
    Ok((Dataset::new(x, y)?, truth))
}

/// Estimators compared in the tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    #[serde(rename = "SIR")]
    Sir,
    #[serde(rename = "SAVE")]
    Save,
    #[serde(rename = "PALS")]
    Pals,
    #[serde(rename = "DC-PALS")]
    DcPals,
    #[serde(rename = "kPALS")]
    KPals,
    #[serde(rename = "DC-kPALS")]
    DcKPals,
}

impl Method {
    pub fn is_nonlinear(self) -> bool {
        matches!(self, Method::KPals | Method::DcKPals)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Sir => "SIR",
            Method::Save => "SAVE",
            Method::Pals => "PALS",
            Method::DcPals => "DC-PALS",
            Method::KPals => "kPALS",
            Method::DcKPals => "DC-kPALS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PalsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sir" => Ok(Method::Sir),
            "save" => Ok(Method::Save),
            "pals" => Ok(Method::Pals),
            "dc-pals" | "dcpals" => Ok(Method::DcPals),
            "kpals" => Ok(Method::KPals),
            "dc-kpals" | "dckpals" => Ok(Method::DcKPals),
            other => Err(PalsError::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// How λ was chosen for a reported column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    /// Method has no λ.
    None,
    Fixed(f64),
    /// The fixed λ with the best mean in this cell.
    BestFixed(f64),
    /// Distance-correlation selection per repetition.
    DistanceCorrelation,
}

impl fmt::Display for LambdaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaPolicy::None => f.write_str("none"),
            LambdaPolicy::Fixed(l) => write!(f, "fixed:{l}"),
            LambdaPolicy::BestFixed(l) => write!(f, "best-fixed:{l}"),
            LambdaPolicy::DistanceCorrelation => f.write_str("dc"),
        }
    }
}

impl Serialize for LambdaPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Monte Carlo summary of one (cell, method, λ policy).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCReport {
    pub model: ModelId,
    #[serde(serialize_with = "display")]
    pub case: PredictorCase,
    pub n: usize,
    pub p: usize,
    pub method: Method,
    pub lambda_policy: LambdaPolicy,
    pub reps: usize,
    /// Δ for linear models, Υ for nonlinear ones, per successful repetition.
    pub values: Vec<f64>,
    pub mean: f64,
    /// `SD / √reps`; absent with a single successful repetition.
    pub se: Option<f64>,
    pub failures: usize,
    pub seeds: Vec<u64>,
}

fn display<T: fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Mean and `SD/√k` (sample SD, divisor `k − 1`).
pub fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, Some(var.sqrt() / (k as f64).sqrt()))
}

/// One table cell: a model at a sample size, scored for several methods.
#[derive(Debug, Clone)]
pub struct TableConfig {
    pub model: SimModel,
    pub n: usize,
    pub methods: Vec<Method>,
    /// Fixed λ values for PALS/kPALS, also the DC candidate grid.
    pub lambdas: Vec<f64>,
    pub grid: LevelGrid,
    pub reps: usize,
    pub base_seed: u64,
    /// Worker threads; `None` uses the global rayon default.
    pub jobs: Option<usize>,
    /// Kernel basis size, `⌊n/2⌋` when absent.
    pub basis_size: Option<usize>,
    pub solver: SolverOptions,
}

impl TableConfig {
    pub fn new(model: SimModel, n: usize, methods: Vec<Method>, reps: usize, base_seed: u64) -> Self {
        Self {
            model,
            n,
            methods,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            grid: LevelGrid::default(),
            reps,
            base_seed,
            jobs: None,
            basis_size: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Builds a pool with `jobs` threads (or the default) and runs `f` in it.
pub fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(PalsError::InvalidArgument("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| PalsError::Numerical(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

type Column = (Method, LambdaPolicy);
type RepOutcome = Vec<(Column, std::result::Result<f64, String>)>;

fn score(truth: &Truth, data: &Dataset, basis: &DMatrix<f64>) -> Result<f64> {
    match truth {
        Truth::Basis(b) => metrics::delta(b, basis).map(|d| d.value()),
        Truth::Functions(_) => Err(PalsError::InvalidArgument(
            "linear estimate scored against nonlinear truth".into(),
        )),
    }
    .inspect(|_| debug_assert_eq!(data.p(), basis.nrows()))
}

fn run_rep(cfg: &TableConfig, lambdas: &[f64], bandwidth: Option<f64>, seed: u64) -> RepOutcome {
    let mut out: RepOutcome = Vec::new();
    let (data, truth) = match generate(&cfg.model, cfg.n, seed) {
        Ok(v) => v,
        Err(e) => {
            for column in columns(cfg, lambdas) {
                out.push((column, Err(e.to_string())));
            }
            return out;
        }
    };
    let d = cfg.model.id.dim();
    let y_col = DMatrix::from_column_slice(data.n(), 1, data.y().as_slice());
    let wants = |m: Method| cfg.methods.contains(&m);

    if wants(Method::Sir) {
        let r = fit_sir(&data, SIR_SLICES, d).and_then(|e| score(&truth, &data, &e.basis));
        out.push(((Method::Sir, LambdaPolicy::None), r.map_err(|e| e.to_string())));
    }
    if wants(Method::Save) {
        let r = fit_save(&data, SAVE_SLICES, d).and_then(|e| score(&truth, &data, &e.basis));
        out.push(((Method::Save, LambdaPolicy::None), r.map_err(|e| e.to_string())));
    }
    if wants(Method::Pals) || wants(Method::DcPals) {
        let fits: Vec<_> = lambdas.iter().map(|&l| fit_pals(&data, &cfg.grid, l, d)).collect();
        if wants(Method::Pals) {
            for (l, f) in lambdas.iter().zip(&fits) {
                let r = match f {
                    Ok(f) => score(&truth, &data, &f.estimate.basis).map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                out.push(((Method::Pals, LambdaPolicy::Fixed(*l)), r));
            }
        }
        if wants(Method::DcPals) {
            let dc = fits.iter().map(|f| {
                f.as_ref()
                    .ok()
                    .and_then(|f| metrics::dcor2(&y_col, &f.reduced_predictors(data.x())).ok())
            });
            let r = match linear::best_index(dc.collect::<Vec<_>>()) {
                Some(i) => score(&truth, &data, &fits[i].as_ref().expect("scored").estimate.basis)
                    .map_err(|e| e.to_string()),
                None => Err("every lambda failed".to_string()),
            };
            out.push(((Method::DcPals, LambdaPolicy::DistanceCorrelation), r));
        }
    }
    if wants(Method::KPals) || wants(Method::DcKPals) {
        let phi = match &truth {
            Truth::Functions(phi) => Ok(phi.clone()),
            Truth::Basis(_) => Err(PalsError::InvalidArgument(
                "kernel methods need a model with nonlinear truth".into(),
            )),
        };
        let basis = bandwidth
            .ok_or_else(|| PalsError::InvalidArgument("no bandwidth".into()))
            .and_then(|r| KernelBasis::gaussian(data.x(), r, cfg.basis_size))
            .and_then(|b| phi.map(|phi| (b, phi)))
            .map_err(|e| e.to_string());
        let fitted: Vec<std::result::Result<DMatrix<f64>, String>> = lambdas
            .iter()
            .map(|&l| match &basis {
                Ok((b, _)) => kernel::fit_on_basis(b, data.y(), &cfg.grid, l, d, &cfg.solver)
                    .and_then(|est| est.predict(data.x()))
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            })
            .collect();
        let upsilon = |phi_hat: &DMatrix<f64>| match &basis {
            Ok((_, phi)) => metrics::upsilon(phi, phi_hat).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        if wants(Method::KPals) {
            for (l, f) in lambdas.iter().zip(&fitted) {
                let r = match f {
                    Ok(phi_hat) => upsilon(phi_hat),
                    Err(e) => Err(e.clone()),
                };
                out.push(((Method::KPals, LambdaPolicy::Fixed(*l)), r));
            }
        }
        if wants(Method::DcKPals) {
            let dc: Vec<Option<f64>> = fitted
                .iter()
                .map(|f| f.as_ref().ok().and_then(|ph| metrics::dcor2(&y_col, ph).ok()))
                .collect();
            let r = match linear::best_index(dc) {
                Some(i) => upsilon(fitted[i].as_ref().expect("scored")),
                None => Err("every lambda failed".to_string()),
            };
            out.push(((Method::DcKPals, LambdaPolicy::DistanceCorrelation), r));
        }
    }
    out
}

fn columns(cfg: &TableConfig, lambdas: &[f64]) -> Vec<Column> {
    let mut cols = Vec::new();
    for &m in &[Method::Sir, Method::Save, Method::Pals, Method::DcPals, Method::KPals, Method::DcKPals] {
        if !cfg.methods.contains(&m) {
            continue;
        }
        match m {
            Method::Sir | Method::Save => cols.push((m, LambdaPolicy::None)),
            Method::Pals | Method::KPals => {
                cols.extend(lambdas.iter().map(|&l| (m, LambdaPolicy::Fixed(l))))
            }
            Method::DcPals | Method::DcKPals => cols.push((m, LambdaPolicy::DistanceCorrelation)),
        }
    }
    cols
}

fn validate(cfg: &TableConfig) -> Result<()> {
    if cfg.reps == 0 {
        return Err(PalsError::InvalidArgument("reps must be at least 1".into()));
    }
    if cfg.methods.is_empty() {
        return Err(PalsError::InvalidArgument("no methods requested".into()));
    }
    let nonlinear = cfg.model.id.is_nonlinear();
    if let Some(m) = cfg.methods.iter().find(|m| m.is_nonlinear() != nonlinear) {
        return Err(PalsError::InvalidArgument(format!(
            "method {m} does not apply to model {}",
            cfg.model.id
        )));
    }
    Ok(())
}

/// Runs one table cell. Reports come in a fixed column order: SIR, SAVE,
/// PALS per λ, PALS best fixed λ, DC-PALS, then the kernel analogues.
pub fn run_table(cfg: &TableConfig) -> Result<Vec<MCReport>> {
    validate(cfg)?;
    let lambdas = linear::prepare_lambdas(&cfg.lambdas)?;
    let bandwidth = if cfg.methods.iter().any(|m| m.is_nonlinear()) {
        Some(kernel::default_bandwidth(cfg.model.p, DEFAULT_BANDWIDTH_PAIRS)?)
    } else {
        None
    };
    let seeds: Vec<u64> = (0..cfg.reps as u64).map(|r| cfg.base_seed.wrapping_add(r)).collect();
    let outcomes: Vec<RepOutcome> = with_pool(cfg.jobs, || {
        seeds
            .par_iter()
            .map(|&s| run_rep(cfg, &lambdas, bandwidth, s))
            .collect()
    })?;

    let mut reports = Vec::new();
    for (k, column) in columns(cfg, &lambdas).into_iter().enumerate() {
        let mut values = Vec::with_capacity(cfg.reps);
        let mut ok_seeds = Vec::with_capacity(cfg.reps);
        let mut failures = 0;
        for (rep, outcome) in outcomes.iter().enumerate() {
            let (col, r) = &outcome[k];
            debug_assert_eq!(*col, column);
            match r {
                Ok(v) => {
                    values.push(*v);
                    ok_seeds.push(seeds[rep]);
                }
                Err(e) => {
                    failures += 1;
                    warn!("{} {} seed {}: {e}", column.0, column.1, seeds[rep]);
                }
            }
        }
        if failures as f64 > MAX_FAILURE_FRACTION * cfg.reps as f64 || values.is_empty() {
            return Err(PalsError::Numerical(format!(
                "model {} n={} {} ({}): {failures} of {} repetitions failed",
                cfg.model.id, cfg.n, column.0, column.1, cfg.reps
            )));
        }
        let (mean, se) = mean_se(&values);
        reports.push(MCReport {
            model: cfg.model.id,
            case: cfg.model.case,
            n: cfg.n,
            p: cfg.model.p,
            method: column.0,
            lambda_policy: column.1,
            reps: cfg.reps,
            values,
            mean,
            se,
            failures,
            seeds: ok_seeds,
        });
    }
    insert_best_fixed(&mut reports, cfg.model.id.is_nonlinear());
    info!(
        "model {} case {} n={} p={}: {} columns over {} reps",
        cfg.model.id, cfg.model.case, cfg.n, cfg.model.p, reports.len(), cfg.reps
    );
    Ok(reports)
}

/// Adds a labeled copy of the best fixed-λ column after each block of fixed
/// columns: smallest mean Δ, or largest mean Υ.
fn insert_best_fixed(reports: &mut Vec<MCReport>, larger_is_better: bool) {
    let mut i = 0;
    while i < reports.len() {
        if !matches!(reports[i].lambda_policy, LambdaPolicy::Fixed(_)) {
            i += 1;
            continue;
        }
        let method = reports[i].method;
        let end = (i..reports.len())
            .find(|&j| reports[j].method != method || !matches!(reports[j].lambda_policy, LambdaPolicy::Fixed(_)))
            .unwrap_or(reports.len());
        let mut best = i;
        for j in i + 1..end {
            let better = if larger_is_better {
                reports[j].mean > reports[best].mean
            } else {
                reports[j].mean < reports[best].mean
            };
            if better {
                best = j;
            }
        }
        let mut copy = reports[best].clone();
        if let LambdaPolicy::Fixed(l) = copy.lambda_policy {
            copy.lambda_policy = LambdaPolicy::BestFixed(l);
        }
        reports.insert(end, copy);
        i = end + 1;
    }
}

#[derive(Serialize)]
struct Row<'a> {
    schema_version: u32,
    model: String,
    case: String,
    n: usize,
    p: usize,
    method: &'a str,
    lambda_policy: String,
    reps: usize,
    mean: f64,
    se: Option<f64>,
    failures: usize,
}

impl<'a> From<&'a MCReport> for Row<'a> {
    fn from(r: &'a MCReport) -> Self {
        Row {
            schema_version: SCHEMA_VERSION,
            model: r.model.to_string(),
            case: r.case.to_string(),
            n: r.n,
            p: r.p,
            method: r.method.name(),
            lambda_policy: r.lambda_policy.to_string(),
            reps: r.reps,
            mean: r.mean,
            se: r.se,
            failures: r.failures,
        }
    }
}

/// Header `schema_version,model,case,n,p,method,lambda_policy,reps,mean,se,failures`;
/// an absent SE is an empty field.
pub fn write_csv<W: Write>(reports: &[MCReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(Row::from(r))?;
    }
    if reports.is_empty() {
        w.write_record([
            "schema_version", "model", "case", "n", "p", "method", "lambda_policy", "reps", "mean", "se",
            "failures",
        ])?;
    }
    w.flush().map_err(|e| PalsError::Io {
        path: "<table>".into(),
        source: e,
    })
}

#[derive(Serialize)]
struct JsonTable<'a> {
    schema_version: u32,
    rows: &'a [MCReport],
}

/// Full reports, including per-repetition values and seeds.
pub fn write_json<W: Write>(reports: &[MCReport], out: W) -> Result<()> {
    serde_json::to_writer_pretty(
        out,
        &JsonTable {
            schema_version: SCHEMA_VERSION,
            rows: reports,
        },
    )
    .map_err(|e| PalsError::Numerical(format!("cannot serialize table: {e}")))
}

/// Rate and normality summary for linear PALS at fixed λ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub model: ModelId,
    #[serde(serialize_with = "display")]
    pub case: PredictorCase,
    pub p: usize,
    pub lambda: f64,
    pub reps: usize,
    pub n_list: Vec<usize>,
    pub mean_delta: Vec<f64>,
    /// Least-squares slope of `ln mean Δ` on `ln n`.
    pub slope: f64,
    /// Name of the scalar summarized below.
    pub functional: &'static str,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub low_confidence: bool,
}

/// Repetitions below this are flagged as low-confidence.
pub const CONFIDENT_REPS: usize = 30;

/// Population skewness and excess kurtosis.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let m = |q: i32| values.iter().map(|v| (v - mean).powi(q)).sum::<f64>() / k;
    let m2 = m(2);
    if m2 <= 0.0 {
        return (0.0, 0.0);
    }
    (m(3) / m2.powf(1.5), m(4) / (m2 * m2) - 3.0)
}

pub fn log_log_slope(ns: &[usize], means: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Mean Δ of PALS at each n, the log-log slope, and the shape of `Λ̂[0,0]`
/// across repetitions at the largest n.
pub fn consistency_diagnostic(
    model: &SimModel,
    lambda: f64,
    n_list: &[usize],
    reps: usize,
    base_seed: u64,
    jobs: Option<usize>,
) -> Result<ConsistencyReport> {
    if model.id.is_nonlinear() {
        return Err(PalsError::InvalidArgument("diagnostic needs a linear model".into()));
    }
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PalsError::InvalidArgument("n list must be increasing with at least 2 entries".into()));
    }
    if reps < 2 {
        return Err(PalsError::InvalidArgument("diagnostic needs at least 2 repetitions".into()));
    }
    let grid = LevelGrid::default();
    let d = model.id.dim();
    let per_n: Vec<Vec<(f64, f64)>> = with_pool(jobs, || {
        n_list
            .iter()
            .map(|&n| {
                (0..reps as u64)
                    .into_par_iter()
                    .map(|r| {
                        let (data, truth) = generate(model, n, base_seed.wrapping_add(r))?;
                        let fit = fit_pals(&data, &grid, lambda, d)?;
                        let delta = score(&truth, &data, &fit.estimate.basis)?;
                        Ok((delta, fit.candidate.matrix[(0, 0)]))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mean_delta: Vec<f64> = per_n
        .iter()
        .map(|v| v.iter().map(|p| p.0).sum::<f64>() / v.len() as f64)
        .collect();
    let last: Vec<f64> = per_n.last().expect("non-empty").iter().map(|p| p.1).collect();
    let (skewness, excess_kurtosis) = moments(&last);
    let low_confidence = reps < CONFIDENT_REPS;
    if low_confidence {
        warn!("consistency diagnostic with {reps} repetitions is low-confidence");
    }
    Ok(ConsistencyReport {
        model: model.id,
        case: model.case,
        p: model.p,
        lambda,
        reps,
        n_list: n_list.to_vec(),
        slope: log_log_slope(n_list, &mean_delta),
        mean_delta,
        functional: "Lambda[0,0]",
        skewness,
        excess_kurtosis,
        low_confidence,
    })
}
