use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::info;
use nalgebra::DMatrix;
use pals::data::{read_csv, ColumnRef, CsvOptions, Dataset, LoadReport};
use pals::kernel::{self, KernelBasis, KernelOptions, NonlinearEstimate, DEFAULT_BANDWIDTH_PAIRS};
use pals::linear::{self, LambdaScore, PalsFit, DEFAULT_LAMBDAS};
use pals::simlab::{self, Method, ModelId, PredictorCase, SimModel, TableConfig, Truth};
use pals::{dcor2, upsilon, ExpectileFit, LevelGrid, PalsError, Result};
use serde::Serialize;

use crate::{
    Common, DiagnoseArgs, EstimatorArgs, FitArgs, Format, GenerateArgs, InputArgs, KernelFitArgs,
    SimulateArgs,
};

pub const SCHEMA_VERSION: u32 = simlab::SCHEMA_VERSION;

fn io_error(path: &Path, source: io::Error) -> PalsError {
    PalsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs `write` against the `--out` file or stdout.
fn emit(common: &Common, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &common.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush().map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush().map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn write_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)
        .map_err(|e| PalsError::Numerical(format!("cannot serialize output: {e}")))?;
    writeln!(w).map_err(|e| io_error(Path::new("<output>"), e))
}

/// The one-line summary goes to stdout when the artifact is a file, so it
/// never interleaves with machine-readable output.
fn summary(common: &Common, line: &str) {
    if common.out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn grid(taus: &[f64]) -> Result<LevelGrid> {
    if taus.is_empty() {
        Ok(LevelGrid::default())
    } else {
        LevelGrid::new(taus)
    }
}

fn lambdas(est: &EstimatorArgs) -> Result<Vec<f64>> {
    let raw = match (est.lambda, est.lambda_grid.is_empty()) {
        (Some(l), _) => vec![l],
        (None, false) => est.lambda_grid.clone(),
        (None, true) => DEFAULT_LAMBDAS.to_vec(),
    };
    linear::prepare_lambdas(&raw)
}

fn load(input: &InputArgs, extra_drop: &[ColumnRef]) -> Result<(Dataset, LoadReport)> {
    let mut opts = CsvOptions::new(input.response.clone());
    opts.drop = input.drop.iter().chain(extra_drop).cloned().collect();
    opts.exclude_where = input.exclude_where.clone();
    let file = File::open(&input.input).map_err(|e| io_error(&input.input, e))?;
    let (data, report) = read_csv(file, &opts)?;
    info!(
        "loaded {} of {} rows ({} with missing values, {} excluded)",
        report.rows_kept, report.rows_read, report.rows_missing, report.rows_excluded
    );
    Ok((data, report))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn response_column(data: &Dataset) -> DMatrix<f64> {
    DMatrix::from_column_slice(data.n(), 1, data.y().as_slice())
}

#[derive(Serialize)]
struct LevelOut {
    tau: f64,
    alpha: f64,
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
    kkt_residual: f64,
}

impl From<&ExpectileFit> for LevelOut {
    fn from(f: &ExpectileFit) -> Self {
        LevelOut {
            tau: f.tau.value(),
            alpha: f.alpha,
            beta: f.beta.iter().copied().collect(),
            iterations: f.iterations,
            converged: f.converged,
            kkt_residual: f.kkt_residual,
        }
    }
}

#[derive(Serialize)]
struct LinearFitOut {
    lambda: f64,
    dcor2: f64,
    /// p rows, one column per direction.
    basis: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    tie: bool,
    converged: bool,
    levels: Vec<LevelOut>,
}

#[derive(Serialize)]
struct FitOut<'a> {
    schema_version: u32,
    command: &'static str,
    n: usize,
    p: usize,
    d: usize,
    response: &'a str,
    predictors: &'a [String],
    rows: &'a LoadReport,
    taus: Vec<f64>,
    lambda_selection: &'static str,
    selected_lambda: Option<f64>,
    dc_scores: Option<Vec<LambdaScore>>,
    fits: Vec<LinearFitOut>,
}

fn linear_out(data: &Dataset, fit: &PalsFit) -> Result<LinearFitOut> {
    let score = dcor2(&response_column(data), &fit.reduced_predictors(data.x()))?;
    Ok(LinearFitOut {
        lambda: fit.lambda,
        dcor2: score,
        basis: rows(&fit.estimate.basis),
        eigenvalues: fit.candidate.eigenvalues.iter().copied().collect(),
        tie: fit.estimate.tie,
        converged: fit.converged(),
        levels: fit.levels.iter().map(LevelOut::from).collect(),
    })
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let (data, report) = load(&args.input, &[])?;
    let grid = grid(&args.est.taus)?;
    let lambdas = lambdas(&args.est)?;
    let d = args.est.dim;

    let (fits, selected, scores) = simlab::with_pool(args.common.jobs, || -> Result<_> {
        if args.est.dc {
            let sel = linear::dc_select_lambda(&data, &grid, &lambdas, d)?;
            Ok((vec![linear_out(&data, &sel.fit)?], Some(sel.lambda), Some(sel.scores)))
        } else {
            let fits = lambdas
                .iter()
                .map(|&l| linear::fit_pals(&data, &grid, l, d).and_then(|f| linear_out(&data, &f)))
                .collect::<Result<Vec<_>>>()?;
            Ok((fits, None, None))
        }
    })??;

    let line = fits
        .iter()
        .map(|f| format!("lambda={} dcor2={:.4}", f.lambda, f.dcor2))
        .collect::<Vec<_>>()
        .join(" ");
    summary(&args.common, &format!("fit: n={} p={} d={d} {line}", data.n(), data.p()));

    let out = FitOut {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        n: data.n(),
        p: data.p(),
        d,
        response: data.response_name(),
        predictors: data.predictor_names(),
        rows: &report,
        taus: grid.levels().iter().map(|t| t.value()).collect(),
        lambda_selection: if args.est.dc { "dc" } else { "fixed" },
        selected_lambda: selected,
        dc_scores: scores,
        fits,
    };
    emit(&args.common, |w| match args.common.format.unwrap_or(Format::Json) {
        Format::Json => write_json(w, &out),
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            let mut header = vec!["schema_version".to_string(), "lambda".into(), "predictor".into()];
            header.extend((1..=d).map(|j| format!("dir{j}")));
            c.write_record(&header)?;
            for f in &out.fits {
                for (name, row) in out.predictors.iter().zip(&f.basis) {
                    let mut rec = vec![SCHEMA_VERSION.to_string(), f.lambda.to_string(), name.clone()];
                    rec.extend(row.iter().map(f64::to_string));
                    c.write_record(&rec)?;
                }
            }
            c.flush().map_err(|e| io_error(Path::new("<output>"), e))
        }
    })
}

#[derive(Serialize)]
struct KernelFitOut {
    lambda: f64,
    dcor2: f64,
    upsilon: Option<f64>,
    /// m rows, one column per sufficient predictor.
    gamma_basis: Vec<Vec<f64>>,
    /// Sufficient predictors at the training points, n rows.
    predictors: Vec<Vec<f64>>,
    tie: bool,
    converged: bool,
}

#[derive(Serialize)]
struct KernelOut<'a> {
    schema_version: u32,
    command: &'static str,
    n: usize,
    p: usize,
    d: usize,
    m: usize,
    bandwidth: f64,
    response: &'a str,
    rows: &'a LoadReport,
    taus: Vec<f64>,
    lambda_selection: &'static str,
    selected_lambda: Option<f64>,
    dc_scores: Option<Vec<LambdaScore>>,
    fits: Vec<KernelFitOut>,
}

fn load_truth(args: &KernelFitArgs, n: usize) -> Result<Option<DMatrix<f64>>> {
    if args.truth_column.is_empty() {
        return Ok(None);
    }
    let mut cols = Vec::new();
    for col in &args.truth_column {
        let mut opts = CsvOptions::new(col.clone());
        opts.drop = args.input.drop.clone();
        opts.exclude_where = args.input.exclude_where.clone();
        let file = File::open(&args.input.input).map_err(|e| io_error(&args.input.input, e))?;
        let (truth, _) = read_csv(file, &opts)?;
        if truth.n() != n {
            return Err(PalsError::InvalidData(format!(
                "truth column {col} keeps {} rows but the fit uses {n}",
                truth.n()
            )));
        }
        cols.push(truth.y().clone());
    }
    Ok(Some(DMatrix::from_columns(&cols)))
}

pub fn kernel_fit(args: &KernelFitArgs) -> Result<()> {
    let (data, report) = load(&args.input, &args.truth_column)?;
    let truth = load_truth(args, data.n())?;
    let grid = grid(&args.est.taus)?;
    let lambdas = lambdas(&args.est)?;
    let d = args.est.dim;
    let r = match args.bandwidth {
        Some(r) => r,
        None => kernel::default_bandwidth(data.p(), DEFAULT_BANDWIDTH_PAIRS)?,
    };
    let opts = KernelOptions {
        grid: grid.clone(),
        d,
        m: args.basis_size,
        r: Some(r),
        solver: Default::default(),
    };
    let y = response_column(&data);
    let describe = |est: &NonlinearEstimate| -> Result<KernelFitOut> {
        let phi_hat = est.predict(data.x())?;
        Ok(KernelFitOut {
            lambda: est.lambda,
            dcor2: dcor2(&y, &phi_hat)?,
            upsilon: truth.as_ref().map(|t| upsilon(t, &phi_hat)).transpose()?,
            gamma_basis: rows(&est.gamma_basis),
            predictors: rows(&phi_hat),
            tie: est.tie,
            converged: est.converged(),
        })
    };

    let (m, fits, selected, scores) = simlab::with_pool(args.common.jobs, || -> Result<_> {
        if args.est.dc {
            let sel = kernel::dc_select_lambda_kernel(&data, &lambdas, &opts)?;
            let m = sel.fit.kernel_basis.m();
            Ok((m, vec![describe(&sel.fit)?], Some(sel.lambda), Some(sel.scores)))
        } else {
            let basis = KernelBasis::gaussian(data.x(), r, args.basis_size)?;
            let fits = lambdas
                .iter()
                .map(|&l| {
                    kernel::fit_on_basis(&basis, data.y(), &grid, l, d, &opts.solver)
                        .and_then(|e| describe(&e))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((basis.m(), fits, None, None))
        }
    })??;

    let line = fits
        .iter()
        .map(|f| match f.upsilon {
            Some(u) => format!("lambda={} dcor2={:.4} upsilon={u:.4}", f.lambda, f.dcor2),
            None => format!("lambda={} dcor2={:.4}", f.lambda, f.dcor2),
        })
        .collect::<Vec<_>>()
        .join(" ");
    summary(
        &args.common,
        &format!("kernel-fit: n={} p={} m={m} r={r:.4} {line}", data.n(), data.p()),
    );

    let out = KernelOut {
        schema_version: SCHEMA_VERSION,
        command: "kernel-fit",
        n: data.n(),
        p: data.p(),
        d,
        m,
        bandwidth: r,
        response: data.response_name(),
        rows: &report,
        taus: grid.levels().iter().map(|t| t.value()).collect(),
        lambda_selection: if args.est.dc { "dc" } else { "fixed" },
        selected_lambda: selected,
        dc_scores: scores,
        fits,
    };
    emit(&args.common, |w| match args.common.format.unwrap_or(Format::Json) {
        Format::Json => write_json(w, &out),
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            let mut header = vec!["schema_version".to_string(), "lambda".into(), "row".into()];
            header.extend((1..=d).map(|j| format!("phi{j}")));
            c.write_record(&header)?;
            for f in &out.fits {
                for (i, row) in f.predictors.iter().enumerate() {
                    let mut rec = vec![SCHEMA_VERSION.to_string(), f.lambda.to_string(), i.to_string()];
                    rec.extend(row.iter().map(f64::to_string));
                    c.write_record(&rec)?;
                }
            }
            c.flush().map_err(|e| io_error(Path::new("<output>"), e))
        }
    })
}

/// Cells of a simulation run, in output order.
#[derive(Debug, Serialize)]
pub struct Plan {
    pub models: Vec<ModelId>,
    pub p: Vec<usize>,
    pub cases: Vec<PredictorCase>,
    pub n: Vec<usize>,
    pub methods: Vec<Method>,
}

fn or_default<T: Clone>(given: &[T], default: &[T]) -> Vec<T> {
    if given.is_empty() {
        default.to_vec()
    } else {
        given.to_vec()
    }
}

pub fn plan(args: &SimulateArgs) -> Result<Plan> {
    use Method::*;
    use ModelId::*;
    use PredictorCase::*;
    let linear_methods = [Sir, Save, Pals, DcPals];
    let kernel_methods = [KPals, DcKPals];
    let plan = match args.table.as_deref() {
        Some("1") => Plan {
            models: or_default(&args.model, &[I, II, III]),
            p: or_default(&args.p, &[10, 15, 20]),
            cases: or_default(&args.case, &[Correlated]),
            n: or_default(&args.n, &[100]),
            methods: or_default(&args.methods, &linear_methods),
        },
        Some("2") => Plan {
            models: or_default(&args.model, &[I, II, III]),
            p: or_default(&args.p, &[10]),
            cases: or_default(&args.case, &[Independent, Correlated, Uniform]),
            n: or_default(&args.n, &[100]),
            methods: or_default(&args.methods, &linear_methods),
        },
        Some("4") => Plan {
            models: or_default(&args.model, &[IV, V]),
            p: or_default(&args.p, &[10]),
            cases: or_default(&args.case, &[Independent]),
            n: or_default(&args.n, &[100, 150, 200]),
            methods: or_default(&args.methods, &kernel_methods),
        },
        Some(other) => return Err(PalsError::InvalidArgument(format!("unknown table {other}"))),
        None => {
            if args.model.is_empty() {
                return Err(PalsError::InvalidArgument("give --table or --model".into()));
            }
            let mut methods = args.methods.clone();
            if methods.is_empty() {
                if args.model.iter().any(|m| !m.is_nonlinear()) {
                    methods.extend(linear_methods);
                }
                if args.model.iter().any(|m| m.is_nonlinear()) {
                    methods.extend(kernel_methods);
                }
            }
            Plan {
                models: args.model.clone(),
                p: or_default(&args.p, &[10]),
                cases: or_default(&args.case, &[Independent]),
                n: or_default(&args.n, &[100]),
                methods,
            }
        }
    };
    Ok(plan)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let plan = plan(args)?;
    let grid = grid(&args.taus)?;
    let lambdas = if args.lambda_grid.is_empty() {
        DEFAULT_LAMBDAS.to_vec()
    } else {
        args.lambda_grid.clone()
    };
    let mut reports = Vec::new();
    for &id in &plan.models {
        let methods: Vec<Method> = plan
            .methods
            .iter()
            .copied()
            .filter(|m| m.is_nonlinear() == id.is_nonlinear())
            .collect();
        if methods.is_empty() {
            return Err(PalsError::InvalidArgument(format!(
                "none of the requested methods applies to model {id}"
            )));
        }
        for &p in &plan.p {
            for &case in &plan.cases {
                let model = SimModel::new(id, p, case)?.with_noise_convention(args.noise);
                for &n in &plan.n {
                    let mut cfg = TableConfig::new(model.clone(), n, methods.clone(), args.reps, args.seed);
                    cfg.lambdas = lambdas.clone();
                    cfg.grid = grid.clone();
                    cfg.jobs = args.common.jobs;
                    cfg.basis_size = args.basis_size;
                    reports.extend(simlab::run_table(&cfg)?);
                }
            }
        }
    }
    summary(
        &args.common,
        &format!("simulate: {} rows, {} reps, seed {}", reports.len(), args.reps, args.seed),
    );
    emit(&args.common, |w| match args.common.format.unwrap_or(Format::Csv) {
        Format::Csv => simlab::write_csv(&reports, w),
        Format::Json => simlab::write_json(&reports, w),
    })
}

#[derive(Serialize)]
struct DiagnoseOut {
    schema_version: u32,
    command: &'static str,
    #[serde(flatten)]
    report: simlab::ConsistencyReport,
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<()> {
    let model = SimModel::new(args.model, args.p, args.case)?;
    let report =
        simlab::consistency_diagnostic(&model, args.lambda, &args.n, args.reps, args.seed, args.common.jobs)?;
    summary(
        &args.common,
        &format!(
            "diagnose: slope={:.3} skewness={:.3} excess_kurtosis={:.3}{}",
            report.slope,
            report.skewness,
            report.excess_kurtosis,
            if report.low_confidence { " (low confidence)" } else { "" }
        ),
    );
    let out = DiagnoseOut {
        schema_version: SCHEMA_VERSION,
        command: "diagnose",
        report,
    };
    emit(&args.common, |w| write_json(w, &out))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let model = SimModel::new(args.model, args.p, args.case)?.with_noise_convention(args.noise);
    let (data, truth) = simlab::generate(&model, args.n, args.seed)?;
    let phi = match &truth {
        Truth::Functions(phi) => Some(phi),
        Truth::Basis(_) => None,
    };
    emit(&args.common, |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header: Vec<String> = data.predictor_names().to_vec();
        header.push("y".into());
        if let Some(phi) = phi {
            header.extend((1..=phi.ncols()).map(|j| format!("phi{j}")));
        }
        c.write_record(&header)?;
        for i in 0..data.n() {
            let mut rec: Vec<String> = data.x().row(i).iter().map(f64::to_string).collect();
            rec.push(data.y()[i].to_string());
            if let Some(phi) = phi {
                rec.extend(phi.row(i).iter().map(f64::to_string));
            }
            c.write_record(&rec)?;
        }
        c.flush().map_err(|e| io_error(Path::new("<output>"), e))
    })
}
