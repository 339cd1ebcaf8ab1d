//! Penalized asymmetric least squares at a single expectile level.
//!
//! The problem, in whitened coordinates `Z` (column-centered), is
//!
//! ```text
//! minimize  θᵀθ + λ̃ Σ_i ρ_τ(Y_i − α − θᵀZ_i),     λ̃ = λ / n
//! ```
//!
//! with `ρ_τ(c) = τc²` for `c > 0` and `(1 − τ)c²` otherwise. The intercept is
//! not penalized. [`solve_primal`] is the production path (damped iteratively
//! reweighted ridge regression). [`solve_dual`] maximizes the concave dual
//! quadratic program over `(a, η) ≥ 0` with `Σ(a − η) = 0` and recovers
//! `θ = ½ Zᵀ(a − η)`; together with [`verify_kkt`] it certifies the primal answer.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::Standardizer;
use crate::error::{PalsError, Result};
use crate::linalg;

/// An expectile level τ in the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct ExpectileLevel(f64);

impl ExpectileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(PalsError::InvalidArgument(format!(
                "expectile level must lie in (0, 1), got {tau}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The level `1 − τ`.
    pub fn complement(self) -> Self {
        Self(1.0 - self.0)
    }
}

/// Asymmetric squared loss.
pub fn rho(tau: ExpectileLevel, c: f64) -> f64 {
    weight(tau, c) * c * c
}

/// Derivative of [`rho`]; continuous, zero at the origin.
pub fn rho_derivative(tau: ExpectileLevel, c: f64) -> f64 {
    2.0 * weight(tau, c) * c
}

/// IRLS weight. An exactly zero residual takes weight τ.
#[inline]
fn weight(tau: ExpectileLevel, r: f64) -> f64 {
    if r >= 0.0 {
        tau.0
    } else {
        1.0 - tau.0
    }
}

/// The τ-expectile of a sample: the root of `τ Σ_{v>m}(v − m) = (1 − τ) Σ_{v<m}(m − v)`.
pub fn sample_expectile(values: &[f64], tau: ExpectileLevel) -> f64 {
    assert!(!values.is_empty(), "expectile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let t = tau.0;
    let total: f64 = v.iter().sum();
    // With the k smallest values below the root, the balance equation is linear in m.
    let mut low_sum = 0.0;
    for k in 0..=n {
        if k > 0 {
            low_sum += v[k - 1];
        }
        let high_sum = total - low_sum;
        let denom = t * (n - k) as f64 + (1.0 - t) * k as f64;
        let m = (t * high_sum + (1.0 - t) * low_sum) / denom;
        let lo = if k == 0 { f64::NEG_INFINITY } else { v[k - 1] };
        let hi = if k == n { f64::INFINITY } else { v[k] };
        if m >= lo && m <= hi {
            return m;
        }
    }
    // rounding can push the root a hair outside every bracket
    total / n as f64
}

/// Borrowed view of one single-level problem.
#[derive(Debug, Clone, Copy)]
pub struct ExpectileProblem<'a> {
    z: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    tau: ExpectileLevel,
    lambda: f64,
    lambda_tilde: f64,
}

impl<'a> ExpectileProblem<'a> {
    pub fn new(
        z: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        tau: ExpectileLevel,
        lambda: f64,
    ) -> Result<Self> {
        if z.nrows() != y.len() {
            return Err(PalsError::DimensionMismatch(format!(
                "{} predictor rows but {} responses",
                z.nrows(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(PalsError::InvalidData("empty problem".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(PalsError::InvalidArgument(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        Ok(Self {
            z,
            y,
            tau,
            lambda,
            lambda_tilde: lambda / y.len() as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn tau(&self) -> ExpectileLevel {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The internal loss scale `λ̃ = λ / n`.
    pub fn lambda_tilde(&self) -> f64 {
        self.lambda_tilde
    }

    /// `r = Y − α − Zθ`.
    pub fn residuals(&self, alpha: f64, theta: &DVector<f64>) -> DVector<f64> {
        let mut r = self.y - self.z * theta;
        r.add_scalar_mut(-alpha);
        r
    }

    pub fn objective(&self, alpha: f64, theta: &DVector<f64>) -> f64 {
        let r = self.residuals(alpha, theta);
        theta.norm_squared() + self.lambda_tilde * r.iter().map(|&c| rho(self.tau, c)).sum::<f64>()
    }

    /// Exact gradient `(∂/∂α, ∂/∂θ)`.
    pub fn gradient(&self, alpha: f64, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = self.residuals(alpha, theta);
        let wr = r.map(|c| weight(self.tau, c) * c);
        let g_alpha = -2.0 * self.lambda_tilde * wr.sum();
        let g_theta = theta * 2.0 - self.z.tr_mul(&wr) * (2.0 * self.lambda_tilde);
        (g_alpha, g_theta)
    }

    /// Concave dual objective at `(a, η)`.
    pub fn dual_objective(&self, a: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        let s = a - eta;
        let zs = self.z.tr_mul(&s);
        let t = self.tau.0;
        s.dot(self.y)
            - 0.25 * zs.norm_squared()
            - a.norm_squared() / (4.0 * self.lambda_tilde * t)
            - eta.norm_squared() / (4.0 * self.lambda_tilde * (1.0 - t))
    }

    /// Intercept minimizing the objective for fixed θ.
    pub fn optimal_intercept(&self, theta: &DVector<f64>) -> f64 {
        let e = self.y - self.z * theta;
        sample_expectile(e.as_slice(), self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the largest parameter change.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Solution of one expectile level.
#[derive(Debug, Clone)]
pub struct ExpectileFit {
    pub alpha: f64,
    /// Coefficients in whitened coordinates.
    pub theta: DVector<f64>,
    /// Coefficients on the original predictor scale; equals `theta` until
    /// [`ExpectileFit::with_whitener`] is applied.
    pub beta: DVector<f64>,
    pub tau: ExpectileLevel,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the full gradient at the returned point.
    pub kkt_residual: f64,
    /// Primal minus dual objective; only set by the dual path.
    pub duality_gap: Option<f64>,
    /// A weighted system had to be solved with an eigenvalue-floored pseudo-inverse.
    pub pseudo_solve: bool,
}

impl ExpectileFit {
    /// Sets `beta = Σ̂^{-1/2} θ`.
    pub fn with_whitener(mut self, st: &Standardizer) -> Self {
        self.beta = st.to_original(&self.theta);
        self
    }
}

fn solve_symmetric(a: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    let dec = linalg::sym_eigen(&a)?;
    let top = dec.values.iter().cloned().fold(0.0_f64, f64::max);
    let floor = 1e-12 * top.max(f64::MIN_POSITIVE);
    let coef = dec.vectors.tr_mul(b);
    let scaled = DVector::from_iterator(
        coef.len(),
        coef.iter()
            .zip(dec.values.iter())
            .map(|(c, &v)| c / v.max(floor)),
    );
    Ok((&dec.vectors * scaled, true))
}

/// Minimizes the primal objective by damped iteratively reweighted ridge
/// regression, jointly in (α, θ).
pub fn solve_primal(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: ExpectileLevel,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<ExpectileFit> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(PalsError::InvalidArgument("solver tolerance must be positive".into()));
    }
    let prob = ExpectileProblem::new(z, y, tau, lambda)?;
    let (n, p) = (prob.n(), prob.p());
    let lt = prob.lambda_tilde;

    let mut alpha = y.mean();
    let mut theta = DVector::<f64>::zeros(p);
    let mut obj = prob.objective(alpha, &theta);
    let mut converged = false;
    let mut pseudo = false;
    let mut iterations = 0;

    let mut weights = prob.residuals(alpha, &theta).map(|r| weight(tau, r));
    while iterations < opts.max_iter {
        iterations += 1;

        // Weighted penalized normal equations in (α, θ):
        // [ Σw    wᵀZ          ] [α]   [ wᵀY  ]
        // [ Zᵀw   ZᵀWZ + I/λ̃   ] [θ] = [ ZᵀWY ]
        let mut sys = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut rhs = DVector::<f64>::zeros(p + 1);
        let mut wz = z.clone();
        for i in 0..n {
            wz.row_mut(i).scale_mut(weights[i]);
        }
        sys[(0, 0)] = weights.sum();
        let ztw = wz.row_sum_tr();
        sys.view_mut((1, 0), (p, 1)).copy_from(&ztw);
        sys.view_mut((0, 1), (1, p)).copy_from(&ztw.transpose());
        let mut zwz = wz.tr_mul(z);
        for j in 0..p {
            zwz[(j, j)] += 1.0 / lt;
        }
        sys.view_mut((1, 1), (p, p)).copy_from(&((&zwz + zwz.transpose()) * 0.5));
        rhs[0] = weights.dot(y);
        rhs.rows_mut(1, p).copy_from(&wz.tr_mul(y));

        let (cand, used_pseudo) = solve_symmetric(sys, &rhs)?;
        if used_pseudo && !pseudo {
            warn!("weighted system was singular; using eigenvalue-floored pseudo-solve");
        }
        pseudo |= used_pseudo;

        let d_alpha = cand[0] - alpha;
        let d_theta = cand.rows(1, p) - &theta;

        // Backtrack along the reweighted step until the objective does not increase.
        let mut step = 1.0;
        let (mut next_alpha, mut next_theta, mut next_obj);
        loop {
            next_alpha = alpha + step * d_alpha;
            next_theta = &theta + &d_theta * step;
            next_obj = prob.objective(next_alpha, &next_theta);
            if next_obj <= obj + 1e-14 * (1.0 + obj.abs()) || step < 1e-10 {
                break;
            }
            step *= 0.5;
        }
        if next_obj > obj {
            // no descent possible along this direction: at the optimum up to rounding
            converged = true;
            break;
        }

        let change = (step * d_alpha).abs().max(d_theta.amax() * step);
        alpha = next_alpha;
        theta = next_theta;
        obj = next_obj;

        let new_weights = prob.residuals(alpha, &theta).map(|r| weight(tau, r));
        let stable = step == 1.0 && new_weights == weights;
        weights = new_weights;
        if stable || change < opts.tol {
            converged = true;
            break;
        }
    }

    let (ga, gt) = prob.gradient(alpha, &theta);
    let kkt_residual = (ga * ga + gt.norm_squared()).sqrt();
    if !converged {
        warn!(
            "expectile solver hit max_iter={} at tau={} (gradient norm {kkt_residual:e})",
            opts.max_iter,
            tau.value()
        );
    }
    Ok(ExpectileFit {
        alpha,
        beta: theta.clone(),
        theta,
        tau,
        lambda,
        objective: obj,
        iterations,
        converged,
        kkt_residual,
        duality_gap: None,
        pseudo_solve: pseudo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    /// Threshold on the sup-norm of the projected gradient step, in units of
    /// the response (relative to `1 + max |Y|`).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200_000,
        }
    }
}

/// Dual variables of one expectile level.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub a: DVector<f64>,
    pub eta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection of `(a, η)` onto `{a ≥ 0, η ≥ 0, Σa = Ση}`.
///
/// The projection is `a_i = (v_i − μ)_+`, `η_i = (w_i + μ)_+` for the unique
/// shift μ balancing both sums; the balance function is piecewise linear and
/// nonincreasing in μ, so the root is located exactly between breakpoints.
pub fn project_dual_feasible(a: &DVector<f64>, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let balance = |mu: f64| -> f64 {
        a.iter().map(|&v| (v - mu).max(0.0)).sum::<f64>()
            - eta.iter().map(|&w| (w + mu).max(0.0)).sum::<f64>()
    };
    let mut bps: Vec<f64> = a.iter().cloned().chain(eta.iter().map(|w| -w)).collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();

    let mu = {
        let mut found = None;
        let mut prev: Option<(f64, f64)> = None;
        for &b in &bps {
            let h = balance(b);
            if h == 0.0 {
                found = Some(b);
                break;
            }
            if h < 0.0 {
                found = Some(match prev {
                    Some((pb, ph)) => pb + ph * (b - pb) / (ph - h),
                    None => {
                        // below the first breakpoint every a-term is active
                        b + h / a.len() as f64
                    }
                });
                break;
            }
            prev = Some((b, h));
        }
        // the balance is never positive at the last breakpoint
        found.unwrap_or_else(|| bps[bps.len() - 1])
    };
    (
        a.map(|v| (v - mu).max(0.0)),
        eta.map(|w| (w + mu).max(0.0)),
    )
}

/// Solves the dual quadratic program by accelerated projected gradient ascent
/// with backtracking and adaptive restart, then recovers the primal fit.
pub fn solve_dual(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: ExpectileLevel,
    lambda: f64,
    opts: &DualOptions,
) -> Result<(DualSolution, ExpectileFit)> {
    let prob = ExpectileProblem::new(z, y, tau, lambda)?;
    let n = prob.n();
    let lt = prob.lambda_tilde;
    let t = tau.value();
    let ca = 1.0 / (2.0 * lt * t);
    let ce = 1.0 / (2.0 * lt * (1.0 - t));

    // Minimize g = −dual. ∇_a g = −Y + ½ZZᵀs + c_a a, ∇_η g = Y − ½ZZᵀs + c_e η.
    let grad = |a: &DVector<f64>, e: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let s = a - e;
        let zzs = z * z.tr_mul(&s) * 0.5;
        let ga = &zzs - y + a * ca;
        let ge = y - &zzs + e * ce;
        (ga, ge)
    };
    // Exact curvature ½ dᵀHd of the quadratic along a step (no cancellation).
    let curvature = |da: &DVector<f64>, de: &DVector<f64>| -> f64 {
        let zs = z.tr_mul(&(da - de));
        0.25 * zs.norm_squared() + 0.5 * ca * da.norm_squared() + 0.5 * ce * de.norm_squared()
    };

    let scale = 1.0 + y.amax();
    let mut xa = DVector::<f64>::zeros(n);
    let mut xe = DVector::<f64>::zeros(n);
    let mut ya = xa.clone();
    let mut ye = xe.clone();
    let mut momentum = 1.0_f64;
    let mut lip = ca.max(ce);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let (ga, ge) = grad(&ya, &ye);
        let (na, ne) = loop {
            let (pa, pe) = project_dual_feasible(&(&ya - &ga / lip), &(&ye - &ge / lip));
            let da = &pa - &ya;
            let de = &pe - &ye;
            let step_sq = da.norm_squared() + de.norm_squared();
            if curvature(&da, &de) <= 0.5 * lip * step_sq * (1.0 + 1e-12) {
                break (pa, pe);
            }
            lip *= 2.0;
        };

        let mapping = (&na - &ya).amax().max((&ne - &ye).amax()) * lip;
        // restart momentum when the step points against the previous progress
        let restart = (&ya - &na).dot(&(&na - &xa)) + (&ye - &ne).dot(&(&ne - &xe)) > 0.0;
        let next_m = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt())
        };
        let beta = if restart { 0.0 } else { (momentum - 1.0) / next_m };
        ya = &na + (&na - &xa) * beta;
        ye = &ne + (&ne - &xe) * beta;
        xa = na;
        xe = ne;
        momentum = next_m;

        if mapping <= opts.tol * scale {
            converged = true;
            break;
        }
    }

    let theta = z.tr_mul(&(&xa - &xe)) * 0.5;
    let alpha = prob.optimal_intercept(&theta);
    let primal = prob.objective(alpha, &theta);
    let dual_value = prob.dual_objective(&xa, &xe);
    let (ga, gt) = prob.gradient(alpha, &theta);
    if !converged {
        warn!(
            "dual solver hit max_iter={} at tau={} (gap {:e})",
            opts.max_iter,
            t,
            primal - dual_value
        );
    }
    let fit = ExpectileFit {
        alpha,
        beta: theta.clone(),
        theta,
        tau,
        lambda,
        objective: primal,
        iterations,
        converged,
        kkt_residual: (ga * ga + gt.norm_squared()).sqrt(),
        duality_gap: Some(primal - dual_value),
        pseudo_solve: false,
    };
    Ok((
        DualSolution {
            a: xa,
            eta: xe,
            iterations,
            converged,
        },
        fit,
    ))
}

/// Largest violation of each Karush-Kuhn-Tucker condition of the slack
/// formulation, evaluated at a primal fit and a dual point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// `|ξ_{i+} − a_i / (2λ̃τ)|`
    pub slack_positive: f64,
    /// `|ξ_{i−} − η_i / (2λ̃(1−τ))|`
    pub slack_negative: f64,
    /// `‖θ − ½ Σ (a_i − η_i) Z_i‖_∞`
    pub stationarity: f64,
    /// `|Σ (a_i − η_i)|`
    pub intercept_balance: f64,
    /// Most negative entry of `a` or `η`, as a positive number.
    pub dual_feasibility: f64,
    /// `max |a_i (r_i − ξ_{i+})|, |η_i (−r_i − ξ_{i−})|`
    pub complementary_slackness: f64,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.slack_positive,
            self.slack_negative,
            self.stationarity,
            self.intercept_balance,
            self.dual_feasibility,
            self.complementary_slackness,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn verify_kkt(
    fit: &ExpectileFit,
    dual: &DualSolution,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<KktReport> {
    let prob = ExpectileProblem::new(z, y, fit.tau, fit.lambda)?;
    if dual.a.len() != prob.n() || dual.eta.len() != prob.n() || fit.theta.len() != prob.p() {
        return Err(PalsError::DimensionMismatch(
            "fit, dual and data dimensions disagree".into(),
        ));
    }
    let lt = prob.lambda_tilde;
    let t = fit.tau.value();
    let r = prob.residuals(fit.alpha, &fit.theta);
    let s = &dual.a - &dual.eta;

    let mut rep = KktReport {
        slack_positive: 0.0,
        slack_negative: 0.0,
        stationarity: (&fit.theta - z.tr_mul(&s) * 0.5).amax(),
        intercept_balance: s.sum().abs(),
        dual_feasibility: 0.0,
        complementary_slackness: 0.0,
    };
    for i in 0..prob.n() {
        let xi_pos = r[i].max(0.0);
        let xi_neg = (-r[i]).max(0.0);
        let (a, e) = (dual.a[i], dual.eta[i]);
        rep.slack_positive = rep.slack_positive.max((xi_pos - a / (2.0 * lt * t)).abs());
        rep.slack_negative = rep
            .slack_negative
            .max((xi_neg - e / (2.0 * lt * (1.0 - t))).abs());
        rep.dual_feasibility = rep.dual_feasibility.max((-a).max(0.0)).max((-e).max(0.0));
        rep.complementary_slackness = rep
            .complementary_slackness
            .max((a * (r[i] - xi_pos)).abs())
            .max((e * (-r[i] - xi_neg)).abs());
    }
    Ok(rep)
}
