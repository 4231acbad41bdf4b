//! Least-squares fits of the parametric null model `y = g(βᵀx, θ) + ε`.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{DrmaError, Result};
use crate::linalg;

/// A link `g(βᵀx, θ)` together with its derivatives.
///
/// The gradient of `g` with respect to `(β, θ)` is assembled from the
/// derivative in the index argument (times `x`) followed by the `θ` part.
pub trait Link: Send + Sync {
    fn theta_dim(&self) -> usize;

    fn value(&self, index: f64, theta: &[f64]) -> f64;

    /// ∂g/∂u at `u = index`.
    fn index_derivative(&self, index: f64, theta: &[f64]) -> f64;

    /// ∂g/∂θ, written into `out` (length `theta_dim`).
    fn theta_gradient(&self, index: f64, theta: &[f64], out: &mut [f64]);

    /// `Some(intercept)` when the model is linear in `(β, θ)` and can be fit
    /// by ordinary least squares.
    fn ols_form(&self) -> Option<bool> {
        None
    }

    /// `m(x, β, θ)`, the gradient of `g(βᵀx, θ)` in `(β, θ)`.
    fn gradient(&self, x: &[f64], beta: &[f64], theta: &[f64]) -> DVector<f64> {
        let p = x.len();
        let index = dot(x, beta);
        let d = self.index_derivative(index, theta);
        let mut out = DVector::zeros(p + self.theta_dim());
        for j in 0..p {
            out[j] = d * x[j];
        }
        self.theta_gradient(index, theta, &mut out.as_mut_slice()[p..]);
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `g(u) = u`, or `g(u, α) = u + α` with an intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearLink {
    pub intercept: bool,
}

impl Link for LinearLink {
    fn theta_dim(&self) -> usize {
        usize::from(self.intercept)
    }

    fn value(&self, index: f64, theta: &[f64]) -> f64 {
        index + theta.first().copied().unwrap_or(0.0)
    }

    fn index_derivative(&self, _: f64, _: &[f64]) -> f64 {
        1.0
    }

    fn theta_gradient(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out.fill(1.0);
    }

    fn ols_form(&self) -> Option<bool> {
        Some(self.intercept)
    }
}

/// `g(u) = u²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticLink;

impl Link for QuadraticLink {
    fn theta_dim(&self) -> usize {
        0
    }

    fn value(&self, index: f64, _: &[f64]) -> f64 {
        index * index
    }

    fn index_derivative(&self, index: f64, _: &[f64]) -> f64 {
        2.0 * index
    }

    fn theta_gradient(&self, _: f64, _: &[f64], _: &mut [f64]) {}
}

type ScalarFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type ThetaGradFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A user-supplied link built from closures.
pub struct LinkSpec {
    pub theta_dim: usize,
    pub evaluate: ScalarFn,
    pub index_derivative: ScalarFn,
    pub theta_gradient: ThetaGradFn,
}

impl Link for LinkSpec {
    fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    fn value(&self, index: f64, theta: &[f64]) -> f64 {
        (self.evaluate)(index, theta)
    }

    fn index_derivative(&self, index: f64, theta: &[f64]) -> f64 {
        (self.index_derivative)(index, theta)
    }

    fn theta_gradient(&self, index: f64, theta: &[f64], out: &mut [f64]) {
        (self.theta_gradient)(index, theta, out)
    }
}

/// Largest relative discrepancy between `link.gradient` and central finite
/// differences of `link.value` at one point.
pub fn gradient_fd_error(link: &dyn Link, x: &[f64], beta: &[f64], theta: &[f64]) -> f64 {
    let analytic = link.gradient(x, beta, theta);
    let eval = |b: &[f64], t: &[f64]| link.value(dot(x, b), t);
    let mut worst = 0.0_f64;
    for k in 0..analytic.len() {
        let mut b = beta.to_vec();
        let mut t = theta.to_vec();
        let slot = if k < beta.len() {
            &mut b[k]
        } else {
            &mut t[k - beta.len()]
        };
        let base = *slot;
        let step = 1e-6 * base.abs().max(1.0);
        *slot = base + step;
        let up = eval(&b, &t);
        let slot = if k < beta.len() {
            &mut b[k]
        } else {
            &mut t[k - beta.len()]
        };
        *slot = base - step;
        let down = eval(&b, &t);
        let fd = (up - down) / (2.0 * step);
        let err = (fd - analytic[k]).abs() / analytic[k].abs().max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedNullModel {
    pub beta_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// n⁻¹ Σ m(xᵢ) m(xᵢ)ᵀ at the estimate.
    pub sigma_x_hat: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Residual sum of squares after each accepted iterate (starting point
    /// first).
    pub rss_history: Vec<f64>,
}

impl FittedNullModel {
    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }

    /// `(β̂, θ̂)` stacked.
    pub fn parameters(&self) -> DVector<f64> {
        let p = self.beta_hat.len();
        DVector::from_fn(p + self.theta_hat.len(), |i, _| {
            if i < p {
                self.beta_hat[i]
            } else {
                self.theta_hat[i - p]
            }
        })
    }
}

const MAX_CONDITION: f64 = 1e10;

/// Ordinary least squares of `y` on `x`, optionally with an intercept
/// (stored as the single θ component).
pub fn fit_ols(data: &Dataset, intercept: bool) -> Result<FittedNullModel> {
    let (n, p) = (data.n(), data.p());
    let cols = p + usize::from(intercept);
    if n < cols {
        return Err(DrmaError::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    let design = DMatrix::from_fn(n, cols, |i, j| if j < p { data.x[(i, j)] } else { 1.0 });
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (max, min) = sv
        .iter()
        .fold((0.0_f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(DrmaError::RankDeficient { condition });
    }
    let coef = svd
        .solve(&data.y, 0.0)
        .map_err(|e| DrmaError::Singular(e.to_string()))?;
    let fitted = &design * &coef;
    let residuals = &data.y - &fitted;
    let beta_hat = coef.rows(0, p).into_owned();
    let theta_hat = coef.rows(p, cols - p).into_owned();
    let sigma_x_hat = design.tr_mul(&design) / n as f64;
    let rss = residuals.norm_squared();
    Ok(FittedNullModel {
        beta_hat,
        theta_hat,
        fitted,
        residuals,
        sigma_x_hat,
        converged: true,
        iterations: 1,
        rss_history: vec![rss],
    })
}

/// Stopping rule for Gauss–Newton.
#[derive(Debug, Clone, Copy)]
pub struct NlsOptions {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
}

impl Default for NlsOptions {
    fn default() -> Self {
        NlsOptions {
            max_iterations: 100,
            relative_tolerance: 1e-10,
        }
    }
}

fn predictions(data: &Dataset, link: &dyn Link, gamma: &[f64]) -> DVector<f64> {
    let p = data.p();
    let (beta, theta) = gamma.split_at(p);
    DVector::from_fn(data.n(), |i, _| {
        let index: f64 = (0..p).map(|j| data.x[(i, j)] * beta[j]).sum();
        link.value(index, theta)
    })
}

/// Gauss–Newton with step halving for a general link.
pub fn fit_nls(data: &Dataset, link: &dyn Link, init: &[f64]) -> Result<FittedNullModel> {
    fit_nls_with(data, link, init, NlsOptions::default())
}

pub fn fit_nls_with(data: &Dataset, link: &dyn Link, init: &[f64], options: NlsOptions) -> Result<FittedNullModel> {
    let p = data.p();
    let dim = p + link.theta_dim();
    if init.len() != dim {
        return Err(DrmaError::InvalidInput(format!(
            "initial value has length {}, expected {dim}",
            init.len()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(DrmaError::NonFinite("initial parameter value".into()));
    }
    let mut gamma = init.to_vec();
    let mut fitted = predictions(data, link, &gamma);
    let mut rss = (&data.y - &fitted).norm_squared();
    if !rss.is_finite() {
        return Err(DrmaError::NonFinite("objective at the initial value".into()));
    }
    let mut history = vec![rss];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let residuals = &data.y - &fitted;
        let jac = gradient_rows(data, link, &gamma);
        let normal = jac.tr_mul(&jac);
        if !(linalg::condition_number(&normal) < 1e14) {
            return Err(DrmaError::Singular(
                "Gauss-Newton normal matrix (flat gradient direction)".into(),
            ));
        }
        let step = linalg::solve_spd(&normal, &jac.tr_mul(&residuals))
            .ok_or_else(|| DrmaError::Singular("Gauss-Newton normal matrix (flat gradient direction)".into()))?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = gamma.iter().zip(step.iter()).map(|(g, s)| g + scale * s).collect();
            let trial_fit = predictions(data, link, &trial);
            let trial_rss = (&data.y - &trial_fit).norm_squared();
            if trial_rss.is_finite() && trial_rss <= rss {
                accepted = Some((trial, trial_fit, trial_rss));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, trial_fit, trial_rss)) = accepted else {
            converged = true;
            break;
        };
        let decrease = (rss - trial_rss) / rss.max(f64::MIN_POSITIVE);
        gamma = trial;
        fitted = trial_fit;
        rss = trial_rss;
        history.push(rss);
        if decrease < options.relative_tolerance || rss == 0.0 {
            converged = true;
            break;
        }
    }
    let residuals = &data.y - &fitted;
    let beta_hat = DVector::from_column_slice(&gamma[..p]);
    let theta_hat = DVector::from_column_slice(&gamma[p..]);
    let jac = gradient_rows(data, link, &gamma);
    let mut sigma_x_hat = jac.tr_mul(&jac) / data.n() as f64;
    linalg::symmetrize(&mut sigma_x_hat);
    Ok(FittedNullModel {
        beta_hat,
        theta_hat,
        fitted,
        residuals,
        sigma_x_hat,
        converged,
        iterations,
        rss_history: history,
    })
}

/// Fits the null model: least squares in closed form when the link is
/// linear, Gauss–Newton otherwise. Without `init` the nonlinear fit starts
/// from the OLS slope and θ = 0.
pub fn fit_null_model(data: &Dataset, link: &dyn Link, init: Option<&[f64]>) -> Result<FittedNullModel> {
    if let Some(intercept) = link.ols_form() {
        return fit_ols(data, intercept);
    }
    match init {
        Some(init) => fit_nls(data, link, init),
        None => {
            let ols = fit_ols(data, false)?;
            let mut init = ols.beta_hat.as_slice().to_vec();
            init.extend(std::iter::repeat_n(0.0, link.theta_dim()));
            fit_nls(data, link, &init)
        }
    }
}

fn gradient_rows(data: &Dataset, link: &dyn Link, gamma: &[f64]) -> DMatrix<f64> {
    let p = data.p();
    let (beta, theta) = gamma.split_at(p);
    let mut out = DMatrix::zeros(data.n(), gamma.len());
    let mut row = vec![0.0; p];
    for i in 0..data.n() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = data.x[(i, j)];
        }
        let g = link.gradient(&row, beta, theta);
        out.set_row(i, &g.transpose());
    }
    out
}

/// Rows `m(xᵢ, β̂, θ̂)` and `Σ̂_x = n⁻¹ Σᵢ m mᵀ`.
pub fn link_gradient_matrix(data: &Dataset, fit: &FittedNullModel, link: &dyn Link) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = gradient_rows(data, link, fit.parameters().as_slice());
    let mut sigma = m.tr_mul(&m) / data.n() as f64;
    linalg::symmetrize(&mut sigma);
    (m, sigma)
}
