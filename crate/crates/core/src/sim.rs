//! Simulation designs and the Monte Carlo size/power harness.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{wild_bootstrap, BootstrapConfig};
use crate::data::Dataset;
use crate::error::{DrmaError, Result, Stage};
use crate::exec::Execution;
use crate::pipeline::{drma_analyze, DrmaConfig, TestMethod};
use crate::regression::{LinearLink, Link};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Study {
    /// y = βᵀx + a cos(0.6π βᵀx) + ε
    H11,
    /// y = βᵀx + a exp(−(βᵀx)²) + ε
    H12,
    /// y = βᵀx + a (βᵀx)² + ε
    H13,
    /// y = β₁ᵀx + a (β₂ᵀx)³ + ε, p ∈ {3, 4}
    #[serde(rename = "STUDY2")]
    Study2,
    /// y = β₁ᵀx + a (β₂ᵀx)² + ε, β₁ and β₂ splitting the coordinates in half
    #[serde(rename = "STUDY3")]
    Study3,
}

impl Study {
    pub fn label(self) -> &'static str {
        match self {
            Study::H11 => "H11",
            Study::H12 => "H12",
            Study::H13 => "H13",
            Study::Study2 => "STUDY2",
            Study::Study3 => "STUDY3",
        }
    }
}

impl std::str::FromStr for Study {
    type Err = DrmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "H11" => Ok(Study::H11),
            "H12" => Ok(Study::H12),
            "H13" => Ok(Study::H13),
            "STUDY2" | "2" => Ok(Study::Study2),
            "STUDY3" | "3" => Ok(Study::Study3),
            other => Err(DrmaError::InvalidInput(format!("unknown study {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SigmaKind {
    /// Σ₁ = I
    Identity,
    /// Σ₂ = (0.5^{|j−l|})
    Ar,
}

impl SigmaKind {
    pub fn label(self) -> &'static str {
        match self {
            SigmaKind::Identity => "1",
            SigmaKind::Ar => "2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorLaw {
    Normal,
    /// Laplace with scale 1/√2 (unit variance).
    DoubleExponential,
}

impl ErrorLaw {
    pub fn label(self) -> &'static str {
        match self {
            ErrorLaw::Normal => "normal",
            ErrorLaw::DoubleExponential => "de",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study: Study,
    pub p: usize,
    pub n: usize,
    pub a: f64,
    pub sigma: SigmaKind,
    pub error_law: ErrorLaw,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl StudySpec {
    /// A study with its design dimension (8 for Study 1 and 3, 3 for Study 2),
    /// Σ₁, normal errors, 500 replications, α = 0.05.
    pub fn new(study: Study, n: usize, a: f64) -> Self {
        let p = match study {
            Study::Study2 => 3,
            _ => 8,
        };
        StudySpec {
            study,
            p,
            n,
            a,
            sigma: SigmaKind::Identity,
            error_law: ErrorLaw::Normal,
            replications: 500,
            seed: 0,
            alpha: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DrmaError::InvalidInput(msg));
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return fail(format!("departure scale a must be ≥ 0, got {}", self.a));
        }
        if self.replications < 1 {
            return fail("replications must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.n < 10 {
            return fail(format!("sample size {} too small", self.n));
        }
        let ok = match self.study {
            Study::H11 | Study::H12 | Study::H13 => self.p == 8,
            Study::Study2 => matches!(self.p, 3 | 4) && self.sigma == SigmaKind::Identity,
            Study::Study3 => matches!(self.p, 2 | 8),
        };
        if !ok {
            return fail(format!(
                "{} is not defined for p = {} with Σ{}",
                self.study.label(),
                self.p,
                self.sigma.label()
            ));
        }
        Ok(())
    }

    /// (β₁, β₂): the null index and the departure direction.
    pub fn indices(&self) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        match self.study {
            Study::H11 | Study::H12 | Study::H13 => {
                let b = DVector::from_element(p, 1.0 / (p as f64).sqrt());
                (b.clone(), b)
            }
            Study::Study2 if p == 3 => (
                DVector::from_column_slice(&[1.0, 0.0, 0.0]),
                DVector::from_column_slice(&[0.0, 1.0, 0.0]),
            ),
            Study::Study2 => {
                let s = 1.0 / 2f64.sqrt();
                (
                    DVector::from_column_slice(&[s, s, 0.0, 0.0]),
                    DVector::from_column_slice(&[0.0, 0.0, s, s]),
                )
            }
            Study::Study3 => {
                let half = p / 2;
                let s = 1.0 / (half as f64).sqrt();
                (
                    DVector::from_fn(p, |i, _| if i < half { s } else { 0.0 }),
                    DVector::from_fn(p, |i, _| if i >= half { s } else { 0.0 }),
                )
            }
        }
    }

    /// The departure G evaluated at x (without the factor a).
    pub fn departure(&self, x: &[f64]) -> f64 {
        let (b1, b2) = self.indices();
        let u1: f64 = b1.iter().zip(x).map(|(b, v)| b * v).sum();
        let u2: f64 = b2.iter().zip(x).map(|(b, v)| b * v).sum();
        match self.study {
            Study::H11 => (0.6 * PI * u1).cos(),
            Study::H12 => (-u1 * u1).exp(),
            Study::H13 => u1 * u1,
            Study::Study2 => u2.powi(3),
            Study::Study3 => u2 * u2,
        }
    }
}

pub fn make_sigma(p: usize, kind: SigmaKind) -> DMatrix<f64> {
    match kind {
        SigmaKind::Identity => DMatrix::identity(p, p),
        SigmaKind::Ar => DMatrix::from_fn(p, p, |j, l| 0.5f64.powi((j as i32 - l as i32).abs())),
    }
}

pub fn sample_error<R: Rng + ?Sized>(law: ErrorLaw, count: usize, rng: &mut R) -> Vec<f64> {
    match law {
        ErrorLaw::Normal => (0..count).map(|_| rng.sample(StandardNormal)).collect(),
        ErrorLaw::DoubleExponential => {
            let scale = 1.0 / 2f64.sqrt();
            (0..count)
                .map(|_| {
                    // Inverse CDF on u ∈ (−1/2, 1/2).
                    let u: f64 = rng.random::<f64>() - 0.5;
                    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                })
                .collect()
        }
    }
}

/// Draws n rows from N(0, Σ) through the Cholesky factor.
pub fn sample_predictors<R: Rng + ?Sized>(n: usize, sigma: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| DrmaError::Singular("predictor covariance is not positive definite".into()))?;
    let l = chol.l();
    let z = DMatrix::from_fn(n, p, |_, _| 0.0);
    let mut z = z;
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(z * l.transpose())
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub data: Dataset,
    /// Index of the null model.
    pub beta: DVector<f64>,
    /// Basis of the true central mean subspace.
    pub directions: DMatrix<f64>,
    pub q_true: usize,
}

/// Draws replicate `replicate` of a study. The predictors and errors depend
/// only on `(seed, replicate)`, so designs differing only in `a` share them.
pub fn generate(spec: &StudySpec, replicate: u64) -> Result<Generated> {
    spec.validate()?;
    let mut stream = rng::stream(spec.seed, &[replicate]);
    let sigma = make_sigma(spec.p, spec.sigma);
    let x = sample_predictors(spec.n, &sigma, &mut stream)?;
    let eps = sample_error(spec.error_law, spec.n, &mut stream);
    let (b1, b2) = spec.indices();
    let y = DVector::from_fn(spec.n, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let linear: f64 = b1.iter().zip(&row).map(|(b, v)| b * v).sum();
        let departure = if spec.a == 0.0 {
            0.0
        } else {
            spec.a * spec.departure(&row)
        };
        linear + departure + eps[i]
    });
    let multi_index = matches!(spec.study, Study::Study2 | Study::Study3) && spec.a > 0.0;
    let directions = if multi_index {
        DMatrix::from_columns(&[b1.clone(), b2])
    } else {
        DMatrix::from_columns(std::slice::from_ref(&b1))
    };
    Ok(Generated {
        data: Dataset::new(x, y)?,
        beta: b1,
        q_true: directions.ncols(),
        directions,
    })
}

/// A test to evaluate in the harness: the statistic plus an optional number
/// of wild-bootstrap replicates used for the critical value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct McMethod {
    pub test: TestMethod,
    pub bootstrap: Option<usize>,
}

impl McMethod {
    pub fn asymptotic(test: TestMethod) -> Self {
        McMethod { test, bootstrap: None }
    }

    pub fn bootstrapped(test: TestMethod, replications: usize) -> Self {
        McMethod {
            test,
            bootstrap: Some(replications),
        }
    }

    pub fn label(&self) -> String {
        match self.bootstrap {
            None => self.test.label().to_string(),
            Some(_) => format!("{}-boot", self.test.label()),
        }
    }
}

/// One grid cell of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub study: String,
    pub n: usize,
    pub p: usize,
    pub a: f64,
    pub sigma: String,
    pub error_law: String,
    pub method: String,
    pub frequency: f64,
    pub stderr: f64,
    pub mean_q_hat: f64,
    pub replications: usize,
    pub seed: u64,
    pub q_hat_one_frequency: f64,
    pub failures: usize,
    pub bandwidth_scale: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Clone, Copy)]
struct ReplicateOutcome {
    reject: bool,
    q_hat: usize,
}

const BOOTSTRAP_STREAM: u64 = 0xB007;

fn run_replicate(spec: &StudySpec, method: &McMethod, config: &DrmaConfig, r: u64) -> Result<ReplicateOutcome> {
    let generated = generate(spec, r)?;
    let link = LinearLink { intercept: false };
    let outcome = drma_analyze(&generated.data, &link, config)?;
    let reject = match method.bootstrap {
        None => outcome.result.rejects(spec.alpha),
        Some(b) => {
            let boot = BootstrapConfig {
                replications: b,
                refit_sdr: true,
                seed: rng::derive_seed(spec.seed, &[r, BOOTSTRAP_STREAM]),
                execution: Execution::Sequential,
            };
            wild_bootstrap(&generated.data, &link, config, &outcome, &boot)?.rejects(spec.alpha)
        }
    };
    Ok(ReplicateOutcome {
        reject,
        q_hat: outcome.result.q_hat,
    })
}

/// Rejection frequency of `method` over `spec.replications` draws.
/// Replicates run concurrently under `execution`; results are aggregated in
/// replicate order, so the output is independent of the worker count.
pub fn run_monte_carlo(
    spec: &StudySpec,
    method: &McMethod,
    base: &DrmaConfig,
    execution: Execution,
) -> Result<CellResult> {
    spec.validate()?;
    let config = DrmaConfig {
        method: method.test,
        ..*base
    }
    .with_execution(if execution.is_parallel() {
        Execution::Sequential
    } else {
        base.execution
    });
    let outcomes = execution.map(spec.replications, |r| run_replicate(spec, method, &config, r as u64));
    let total = outcomes.len();
    let ok: Vec<ReplicateOutcome> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let failures = total - ok.len();
    if failures * 20 > total || ok.is_empty() {
        return Err(DrmaError::TooManyFailures {
            failed: failures,
            total,
            limit_pct: 5,
        }
        .at(Stage::Simulation));
    }
    let m = ok.len() as f64;
    let frequency = ok.iter().filter(|o| o.reject).count() as f64 / m;
    Ok(CellResult {
        study: spec.study.label().to_string(),
        n: spec.n,
        p: spec.p,
        a: spec.a,
        sigma: spec.sigma.label().to_string(),
        error_law: spec.error_law.label().to_string(),
        method: method.label(),
        frequency,
        stderr: (frequency * (1.0 - frequency) / m).sqrt(),
        mean_q_hat: ok.iter().map(|o| o.q_hat as f64).sum::<f64>() / m,
        replications: ok.len(),
        seed: spec.seed,
        q_hat_one_frequency: ok.iter().filter(|o| o.q_hat == 1).count() as f64 / m,
        failures,
        bandwidth_scale: config.bandwidth_scale,
        alpha: spec.alpha,
    })
}

/// Every combination of `specs` × `methods`, in that nesting order.
pub fn run_grid(
    specs: &[StudySpec],
    methods: &[McMethod],
    base: &DrmaConfig,
    execution: Execution,
) -> Result<MonteCarloResult> {
    let mut cells = Vec::with_capacity(specs.len() * methods.len());
    for spec in specs {
        for method in methods {
            cells.push(run_monte_carlo(spec, method, base, execution)?);
        }
    }
    Ok(MonteCarloResult { cells })
}

/// Bandwidth multipliers 0.25 + i/4 for i = 0..=8.
pub fn default_bandwidth_grid() -> Vec<f64> {
    (0..=8).map(|i| 0.25 + i as f64 / 4.0).collect()
}

/// Rejection frequency as a function of the bandwidth multiplier c in
/// h = c · n^{−1/(4+q̂)}.
pub fn bandwidth_sweep(
    spec: &StudySpec,
    method: &McMethod,
    base: &DrmaConfig,
    c_grid: &[f64],
    execution: Execution,
) -> Result<MonteCarloResult> {
    let cells = c_grid
        .iter()
        .map(|&c| {
            let config = DrmaConfig {
                bandwidth_scale: c,
                mave: crate::sdr::MaveConfig {
                    bandwidth_scale: base.mave.bandwidth_scale,
                    ..base.mave
                },
                ..*base
            };
            run_monte_carlo(spec, method, &config, execution)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloResult { cells })
}

const CSV_HEADER: [&str; 12] = [
    "study",
    "n",
    "p",
    "a",
    "sigma",
    "error_law",
    "method",
    "frequency",
    "stderr",
    "mean_q_hat",
    "replications",
    "seed",
];

impl MonteCarloResult {
    /// One row per cell. With `with_bandwidth` a trailing `bandwidth_scale`
    /// column is added (bandwidth sweeps).
    pub fn write_csv<W: Write>(&self, writer: W, with_bandwidth: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = CSV_HEADER.to_vec();
        if with_bandwidth {
            header.push("bandwidth_scale");
        }
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![
                c.study.clone(),
                c.n.to_string(),
                c.p.to_string(),
                c.a.to_string(),
                c.sigma.clone(),
                c.error_law.clone(),
                c.method.clone(),
                format!("{:.6}", c.frequency),
                format!("{:.6}", c.stderr),
                format!("{:.6}", c.mean_q_hat),
                c.replications.to_string(),
                c.seed.to_string(),
            ];
            if with_bandwidth {
                row.push(c.bandwidth_scale.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Noncentrality {
    pub mu: f64,
    /// Monte Carlo standard error of `mu`.
    pub std_error: f64,
}

/// Monte Carlo estimate of
/// `μ = E[(G(BᵀX) − m(X)ᵀ Σ_x⁻¹ E[G(BᵀX) m(X)])² f(βᵀX)]` for X ~ N(0, Σ),
/// where `f` is the exact normal density of the null index βᵀX. Σ_x and
/// E[G m] come from an independent draw of the same size.
pub fn noncentrality_mu(
    departure: &(dyn Fn(&[f64]) -> f64 + Sync),
    link: &dyn Link,
    beta: &[f64],
    theta: &[f64],
    sigma: &DMatrix<f64>,
    mc_samples: usize,
    seed: u64,
) -> Result<Noncentrality> {
    if mc_samples < 2 {
        return Err(DrmaError::InvalidInput("need at least two Monte Carlo samples".into()));
    }
    let p = sigma.nrows();
    let dim = p + link.theta_dim();
    let b = DVector::from_column_slice(beta);
    let index_var = (b.transpose() * sigma * &b)[0];
    let density = |u: f64| (-0.5 * u * u / index_var).exp() / (2.0 * PI * index_var).sqrt();

    let aux = sample_predictors(mc_samples, sigma, &mut rng::stream(seed, &[0]))?;
    let mut sigma_x = DMatrix::<f64>::zeros(dim, dim);
    let mut e_h = DVector::<f64>::zeros(dim);
    for row in aux.row_iter() {
        let x: Vec<f64> = row.iter().copied().collect();
        let m = link.gradient(&x, beta, theta);
        sigma_x.ger(1.0, &m, &m, 1.0);
        e_h.axpy(departure(&x), &m, 1.0);
    }
    sigma_x /= mc_samples as f64;
    e_h /= mc_samples as f64;
    let projection = sigma_x
        .clone()
        .cholesky()
        .map(|c| c.solve(&e_h))
        .ok_or_else(|| DrmaError::Singular("estimated Σ_x".into()))?;

    let main = sample_predictors(mc_samples, sigma, &mut rng::stream(seed, &[1]))?;
    let values: Vec<f64> = main
        .row_iter()
        .map(|row| {
            let x: Vec<f64> = row.iter().copied().collect();
            let m = link.gradient(&x, beta, theta);
            let resid = departure(&x) - m.dot(&projection);
            let u: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            resid * resid * density(u)
        })
        .collect();
    let k = values.len() as f64;
    let mu = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(Noncentrality {
        mu,
        std_error: (var / k).sqrt(),
    })
}

/// [`noncentrality_mu`] for a study's departure under the intercept-free
/// linear null model.
pub fn study_noncentrality(spec: &StudySpec, mc_samples: usize, seed: u64) -> Result<Noncentrality> {
    spec.validate()?;
    let (beta, _) = spec.indices();
    let sigma = make_sigma(spec.p, spec.sigma);
    let departure = |x: &[f64]| spec.departure(x);
    noncentrality_mu(
        &departure,
        &LinearLink { intercept: false },
        beta.as_slice(),
        &[],
        &sigma,
        mc_samples,
        seed,
    )
}
