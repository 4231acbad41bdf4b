use drma_core::bootstrap::BootstrapResult;
use drma_core::{DrmaOutcome, SdrEstimate, TestResult};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct SdrReport {
    pub method: String,
    pub q_hat: usize,
    pub eigenvalues: Vec<f64>,
    pub criterion_values: Vec<f64>,
    /// Columns of B̂ in standardized predictor coordinates.
    pub directions: Vec<Vec<f64>>,
    pub degenerate: bool,
}

impl From<&SdrEstimate> for SdrReport {
    fn from(est: &SdrEstimate) -> Self {
        SdrReport {
            method: est.method.tag().to_string(),
            q_hat: est.q_hat,
            eigenvalues: est.eigenvalues.clone(),
            criterion_values: est.criterion_values.clone(),
            directions: est
                .directions
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            degenerate: est.degenerate,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct NullFitReport {
    pub beta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub rss: f64,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct BootstrapReport {
    pub replications: usize,
    pub failed_replicates: usize,
    pub degenerate_replicates: usize,
    pub refit_sdr: bool,
    pub p_value_boot: f64,
    pub reject: bool,
    pub t_star: Vec<f64>,
}

impl BootstrapReport {
    pub fn new(boot: BootstrapResult, alpha: f64) -> Self {
        BootstrapReport {
            replications: boot.t_star.len() + boot.failed_replicates,
            failed_replicates: boot.failed_replicates,
            degenerate_replicates: boot.degenerate_replicates,
            refit_sdr: boot.refit_sdr,
            p_value_boot: boot.p_value_boot,
            reject: boot.rejects(alpha),
            t_star: boot.t_star,
        }
    }
}

/// One test applied to one dataset.
#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub method: String,
    /// Decision at `alpha`, from the bootstrap p-value when present.
    pub reject: bool,
    pub result: TestResult,
    pub sdr: Option<SdrReport>,
    pub null_fit: NullFitReport,
    pub bootstrap: Option<BootstrapReport>,
}

impl AnalysisReport {
    pub fn new(method: &str, outcome: &DrmaOutcome, bootstrap: Option<BootstrapResult>, alpha: f64) -> Self {
        let bootstrap = bootstrap.map(|b| BootstrapReport::new(b, alpha));
        AnalysisReport {
            method: method.to_string(),
            reject: match &bootstrap {
                Some(b) => b.reject,
                None => outcome.result.rejects(alpha),
            },
            result: outcome.result.clone(),
            sdr: outcome.sdr.as_ref().map(SdrReport::from),
            null_fit: NullFitReport {
                beta_hat: outcome.fit.beta_hat.iter().copied().collect(),
                theta_hat: outcome.fit.theta_hat.iter().copied().collect(),
                rss: outcome.fit.rss(),
                converged: outcome.fit.converged,
            },
            bootstrap,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub command: &'static str,
    pub response: String,
    pub predictors: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub dropped_rows: usize,
    pub intercept: bool,
    pub alpha: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub analysis: AnalysisReport,
}

#[derive(Debug, Serialize)]
pub struct RealdataReport {
    pub command: &'static str,
    pub predictors: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub dropped_rows: usize,
    pub alpha: f64,
    pub seed: u64,
    pub dee: AnalysisReport,
    pub mave: AnalysisReport,
    /// Rows written to the diagnostics CSV.
    pub diagnostic_rows: usize,
}
