//! Wild-bootstrap calibration with the two-point golden-ratio multiplier.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DrmaError, Result, Stage};
use crate::exec::Execution;
use crate::pipeline::{statistic_for_response, DrmaConfig, DrmaOutcome};
use crate::regression::{fit_null_model, Link};
use crate::rng;
use crate::statistic::TestResult;

/// Lower support point (1 − √5)/2.
pub fn multiplier_low() -> f64 {
    (1.0 - 5f64.sqrt()) / 2.0
}

/// Upper support point (1 + √5)/2.
pub fn multiplier_high() -> f64 {
    (1.0 + 5f64.sqrt()) / 2.0
}

/// P(V = (1 − √5)/2) = (1 + √5)/(2√5).
pub fn multiplier_low_probability() -> f64 {
    (1.0 + 5f64.sqrt()) / (2.0 * 5f64.sqrt())
}

/// Draws `count` i.i.d. multipliers with mean 0 and variance 1.
pub fn two_point_multipliers<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    let (low, high, p_low) = (multiplier_low(), multiplier_high(), multiplier_low_probability());
    (0..count)
        .map(|_| if rng.random::<f64>() < p_low { low } else { high })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    /// Re-estimate B̂ and q̂ for every bootstrap sample. When false the
    /// observed subspace estimate is reused (faster, approximate).
    pub refit_sdr: bool,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 500,
            refit_sdr: true,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    /// Replicate statistics in replicate order (failed replicates omitted).
    pub t_star: Vec<f64>,
    /// (1 + #{T* ≥ Tₙ}) / (1 + B), B the number of successful replicates.
    pub p_value_boot: f64,
    pub observed: TestResult,
    pub failed_replicates: usize,
    pub degenerate_replicates: usize,
    pub refit_sdr: bool,
}

impl BootstrapResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value_boot <= alpha
    }
}

/// Add-one bootstrap p-value of `observed` against replicate statistics.
pub fn bootstrap_p_value(observed: f64, t_star: &[f64]) -> f64 {
    let exceed = t_star.iter().filter(|&&t| t >= observed).count();
    (1 + exceed) as f64 / (1 + t_star.len()) as f64
}

/// Wild bootstrap of the statistic in `observed`. Each replicate draws
/// `y*ᵢ = ĝ(β̂ᵀxᵢ, θ̂) + ε̂ᵢVᵢ`, refits the null model and recomputes the
/// statistic exactly as for the observed sample.
pub fn wild_bootstrap(
    data: &Dataset,
    link: &dyn Link,
    config: &DrmaConfig,
    observed: &DrmaOutcome,
    boot: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if boot.replications < 1 {
        return Err(DrmaError::InvalidInput("bootstrap needs at least one replicate".into()));
    }
    let fixed: Option<DMatrix<f64>> = match (&observed.sdr, boot.refit_sdr) {
        (Some(sdr), false) => Some(sdr.directions.clone()),
        _ => None,
    };
    let fitted = &observed.fit.fitted;
    let residuals = &observed.fit.residuals;
    let inner = config.with_execution(if boot.execution.is_parallel() {
        Execution::Sequential
    } else {
        config.execution
    });
    let outcomes = boot.execution.map(boot.replications, |b| -> Result<TestResult> {
        let mut stream = rng::stream(boot.seed, &[b as u64]);
        let v = two_point_multipliers(data.n(), &mut stream);
        let y_star = DVector::from_fn(data.n(), |i, _| fitted[i] + residuals[i] * v[i]);
        let sample = data.with_response(y_star.clone())?;
        let fit = fit_null_model(&sample, link, None)?;
        let (result, _, _) = statistic_for_response(
            &observed.standardized_x,
            &y_star,
            &fit.residuals,
            &inner,
            fixed.as_ref(),
        )?;
        Ok(result)
    });
    let total = outcomes.len();
    let mut t_star = Vec::with_capacity(total);
    let mut degenerate = 0;
    for outcome in outcomes.into_iter().flatten() {
        degenerate += usize::from(outcome.degenerate);
        t_star.push(outcome.t_n);
    }
    let failed = total - t_star.len();
    if failed * 10 > total {
        return Err(DrmaError::TooManyFailures {
            failed,
            total,
            limit_pct: 10,
        }
        .at(Stage::Bootstrap));
    }
    Ok(BootstrapResult {
        p_value_boot: bootstrap_p_value(observed.result.t_n, &t_star),
        t_star,
        observed: observed.result.clone(),
        failed_replicates: failed,
        degenerate_replicates: degenerate,
        refit_sdr: boot.refit_sdr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_law_moments() {
        let (a, b, p) = (multiplier_low(), multiplier_high(), multiplier_low_probability());
        assert_relative_eq!(p, 0.723_607, epsilon = 1e-6);
        assert_relative_eq!(p * a + (1.0 - p) * b, 0.0, epsilon = 1e-15);
        assert_relative_eq!(p * a * a + (1.0 - p) * b * b, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sampled_moments() {
        let mut r = rng::stream(11, &[]);
        let v = two_point_multipliers(100_000, &mut r);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn p_value_is_add_one_and_monotone() {
        let t = [0.5, 1.0, 2.0, 3.0];
        assert_relative_eq!(bootstrap_p_value(10.0, &t), 0.2);
        assert_relative_eq!(bootstrap_p_value(-10.0, &t), 1.0);
        let mut last = 1.0;
        for k in 0..40 {
            let p = bootstrap_p_value(-1.0 + k as f64 * 0.1, &t);
            assert!(p <= last);
            last = p;
        }
    }
}
