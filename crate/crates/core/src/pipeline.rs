//! The end-to-end lack-of-fit test: fit the null model, estimate the
//! dimension-reduction subspace, and studentize the kernel statistic in the
//! projected coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{standardize_columns, Dataset};
use crate::error::{DrmaError, Result, Stage};
use crate::exec::Execution;
use crate::kernel::{bandwidth_rule, KernelSpec};
use crate::regression::{fit_null_model, FittedNullModel, Link};
use crate::sdr::dee::dee_estimate;
use crate::sdr::mave::mave_estimate;
use crate::sdr::{DeeConfig, DeeFlavor, MaveConfig, SdrEstimate, SdrMethod};
use crate::statistic::{size_adjusted, t_n_statistic, zheng_statistic, TestResult};

/// Which statistic to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    DeeSir,
    DeeSave,
    Mave,
    /// Zheng's test in the full predictor space.
    Zheng,
}

impl TestMethod {
    pub fn sdr_method(self) -> Option<SdrMethod> {
        match self {
            TestMethod::DeeSir => Some(SdrMethod::DeeSir),
            TestMethod::DeeSave => Some(SdrMethod::DeeSave),
            TestMethod::Mave => Some(SdrMethod::Mave),
            TestMethod::Zheng => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TestMethod::DeeSir => "dee-sir",
            TestMethod::DeeSave => "dee-save",
            TestMethod::Mave => "mave",
            TestMethod::Zheng => "zheng",
        }
    }
}

impl std::str::FromStr for TestMethod {
    type Err = DrmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dee-sir" | "dee" | "sir" => Ok(TestMethod::DeeSir),
            "dee-save" | "save" => Ok(TestMethod::DeeSave),
            "mave" => Ok(TestMethod::Mave),
            "zheng" | "zh" => Ok(TestMethod::Zheng),
            other => Err(DrmaError::InvalidInput(format!("unknown test method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrmaConfig {
    pub method: TestMethod,
    /// c in h = c · n^{−1/(4+q̂)}.
    pub bandwidth_scale: f64,
    /// D_n and ridge for DEE; the flavor follows `method`.
    pub dee: DeeConfig,
    pub mave: MaveConfig,
    /// Divide MAVE-based statistics by 1 + 4n^{−4/5}.
    pub mave_size_adjust: bool,
    pub execution: Execution,
}

impl Default for DrmaConfig {
    fn default() -> Self {
        DrmaConfig {
            method: TestMethod::DeeSir,
            bandwidth_scale: 1.5,
            dee: DeeConfig::default(),
            mave: MaveConfig::default(),
            mave_size_adjust: true,
            execution: Execution::default(),
        }
    }
}

impl DrmaConfig {
    pub fn with_method(method: TestMethod) -> Self {
        DrmaConfig {
            method,
            ..DrmaConfig::default()
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self.dee.execution = execution;
        self.mave.execution = execution;
        self
    }

    fn dee_config(&self) -> DeeConfig {
        DeeConfig {
            flavor: if self.method == TestMethod::DeeSave {
                DeeFlavor::Save
            } else {
                DeeFlavor::Sir
            },
            execution: self.execution,
            ..self.dee
        }
    }

    fn mave_config(&self) -> MaveConfig {
        MaveConfig {
            execution: self.execution,
            ..self.mave
        }
    }
}

/// Everything computed along the way to a [`TestResult`].
#[derive(Debug, Clone)]
pub struct DrmaOutcome {
    pub result: TestResult,
    pub fit: FittedNullModel,
    /// `None` for Zheng's test.
    pub sdr: Option<SdrEstimate>,
    /// Separately standardized predictors.
    pub standardized_x: DMatrix<f64>,
    /// Rows `B̂ᵀx̃ᵢ` fed to the kernel (all of x̃ for Zheng's test).
    pub projected: DMatrix<f64>,
}

/// Runs the full test and returns only the result.
pub fn drma_test(data: &Dataset, link: &dyn Link, config: &DrmaConfig) -> Result<TestResult> {
    drma_analyze(data, link, config).map(|o| o.result)
}

pub fn drma_analyze(data: &Dataset, link: &dyn Link, config: &DrmaConfig) -> Result<DrmaOutcome> {
    let (standardized, _) = standardize_columns(data).map_err(|e| e.at(Stage::Standardize))?;
    let fit = fit_null_model(data, link, None).map_err(|e| e.at(Stage::NullFit))?;
    let (result, sdr, projected) = statistic_for_response(&standardized.x, &data.y, &fit.residuals, config, None)?;
    Ok(DrmaOutcome {
        result,
        fit,
        sdr,
        standardized_x: standardized.x,
        projected,
    })
}

/// Computes the statistic for response `y` with null-model residuals
/// `residuals` on standardized predictors `x`. With `fixed_directions` the
/// subspace estimate is reused instead of re-estimated from `y`.
pub fn statistic_for_response(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    residuals: &DVector<f64>,
    config: &DrmaConfig,
    fixed_directions: Option<&DMatrix<f64>>,
) -> Result<(TestResult, Option<SdrEstimate>, DMatrix<f64>)> {
    let n = x.nrows();
    let Some(method) = config.method.sdr_method() else {
        let h = bandwidth_rule(n, x.ncols(), config.bandwidth_scale).map_err(|e| e.at(Stage::Statistic))?;
        let result = zheng_statistic(residuals, x, h, config.execution).map_err(|e| e.at(Stage::Statistic))?;
        return Ok((result, None, x.clone()));
    };
    let (directions, sdr) = match fixed_directions {
        Some(b) => (b.clone(), None),
        None => {
            let data = Dataset::new(x.clone(), y.clone()).map_err(|e| e.at(Stage::DimensionReduction))?;
            let est = match method {
                SdrMethod::DeeSir | SdrMethod::DeeSave => dee_estimate(&data, &config.dee_config()),
                SdrMethod::Mave => mave_estimate(&data, &config.mave_config()),
            }
            .map_err(|e| e.at(Stage::DimensionReduction))?;
            (est.directions.clone(), Some(est))
        }
    };
    let q = directions.ncols();
    let projected = x * &directions;
    let h = bandwidth_rule(n, q, config.bandwidth_scale).map_err(|e| e.at(Stage::Statistic))?;
    let kernel = KernelSpec::quartic(q).map_err(|e| e.at(Stage::Statistic))?;
    let mut result =
        t_n_statistic(residuals, &projected, h, &kernel, config.execution).map_err(|e| e.at(Stage::Statistic))?;
    result.sdr_method = method.tag().to_string();
    if method == SdrMethod::Mave && config.mave_size_adjust {
        result = size_adjusted(result);
    }
    Ok((result, sdr, projected))
}
