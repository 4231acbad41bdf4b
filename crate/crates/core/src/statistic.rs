//! Kernel U-statistics for lack of fit: `V_n`, its variance estimate, the
//! studentized `T_n`, Zheng's full-dimensional version and the
//! leave-one-out residual smoother used for diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{DrmaError, Result};
use crate::exec::Execution;
use crate::kernel::KernelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub v_n: f64,
    pub var_hat: f64,
    /// Studentized statistic; size-adjusted when `size_adjusted` is set.
    pub t_n: f64,
    pub t_n_squared: f64,
    /// Upper-tail χ²₁ probability at `t_n_squared`.
    pub p_value: f64,
    /// Statistic before any small-sample size adjustment.
    pub t_n_unadjusted: f64,
    pub size_adjusted: bool,
    pub h: f64,
    pub q_hat: usize,
    /// "DEE-SIR", "DEE-SAVE", "MAVE" or "ZHENG".
    pub sdr_method: String,
    pub n: usize,
    /// Var-hat vanished (all residuals zero, or no pair within the
    /// bandwidth); reported as a perfect fit with p-value 1.
    pub degenerate: bool,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// Upper-tail probability of χ²₁ at `x`.
pub fn chi2_1_upper_tail(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

/// Upper-α quantile of χ²₁.
pub fn chi2_1_critical(alpha: f64) -> f64 {
    let dist = ChiSquared::new(1.0).expect("one degree of freedom");
    dist.inverse_cdf(1.0 - alpha)
}

/// `Σ_{i≠j} εᵢεⱼ K(dᵢⱼ/h)` and `Σ_{i≠j} K²(dᵢⱼ/h) εᵢ²εⱼ²` where `dᵢⱼ` is the
/// difference of rows i and j of `projected`.
///
/// Each row's partial sum over j > i is computed independently and the
/// partials are combined in row order, so the result does not depend on
/// the execution mode.
pub fn pair_sums(
    residuals: &DVector<f64>,
    projected: &DMatrix<f64>,
    h: f64,
    kernel: &KernelSpec,
    execution: Execution,
) -> (f64, f64) {
    let n = residuals.len();
    let q = projected.ncols();
    // Row-major copy for contiguous access in the inner loop.
    let rows: Vec<f64> = (0..n)
        .flat_map(|i| (0..q).map(move |c| (i, c)))
        .map(|(i, c)| projected[(i, c)] / h)
        .collect();
    let partials = execution.map(n, |i| {
        let xi = &rows[i * q..(i + 1) * q];
        let ei = residuals[i];
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in (i + 1)..n {
            let xj = &rows[j * q..(j + 1) * q];
            let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 >= 1.0 {
                continue;
            }
            let k = kernel.of_squared_norm(r2);
            let e = ei * residuals[j];
            s1 += e * k;
            s2 += k * k * e * e;
        }
        (s1, s2)
    });
    let (s1, s2) = partials.into_iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (2.0 * s1, 2.0 * s2)
}

fn check_inputs(residuals: &DVector<f64>, projected: &DMatrix<f64>, h: f64, kernel: &KernelSpec) -> Result<()> {
    if residuals.len() < 2 {
        return Err(DrmaError::TooFewRows {
            needed: 2,
            found: residuals.len(),
        });
    }
    if projected.nrows() != residuals.len() {
        return Err(DrmaError::InvalidInput(format!(
            "{} projected rows for {} residuals",
            projected.nrows(),
            residuals.len()
        )));
    }
    if projected.ncols() != kernel.arity() {
        return Err(DrmaError::InvalidInput(format!(
            "projection has {} columns but the kernel has arity {}",
            projected.ncols(),
            kernel.arity()
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(DrmaError::InvalidInput(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

/// `V_n = [n(n−1)]⁻¹ Σᵢ Σ_{j≠i} εᵢ εⱼ K_h(dᵢⱼ)`, `K_h(u) = K(u/h)/h^q`.
pub fn v_n_statistic(residuals: &DVector<f64>, projected: &DMatrix<f64>, h: f64, kernel: &KernelSpec) -> Result<f64> {
    check_inputs(residuals, projected, h, kernel)?;
    let (s1, _) = pair_sums(residuals, projected, h, kernel, Execution::Sequential);
    let n = residuals.len() as f64;
    Ok(s1 / (n * (n - 1.0) * h.powi(kernel.arity() as i32)))
}

/// `2 [n(n−1)]⁻¹ Σᵢ Σ_{j≠i} h^{−q} K²(dᵢⱼ/h) εᵢ² εⱼ²`.
pub fn var_hat_statistic(
    residuals: &DVector<f64>,
    projected: &DMatrix<f64>,
    h: f64,
    kernel: &KernelSpec,
) -> Result<f64> {
    check_inputs(residuals, projected, h, kernel)?;
    let (_, s2) = pair_sums(residuals, projected, h, kernel, Execution::Sequential);
    let n = residuals.len() as f64;
    Ok(2.0 * s2 / (n * (n - 1.0) * h.powi(kernel.arity() as i32)))
}

/// Studentized statistic
/// `T_n = h^{(1−q)/2} Σ_{i≠j} εᵢεⱼK(dᵢⱼ/h) / (2 Σ_{i≠j} K²(dᵢⱼ/h) εᵢ²εⱼ²)^{1/2}`
/// with its χ²₁ p-value. `sdr_method` and `q_hat` are recorded verbatim.
pub fn t_n_statistic(
    residuals: &DVector<f64>,
    projected: &DMatrix<f64>,
    h: f64,
    kernel: &KernelSpec,
    execution: Execution,
) -> Result<TestResult> {
    check_inputs(residuals, projected, h, kernel)?;
    let n = residuals.len();
    let q = kernel.arity();
    let (s1, s2) = pair_sums(residuals, projected, h, kernel, execution);
    let nf = n as f64;
    let hq = h.powi(q as i32);
    let v_n = s1 / (nf * (nf - 1.0) * hq);
    let var_hat = 2.0 * s2 / (nf * (nf - 1.0) * hq);
    let degenerate = !(s2 > 0.0);
    let t_n = if degenerate {
        0.0
    } else {
        h.powf((1.0 - q as f64) / 2.0) * s1 / (2.0 * s2).sqrt()
    };
    let t_n_squared = t_n * t_n;
    Ok(TestResult {
        v_n,
        var_hat,
        t_n,
        t_n_squared,
        p_value: if degenerate {
            1.0
        } else {
            chi2_1_upper_tail(t_n_squared)
        },
        t_n_unadjusted: t_n,
        size_adjusted: false,
        h,
        q_hat: q,
        sdr_method: String::new(),
        n,
        degenerate,
    })
}

/// Zheng's statistic: the same construction on the full p-dimensional
/// predictor with a p-dimensional kernel.
pub fn zheng_statistic(residuals: &DVector<f64>, x: &DMatrix<f64>, h: f64, execution: Execution) -> Result<TestResult> {
    let kernel = KernelSpec::quartic(x.ncols())?;
    let mut result = t_n_statistic(residuals, x, h, &kernel, execution)?;
    result.sdr_method = "ZHENG".into();
    Ok(result)
}

/// `T_n / (1 + 4 n^{−4/5})`, the small-sample correction for MAVE-based
/// statistics.
pub fn mave_size_adjust(t_n: f64, n: usize) -> f64 {
    t_n / (1.0 + 4.0 * (n as f64).powf(-0.8))
}

/// Applies [`mave_size_adjust`] to a result, updating the p-value.
pub fn size_adjusted(mut result: TestResult) -> TestResult {
    if result.degenerate {
        result.size_adjusted = true;
        return result;
    }
    result.t_n = mave_size_adjust(result.t_n_unadjusted, result.n);
    result.t_n_squared = result.t_n * result.t_n;
    result.p_value = chi2_1_upper_tail(result.t_n_squared);
    result.size_adjusted = true;
    result
}

/// Leave-one-out kernel regression of the residuals on a one-dimensional
/// index, with the matching density estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothedResidual {
    pub index: f64,
    pub residual: f64,
    /// `None` where no other point lies within the bandwidth.
    pub smoothed: Option<f64>,
    pub density: f64,
}

pub fn nw_residual_smoother(
    residuals: &DVector<f64>,
    projected: &DMatrix<f64>,
    h: f64,
) -> Result<Vec<SmoothedResidual>> {
    if projected.ncols() != 1 {
        return Err(DrmaError::InvalidInput(format!(
            "residual smoother needs a single index, got {} columns",
            projected.ncols()
        )));
    }
    let kernel = KernelSpec::quartic(1)?;
    check_inputs(residuals, projected, h, &kernel)?;
    let n = residuals.len();
    let u = projected.column(0);
    Ok((0..n)
        .map(|i| {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let k = kernel.of_squared_norm(((u[i] - u[j]) / h).powi(2)) / h;
                num += residuals[j] * k;
                den += k;
            }
            SmoothedResidual {
                index: u[i],
                residual: residuals[i],
                smoothed: (den > 0.0).then(|| num / den),
                density: den / (n - 1) as f64,
            }
        })
        .collect())
}
