//! Minimum average variance estimation (MAVE).
//!
//! For a candidate dimension k, B (p × k, orthonormal) minimizes
//!
//! ```text
//! Σⱼ Σᵢ wᵢⱼ (yᵢ − aⱼ − dⱼᵀ Bᵀ (xᵢ − xⱼ))²,   wᵢⱼ ∝ K_h(Bᵀ(xᵢ − xⱼ)),  Σᵢ wᵢⱼ = 1
//! ```
//!
//! by alternating between weighted local linear fits at every anchor j and
//! a single least-squares update of B. The dimension is picked by a BIC
//! criterion across k = 1..p, by default on leave-one-out prediction error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{SdrEstimate, SdrMethod};
use crate::data::Dataset;
use crate::error::{DrmaError, Result};
use crate::exec::Execution;
use crate::kernel::{bandwidth_rule, KernelSpec};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaveInit {
    /// Outer product of local-linear gradient estimates.
    Opg,
    /// First k coordinate axes.
    IdentityColumns,
}

/// Radial weight profile of the local linear fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaveKernel {
    /// exp(−‖u‖²/2)
    Gaussian,
    /// The spherical quartic kernel of the test statistic.
    Quartic,
}

#[derive(Debug, Clone, Copy)]
enum Weight {
    Gaussian,
    Quartic(KernelSpec),
}

impl Weight {
    fn new(kind: MaveKernel, k: usize) -> Result<Self> {
        Ok(match kind {
            MaveKernel::Gaussian => Weight::Gaussian,
            MaveKernel::Quartic => Weight::Quartic(KernelSpec::quartic(k)?),
        })
    }

    /// Weight at squared scaled distance ‖u‖²; constants cancel after
    /// normalization.
    fn of_squared_norm(&self, r2: f64) -> f64 {
        match self {
            Weight::Gaussian => (-0.5 * r2).exp(),
            Weight::Quartic(k) => k.of_squared_norm(r2),
        }
    }
}

/// Which residual sum of squares enters the BIC dimension selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RssKind {
    /// The minimized MAVE objective itself.
    InSample,
    /// Σⱼ (yⱼ − âⱼ⁽⁻ʲ⁾)², the local linear fit at xⱼ computed without point j.
    LeaveOneOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaveConfig {
    pub max_outer_iterations: usize,
    /// Stop once the largest principal angle between successive iterates
    /// falls below this (radians).
    pub tolerance: f64,
    /// c in h_k = c · n^{−1/(4+k)}.
    pub bandwidth_scale: f64,
    pub init: MaveInit,
    pub ridge: f64,
    pub kernel: MaveKernel,
    pub rss: RssKind,
    pub execution: Execution,
}

impl Default for MaveConfig {
    fn default() -> Self {
        MaveConfig {
            max_outer_iterations: 50,
            tolerance: 1e-6,
            bandwidth_scale: 1.5,
            init: MaveInit::Opg,
            ridge: 1e-8,
            kernel: MaveKernel::Gaussian,
            rss: RssKind::LeaveOneOut,
            execution: Execution::default(),
        }
    }
}

impl MaveConfig {
    fn validate(&self) -> Result<()> {
        if self.max_outer_iterations < 1 || !(self.tolerance > 0.0) || !(self.bandwidth_scale > 0.0) {
            return Err(DrmaError::InvalidInput(format!("invalid MAVE configuration: {self:?}")));
        }
        Ok(())
    }

    pub fn bandwidth(&self, n: usize, k: usize) -> Result<f64> {
        bandwidth_rule(n, k, self.bandwidth_scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaveFit {
    /// p × k with orthonormal columns.
    pub directions: DMatrix<f64>,
    pub rss: f64,
    /// Objective after each accepted outer iterate, starting with the
    /// initial value; non-increasing.
    pub rss_history: Vec<f64>,
    pub intercepts: DVector<f64>,
    /// Row j holds the local slope dⱼ.
    pub slopes: DMatrix<f64>,
    pub bandwidth: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Anchors whose local weighted design needed the ridge to be solvable.
    pub singular_anchors: usize,
}

struct LocalFit {
    intercept: f64,
    slope: DVector<f64>,
    rss: f64,
    singular: bool,
    /// Σᵢ wᵢ xᵢⱼ xᵢⱼᵀ and Σᵢ wᵢ (yᵢ − aⱼ) xᵢⱼ, needed by the B-update.
    gram: DMatrix<f64>,
    cross: DVector<f64>,
}

/// Normalized kernel weights of every point around anchor j.
fn anchor_weights(x: &DMatrix<f64>, b: &DMatrix<f64>, j: usize, h: f64, kernel: &Weight) -> Vec<f64> {
    let n = x.nrows();
    let proj = x * b;
    anchor_weights_projected(&proj, j, h, kernel, n)
}

fn anchor_weights_projected(proj: &DMatrix<f64>, j: usize, h: f64, kernel: &Weight, n: usize) -> Vec<f64> {
    let k = proj.ncols();
    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            let r2: f64 = (0..k).map(|c| (proj[(i, c)] - proj[(j, c)]).powi(2)).sum::<f64>() / (h * h);
            kernel.of_squared_norm(r2)
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Weighted local linear regression of y on Bᵀ(xᵢ − xⱼ) around anchor j.
#[allow(clippy::too_many_arguments)]
fn local_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    b: &DMatrix<f64>,
    proj: &DMatrix<f64>,
    j: usize,
    h: f64,
    kernel: &Weight,
    ridge: f64,
    with_b_terms: bool,
) -> LocalFit {
    let (n, p) = (x.nrows(), x.ncols());
    let k = b.ncols();
    let w = anchor_weights_projected(proj, j, h, kernel, n);
    let mut normal = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    let mut z = DVector::<f64>::zeros(k + 1);
    z[0] = 1.0;
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        for c in 0..k {
            z[c + 1] = proj[(i, c)] - proj[(j, c)];
        }
        normal.ger(w[i], &z, &z, 1.0);
        rhs.axpy(w[i] * y[i], &z, 1.0);
    }
    let singular = normal.clone().cholesky().is_none() || linalg::condition_number(&normal) > 1e12;
    for c in 0..=k {
        normal[(c, c)] += ridge;
    }
    let coef = linalg::solve_spd(&normal, &rhs).unwrap_or_else(|| {
        // Only reachable with ridge = 0 on a singular design.
        let mut c = DVector::zeros(k + 1);
        c[0] = rhs[0];
        c
    });
    let intercept = coef[0];
    let slope = coef.rows(1, k).into_owned();
    let mut rss = 0.0;
    let mut gram = DMatrix::zeros(if with_b_terms { p } else { 0 }, if with_b_terms { p } else { 0 });
    let mut cross = DVector::zeros(if with_b_terms { p } else { 0 });
    let mut diff = DVector::<f64>::zeros(p);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let mut fitted = intercept;
        for c in 0..k {
            fitted += slope[c] * (proj[(i, c)] - proj[(j, c)]);
        }
        let r = y[i] - fitted;
        rss += w[i] * r * r;
        if with_b_terms {
            for c in 0..p {
                diff[c] = x[(i, c)] - x[(j, c)];
            }
            gram.ger(w[i], &diff, &diff, 1.0);
            cross.axpy(w[i] * (y[i] - intercept), &diff, 1.0);
        }
    }
    LocalFit {
        intercept,
        slope,
        rss,
        singular,
        gram,
        cross,
    }
}

struct Profile {
    fits: Vec<LocalFit>,
    rss: f64,
}

fn profile(
    data: &Dataset,
    b: &DMatrix<f64>,
    h: f64,
    kernel: &Weight,
    config: &MaveConfig,
    with_b_terms: bool,
) -> Profile {
    let proj = &data.x * b;
    let fits = config.execution.map(data.n(), |j| {
        local_fit(&data.x, &data.y, b, &proj, j, h, kernel, config.ridge, with_b_terms)
    });
    let rss = fits.iter().map(|f| f.rss).sum();
    Profile { fits, rss }
}

/// Least-squares update of B given the local coefficients:
/// Σⱼ (dⱼdⱼᵀ ⊗ Sⱼ) vec(B) = Σⱼ dⱼ ⊗ cⱼ.
fn update_directions(p: usize, k: usize, fits: &[LocalFit], ridge: f64) -> Option<DMatrix<f64>> {
    let dim = p * k;
    let mut lhs = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for fit in fits {
        for a in 0..k {
            let da = fit.slope[a];
            for b in 0..k {
                let scale = da * fit.slope[b];
                if scale == 0.0 {
                    continue;
                }
                let mut block = lhs.view_mut((a * p, b * p), (p, p));
                block += &fit.gram * scale;
            }
            let mut seg = rhs.rows_mut(a * p, p);
            seg += &fit.cross * da;
        }
    }
    linalg::symmetrize(&mut lhs);
    for c in 0..dim {
        lhs[(c, c)] += ridge;
    }
    let vec_b = linalg::solve_spd(&lhs, &rhs)?;
    let b = DMatrix::from_column_slice(p, k, vec_b.as_slice());
    if b.iter().any(|v| !v.is_finite()) || b.norm() == 0.0 {
        return None;
    }
    Some(linalg::orthonormalize(&b))
}

/// Outer-product-of-gradients start: leading eigenvectors of the average
/// outer product of local-linear gradient estimates in the full space.
/// A Gaussian kernel keeps every local design well posed.
fn opg_start(data: &Dataset, k: usize, config: &MaveConfig) -> Result<DMatrix<f64>> {
    let (n, p) = (data.n(), data.p());
    let h = bandwidth_rule(n, p, config.bandwidth_scale)?;
    let grads = config.execution.map(n, |j| {
        let mut normal = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut rhs = DVector::<f64>::zeros(p + 1);
        let mut z = DVector::<f64>::zeros(p + 1);
        z[0] = 1.0;
        for i in 0..n {
            let mut r2 = 0.0;
            for c in 0..p {
                let d = data.x[(i, c)] - data.x[(j, c)];
                z[c + 1] = d;
                r2 += d * d;
            }
            let w = (-0.5 * r2 / (h * h)).exp();
            normal.ger(w, &z, &z, 1.0);
            rhs.axpy(w * data.y[i], &z, 1.0);
        }
        let scale = normal[(0, 0)];
        normal /= scale;
        rhs /= scale;
        for c in 0..=p {
            normal[(c, c)] += config.ridge;
        }
        linalg::solve_spd(&normal, &rhs)
            .map(|coef| coef.rows(1, p).into_owned())
            .unwrap_or_else(|| DVector::zeros(p))
    });
    let mut outer = DMatrix::<f64>::zeros(p, p);
    for g in &grads {
        outer.ger(1.0 / n as f64, g, g, 1.0);
    }
    let (_, vecs) = linalg::sym_eigen_desc(&outer)?;
    Ok(vecs.columns(0, k).into_owned())
}

fn identity_start(p: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, k, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub fn mave_fit(data: &Dataset, k: usize, config: &MaveConfig) -> Result<MaveFit> {
    config.validate()?;
    let (n, p) = (data.n(), data.p());
    if k < 1 || k > p {
        return Err(DrmaError::InvalidInput(format!("MAVE dimension {k} outside 1..={p}")));
    }
    if n <= (k + 1) * 5 {
        return Err(DrmaError::TooFewRows {
            needed: (k + 1) * 5 + 1,
            found: n,
        });
    }
    let kernel = Weight::new(config.kernel, k)?;
    let h = config.bandwidth(n, k)?;
    let start = if k == p {
        identity_start(p, k)
    } else {
        match config.init {
            MaveInit::Opg => opg_start(data, k, config)?,
            MaveInit::IdentityColumns => identity_start(p, k),
        }
    };
    let mut b = linalg::orthonormalize(&start);
    let iterate = k < p;
    let mut current = profile(data, &b, h, &kernel, config, iterate);
    let mut history = vec![current.rss];
    let mut converged = !iterate;
    let mut iterations = 0;
    while iterate && iterations < config.max_outer_iterations {
        iterations += 1;
        let Some(candidate) = update_directions(p, k, &current.fits, config.ridge) else {
            converged = true;
            break;
        };
        let next = profile(data, &candidate, h, &kernel, config, true);
        if next.rss > current.rss {
            // The update no longer lowers the objective once the weights are
            // refreshed; keep the last accepted iterate.
            converged = true;
            break;
        }
        let angle = linalg::max_principal_angle(&b, &candidate);
        b = candidate;
        current = next;
        history.push(current.rss);
        if angle < config.tolerance {
            converged = true;
            break;
        }
    }
    linalg::fix_signs(&mut b);
    let intercepts = DVector::from_iterator(n, current.fits.iter().map(|f| f.intercept));
    let slopes = DMatrix::from_fn(n, k, |j, c| current.fits[j].slope[c]);
    let singular_anchors = current.fits.iter().filter(|f| f.singular).count();
    Ok(MaveFit {
        directions: b,
        rss: current.rss,
        rss_history: history,
        intercepts,
        slopes,
        bandwidth: h,
        converged,
        iterations,
        singular_anchors,
    })
}

/// `Σⱼ Σᵢ w(i, j) (yᵢ − aⱼ − dⱼᵀ Bᵀ(xᵢ − xⱼ))²` for arbitrary weights.
pub fn weighted_rss(
    data: &Dataset,
    directions: &DMatrix<f64>,
    intercepts: &DVector<f64>,
    slopes: &DMatrix<f64>,
    weight: impl Fn(usize, usize) -> f64,
) -> f64 {
    let proj = &data.x * directions;
    let n = data.n();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            let w = weight(i, j);
            if w == 0.0 {
                continue;
            }
            let diff = proj.row(i) - proj.row(j);
            let r = data.y[i] - intercepts[j] - (diff * slopes.row(j).transpose())[0];
            total += w * r * r;
        }
    }
    total
}

/// RSS_k of a fit: the objective at the fitted coefficients with the
/// normalized kernel weights of its bandwidth.
pub fn mave_rss(data: &Dataset, fit: &MaveFit, config: &MaveConfig) -> Result<f64> {
    let k = fit.directions.ncols();
    let kernel = Weight::new(config.kernel, k)?;
    let weights: Vec<Vec<f64>> = (0..data.n())
        .map(|j| anchor_weights(&data.x, &fit.directions, j, fit.bandwidth, &kernel))
        .collect();
    Ok(weighted_rss(
        data,
        &fit.directions,
        &fit.intercepts,
        &fit.slopes,
        |i, j| weights[j][i],
    ))
}

/// Leave-one-out prediction error of local linear fits in the coordinates
/// `Bᵀx`. An anchor whose neighbours all carry zero weight is predicted by
/// the mean of the remaining responses.
pub fn mave_loo_rss(data: &Dataset, directions: &DMatrix<f64>, bandwidth: f64, config: &MaveConfig) -> Result<f64> {
    let k = directions.ncols();
    let kernel = Weight::new(config.kernel, k)?;
    let proj = &data.x * directions;
    let n = data.n();
    let y_sum = data.y.sum();
    let errors = config.execution.map(n, |j| {
        let mut normal = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        let mut z = DVector::<f64>::zeros(k + 1);
        z[0] = 1.0;
        for i in (0..n).filter(|&i| i != j) {
            let mut r2 = 0.0;
            for c in 0..k {
                let d = proj[(i, c)] - proj[(j, c)];
                z[c + 1] = d;
                r2 += d * d;
            }
            let w = kernel.of_squared_norm(r2 / (bandwidth * bandwidth));
            if w > 0.0 {
                normal.ger(w, &z, &z, 1.0);
                rhs.axpy(w * data.y[i], &z, 1.0);
            }
        }
        let total = normal[(0, 0)];
        let prediction = if total > 0.0 {
            normal /= total;
            rhs /= total;
            for c in 0..=k {
                normal[(c, c)] += config.ridge;
            }
            linalg::solve_spd(&normal, &rhs).map_or(rhs[0], |coef| coef[0])
        } else {
            (y_sum - data.y[j]) / (n - 1) as f64
        };
        (data.y[j] - prediction).powi(2)
    });
    Ok(errors.iter().sum())
}

/// BIC values per dimension and whether any RSS had to be clamped.
pub fn mave_bic(rss: &[f64], n: usize, bandwidth_scale: f64) -> Result<(Vec<f64>, bool)> {
    let nf = n as f64;
    let mut clamped = false;
    let mut out = Vec::with_capacity(rss.len());
    for (idx, &r) in rss.iter().enumerate() {
        let k = idx + 1;
        let h = bandwidth_rule(n, k, bandwidth_scale)?;
        let r = if r <= 0.0 {
            clamped = true;
            1e-12 * nf
        } else {
            r
        };
        let effective = (nf * h.powi(k as i32)).min(nf.sqrt());
        out.push((r / nf).ln() + nf.ln() * k as f64 / effective);
    }
    Ok((out, clamped))
}

/// Smallest minimizer of the BIC values (1-based).
pub fn smallest_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best + 1
}

#[derive(Debug, Clone)]
pub struct MaveSelection {
    pub q_hat: usize,
    pub bic: Vec<f64>,
    pub fits: Vec<MaveFit>,
    pub clamped: bool,
}

pub fn mave_select_q(data: &Dataset, config: &MaveConfig) -> Result<MaveSelection> {
    let fits = (1..=data.p())
        .map(|k| mave_fit(data, k, config))
        .collect::<Result<Vec<_>>>()?;
    let rss = match config.rss {
        RssKind::InSample => fits.iter().map(|f| f.rss).collect::<Vec<_>>(),
        RssKind::LeaveOneOut => fits
            .iter()
            .map(|f| mave_loo_rss(data, &f.directions, f.bandwidth, config))
            .collect::<Result<Vec<_>>>()?,
    };
    let (bic, clamped) = mave_bic(&rss, data.n(), config.bandwidth_scale)?;
    Ok(MaveSelection {
        q_hat: smallest_argmin(&bic),
        bic,
        fits,
        clamped,
    })
}

pub fn mave_estimate(data: &Dataset, config: &MaveConfig) -> Result<SdrEstimate> {
    let selection = mave_select_q(data, config)?;
    let fit = selection
        .fits
        .into_iter()
        .nth(selection.q_hat - 1)
        .expect("q̂ within 1..=p");
    Ok(SdrEstimate {
        directions: fit.directions,
        eigenvalues: Vec::new(),
        q_hat: selection.q_hat,
        method: SdrMethod::Mave,
        criterion_values: selection.bic,
        degenerate: selection.clamped,
    })
}
