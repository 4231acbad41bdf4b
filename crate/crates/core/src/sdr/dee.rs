//! Discretization-expectation estimation (DEE).
//!
//! The response is dichotomized at every observed value `t = yⱼ`, a SIR or
//! SAVE candidate matrix is formed for each binary response `I(y ≤ t)`, and
//! the candidates are averaged. Eigenvectors of the average span the
//! estimated subspace; a BIC-type criterion on its spectrum picks the
//! dimension.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{SdrEstimate, SdrMethod};
use crate::data::{center, moments_of, Dataset, SampleMoments};
use crate::error::{DrmaError, Result};
use crate::exec::Execution;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeeFlavor {
    Sir,
    Save,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeeConfig {
    pub flavor: DeeFlavor,
    /// Penalty constant D_n; `None` means √n.
    pub d_n: Option<f64>,
    /// Added to the diagonal of Σ̂ before inverting it.
    pub ridge: f64,
    pub execution: Execution,
}

impl Default for DeeConfig {
    fn default() -> Self {
        DeeConfig {
            flavor: DeeFlavor::Sir,
            d_n: None,
            ridge: 1e-8,
            execution: Execution::default(),
        }
    }
}

impl DeeConfig {
    pub fn sir() -> Self {
        DeeConfig::default()
    }

    pub fn save() -> Self {
        DeeConfig {
            flavor: DeeFlavor::Save,
            ..DeeConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(d) = self.d_n {
            if !(d > 0.0) {
                return Err(DrmaError::InvalidInput(format!("D_n must be positive, got {d}")));
            }
        }
        if !(self.ridge >= 0.0) {
            return Err(DrmaError::InvalidInput(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        Ok(())
    }

    pub fn penalty(&self, n: usize) -> f64 {
        self.d_n.unwrap_or((n as f64).sqrt())
    }
}

/// SIR candidate `L(t) = m(t) m(t)ᵀ` with `m(t) = n⁻¹ Σᵢ (xᵢ − x̄) I(yᵢ ≤ t)`.
/// The Σ̂⁻¹ factor is applied when the candidates are aggregated.
pub fn dee_candidate_sir(data: &Dataset, moments: &SampleMoments, t: f64) -> DMatrix<f64> {
    let n = data.n() as f64;
    let mut m = DVector::zeros(data.p());
    for (i, row) in data.x.row_iter().enumerate() {
        if data.y[i] <= t {
            m += (row.transpose() - &moments.mean) / n;
        }
    }
    &m * m.transpose()
}

/// `Σₛ p̂ₛ (I − Vₛ)²` for slice proportions `p̂ₛ` and slice covariances `Vₛ`.
pub fn save_slice_matrix(slices: &[(f64, DMatrix<f64>)]) -> DMatrix<f64> {
    let p = slices.first().map(|s| s.1.nrows()).unwrap_or(0);
    let mut out = DMatrix::zeros(p, p);
    for (weight, var) in slices {
        let d = DMatrix::identity(p, p) - var;
        out += (&d * &d) * *weight;
    }
    out
}

/// SAVE candidate for the split `{y ≤ t}` / `{y > t}` on Σ̂^{-1/2}-standardized
/// predictors. `Ok(None)` means a slice has fewer than two points and the
/// threshold is skipped.
pub fn dee_candidate_save(data: &Dataset, moments: &SampleMoments, t: f64, ridge: f64) -> Result<Option<DMatrix<f64>>> {
    let whiten = linalg::inv_sqrt_psd(&moments.covariance, ridge)?;
    let z = center(&data.x, &moments.mean) * &whiten;
    let n = data.n() as f64;
    let mut slices = Vec::with_capacity(2);
    for below in [true, false] {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| (data.y[i] <= t) == below).collect();
        if rows.len() < 2 {
            return Ok(None);
        }
        let sub = z.select_rows(rows.iter());
        let SampleMoments { covariance, .. } = moments_of(&sub)?;
        slices.push((rows.len() as f64 / n, covariance));
    }
    Ok(Some(save_slice_matrix(&slices)))
}

/// Aggregated candidate matrix and its spectrum.
#[derive(Debug, Clone)]
pub struct DeeSpectrum {
    /// SIR: `n⁻¹ Σⱼ L(yⱼ)` in the original coordinates. SAVE: the average
    /// candidate in standardized coordinates.
    pub aggregate: DMatrix<f64>,
    /// Symmetric matrix whose eigenvalues define the spectrum (whitened).
    pub whitened: DMatrix<f64>,
    /// Non-increasing, clipped at zero.
    pub eigenvalues: DVector<f64>,
    /// Unit-norm eigen-directions in the original predictor coordinates.
    pub directions: DMatrix<f64>,
    /// SAVE thresholds skipped for an undersized slice.
    pub skipped_thresholds: usize,
}

/// Observation order sorted by response, grouped into runs of tied values.
fn tie_groups(y: &DVector<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut ends = Vec::new();
    for k in 0..order.len() {
        if k + 1 == order.len() || y[order[k + 1]] != y[order[k]] {
            ends.push(k + 1);
        }
    }
    (order, ends)
}

pub fn dee_aggregate(data: &Dataset, config: &DeeConfig) -> Result<DeeSpectrum> {
    config.validate()?;
    if data.n() < 3 {
        return Err(DrmaError::TooFewRows {
            needed: 3,
            found: data.n(),
        });
    }
    let moments = moments_of(&data.x)?;
    let whiten = linalg::inv_sqrt_psd(&moments.covariance, config.ridge)?;
    let (aggregate, whitened, skipped) = match config.flavor {
        DeeFlavor::Sir => {
            let agg = sir_average(data, &moments);
            let mut w = &whiten * &agg * &whiten;
            linalg::symmetrize(&mut w);
            (agg, w, 0)
        }
        DeeFlavor::Save => {
            let (agg, skipped) = save_average(data, &moments, &whiten, config.execution)?;
            (agg.clone(), agg, skipped)
        }
    };
    let (mut eigenvalues, vectors) = linalg::sym_eigen_desc(&whitened)?;
    eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut directions = &whiten * vectors;
    for mut col in directions.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    Ok(DeeSpectrum {
        aggregate,
        whitened,
        eigenvalues,
        directions,
        skipped_thresholds: skipped,
    })
}

/// n⁻¹ Σⱼ m(yⱼ) m(yⱼ)ᵀ from cumulative sums in response order.
fn sir_average(data: &Dataset, moments: &SampleMoments) -> DMatrix<f64> {
    let (n, p) = (data.n(), data.p());
    let centered = center(&data.x, &moments.mean);
    let (order, ends) = tie_groups(&data.y);
    // One row per distinct threshold, scaled by sqrt(multiplicity / n) so the
    // average is a single Gram product.
    let mut rows = DMatrix::zeros(ends.len(), p);
    let mut running = DVector::<f64>::zeros(p);
    let mut start = 0;
    for (g, &end) in ends.iter().enumerate() {
        for &i in &order[start..end] {
            running += centered.row(i).transpose();
        }
        let weight = ((end - start) as f64 / n as f64).sqrt() / n as f64;
        rows.set_row(g, &(running.transpose() * weight));
        start = end;
    }
    let mut agg = rows.tr_mul(&rows);
    linalg::symmetrize(&mut agg);
    agg
}

fn save_average(
    data: &Dataset,
    moments: &SampleMoments,
    whiten: &DMatrix<f64>,
    execution: Execution,
) -> Result<(DMatrix<f64>, usize)> {
    let (n, p) = (data.n(), data.p());
    let z = center(&data.x, &moments.mean) * whiten;
    let (order, ends) = tie_groups(&data.y);
    // Prefix sums of zᵢ and zᵢzᵢᵀ at the end of each tie group.
    let mut sums = Vec::with_capacity(ends.len());
    let mut outers = Vec::with_capacity(ends.len());
    let mut s = DVector::<f64>::zeros(p);
    let mut q = DMatrix::<f64>::zeros(p, p);
    let mut start = 0;
    for &end in &ends {
        for &i in &order[start..end] {
            let zi = z.row(i).transpose();
            q += &zi * zi.transpose();
            s += zi;
        }
        sums.push(s.clone());
        outers.push(q.clone());
        start = end;
    }
    let (total_s, total_q) = (s, q);
    let slice_cov = |count: usize, sum: &DVector<f64>, outer: &DMatrix<f64>| {
        let c = count as f64;
        let mean = sum / c;
        outer / c - &mean * mean.transpose()
    };
    let candidates = execution.map(ends.len(), |g| {
        let below = ends[g];
        let above = n - below;
        if below < 2 || above < 2 {
            return None;
        }
        let lower = slice_cov(below, &sums[g], &outers[g]);
        let upper = slice_cov(above, &(&total_s - &sums[g]), &(&total_q - &outers[g]));
        let multiplicity = below - if g == 0 { 0 } else { ends[g - 1] };
        let m = save_slice_matrix(&[(below as f64 / n as f64, lower), (above as f64 / n as f64, upper)]);
        Some((multiplicity, m))
    });
    let mut agg = DMatrix::zeros(p, p);
    let mut used = 0;
    for (mult, m) in candidates.into_iter().flatten() {
        agg += m * mult as f64;
        used += mult;
    }
    if used == 0 {
        return Err(DrmaError::InvalidInput(
            "no response threshold leaves two points on each side".into(),
        ));
    }
    agg /= used as f64;
    linalg::symmetrize(&mut agg);
    Ok((agg, n - used))
}

/// Outcome of the BIC-type dimension criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionChoice {
    pub q_hat: usize,
    pub criterion: Vec<f64>,
    pub degenerate: bool,
}

/// `q̂ = argmax_l (n/2)·Σ_{i≤l}(log(λᵢ+1) − λᵢ) / Σ_{i≤p}(log(λᵢ+1) − λᵢ) − 2 D_n l(l+1)/(2p)`,
/// ties going to the smallest `l`. An all-zero spectrum yields `q̂ = 1`
/// with the degenerate flag set.
pub fn dee_select_q(eigenvalues: &[f64], n: usize, d_n: f64) -> DimensionChoice {
    let p = eigenvalues.len();
    let terms: Vec<f64> = eigenvalues
        .iter()
        .map(|&l| {
            let l = l.max(0.0);
            l.ln_1p() - l
        })
        .collect();
    let total: f64 = terms.iter().sum();
    let penalty = |l: usize| 2.0 * d_n * (l * (l + 1)) as f64 / (2.0 * p as f64);
    if total == 0.0 {
        let criterion = (1..=p).map(|l| -penalty(l)).collect();
        return DimensionChoice {
            q_hat: 1,
            criterion,
            degenerate: true,
        };
    }
    let mut partial = 0.0;
    let mut criterion = Vec::with_capacity(p);
    for (l, term) in terms.iter().enumerate() {
        partial += term;
        criterion.push(n as f64 / 2.0 * partial / total - penalty(l + 1));
    }
    let mut q_hat = 1;
    for l in 1..p {
        if criterion[l] > criterion[q_hat - 1] {
            q_hat = l + 1;
        }
    }
    DimensionChoice {
        q_hat,
        criterion,
        degenerate: false,
    }
}

/// Full DEE pipeline: aggregate, select q̂, return the leading q̂ directions.
pub fn dee_estimate(data: &Dataset, config: &DeeConfig) -> Result<SdrEstimate> {
    let spectrum = dee_aggregate(data, config)?;
    let choice = dee_select_q(spectrum.eigenvalues.as_slice(), data.n(), config.penalty(data.n()));
    let leading = spectrum.directions.columns(0, choice.q_hat).into_owned();
    let mut directions = linalg::orthonormalize(&leading);
    linalg::fix_signs(&mut directions);
    Ok(SdrEstimate {
        directions,
        eigenvalues: spectrum.eigenvalues.as_slice().to_vec(),
        q_hat: choice.q_hat,
        method: match config.flavor {
            DeeFlavor::Sir => SdrMethod::DeeSir,
            DeeFlavor::Save => SdrMethod::DeeSave,
        },
        criterion_values: choice.criterion,
        degenerate: choice.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn data(x: &[&[f64]], y: &[f64]) -> Dataset {
        let p = x[0].len();
        Dataset::new(
            DMatrix::from_fn(x.len(), p, |i, j| x[i][j]),
            DVector::from_column_slice(y),
        )
        .unwrap()
    }

    #[test]
    fn sir_candidate_by_hand() {
        let d = data(&[&[1.0], &[2.0], &[3.0]], &[1.0, 2.0, 3.0]);
        let m = moments_of(&d.x).unwrap();
        // m(2) = ((1-2) + (2-2)) / 3
        assert_relative_eq!(dee_candidate_sir(&d, &m, 2.0)[(0, 0)], 1.0 / 9.0, epsilon = 1e-15);
        assert_eq!(dee_candidate_sir(&d, &m, 0.5)[(0, 0)], 0.0);
        assert!(dee_candidate_sir(&d, &m, 3.0)[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn save_slice_formula() {
        let i2 = DMatrix::identity(2, 2);
        assert_eq!(save_slice_matrix(&[(0.5, i2.clone()), (0.5, i2)]), DMatrix::zeros(2, 2));
        let v0 = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.5]));
        let v1 = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.5]));
        let m = save_slice_matrix(&[(0.5, v0), (0.5, v1)]);
        assert_relative_eq!(
            m,
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.25]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn save_candidate_skips_thin_slices() {
        let d = data(&[&[1.0], &[2.0], &[4.0], &[3.0]], &[1.0, 2.0, 3.0, 4.0]);
        let m = moments_of(&d.x).unwrap();
        assert!(dee_candidate_save(&d, &m, 1.0, 1e-8).unwrap().is_none());
        assert!(dee_candidate_save(&d, &m, 2.0, 1e-8).unwrap().is_some());
        assert!(dee_candidate_save(&d, &m, 10.0, 1e-8).unwrap().is_none());
    }

    #[test]
    fn three_point_average() {
        let d = data(&[&[1.0, 0.5], &[2.0, -1.0], &[0.0, 2.0]], &[0.3, -1.0, 2.0]);
        let m = moments_of(&d.x).unwrap();
        let mut expected = DMatrix::zeros(2, 2);
        for &t in d.y.iter() {
            expected += dee_candidate_sir(&d, &m, t) / 3.0;
        }
        let spec = dee_aggregate(&d, &DeeConfig::sir()).unwrap();
        assert_relative_eq!(spec.aggregate, expected, epsilon = 1e-15);
    }

    #[test]
    fn select_q_examples() {
        let c = dee_select_q(&[0.5, 1e-6, 1e-6], 100, 10.0);
        assert_eq!(c.q_hat, 1);
        assert!(!c.degenerate);

        let c = dee_select_q(&[0.8, 0.8, 1e-6, 1e-6], 100, 0.1);
        assert_eq!(c.q_hat, 2);

        let c = dee_select_q(&[0.0, 0.0, 0.0], 100, 10.0);
        assert_eq!(c.q_hat, 1);
        assert!(c.degenerate);
    }

    #[test]
    fn select_q_trailing_zeros_only_move_penalty() {
        let base = [0.4, 0.1, 0.02];
        let padded = [0.4, 0.1, 0.02, 0.0, 0.0];
        let (n, d) = (150, 3.0);
        let a = dee_select_q(&base, n, d);
        let b = dee_select_q(&padded, n, d);
        for l in 1..=3 {
            let pen = |p: f64| 2.0 * d * (l * (l + 1)) as f64 / (2.0 * p);
            assert_relative_eq!(
                a.criterion[l - 1] + pen(3.0),
                b.criterion[l - 1] + pen(5.0),
                epsilon = 1e-12
            );
        }
    }
}
