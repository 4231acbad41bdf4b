use drma_core::bootstrap::{bootstrap_p_value, multiplier_high, multiplier_low, two_point_multipliers};
use drma_core::data::{sample_moments, standardize_columns};
use drma_core::exec::Execution;
use drma_core::kernel::KernelSpec;
use drma_core::linalg::{max_principal_angle, sym_eigen_desc};
use drma_core::regression::{fit_nls, fit_ols, gradient_fd_error, link_gradient_matrix};
use drma_core::rng::{self, StreamRng};
use drma_core::sdr::dee::{dee_aggregate, dee_estimate};
use drma_core::sdr::DeeConfig;
use drma_core::statistic::{chi2_1_upper_tail, t_n_statistic};
use drma_core::{Dataset, LinearLink, Link, QuadraticLink, TestResult};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal_matrix(r: &mut StreamRng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| r.sample(StandardNormal))
}

fn random_orthogonal(r: &mut StreamRng, q: usize) -> DMatrix<f64> {
    normal_matrix(r, q, q).qr().q()
}

fn stat(e: &DVector<f64>, u: &DMatrix<f64>, h: f64) -> TestResult {
    let k = KernelSpec::quartic(u.ncols()).unwrap();
    t_n_statistic(e, u, h, &k, Execution::Sequential).unwrap()
}

fn same(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn instance(seed: u64, n: usize, q: usize) -> (DVector<f64>, DMatrix<f64>, f64) {
    let mut r = rng::stream(seed, &[]);
    let u = normal_matrix(&mut r, n, q);
    let e = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    (e, u, 0.8 + q as f64 * 0.4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn statistic_is_exchangeable(seed in any::<u64>(), n in 5usize..40, q in 1usize..4) {
        let (e, u, h) = instance(seed, n, q);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[1]));
        let e2 = DVector::from_fn(n, |i, _| e[order[i]]);
        let u2 = DMatrix::from_fn(n, q, |i, c| u[(order[i], c)]);
        let (a, b) = (stat(&e, &u, h), stat(&e2, &u2, h));
        prop_assert!(same(a.v_n, b.v_n, 1e-12));
        prop_assert!(same(a.var_hat, b.var_hat, 1e-12));
        prop_assert!(same(a.t_n, b.t_n, 1e-12));
    }

    #[test]
    fn residual_sign_flip(seed in any::<u64>(), n in 5usize..40, q in 1usize..4) {
        let (e, u, h) = instance(seed, n, q);
        let (a, b) = (stat(&e, &u, h), stat(&-&e, &u, h));
        prop_assert!(same(a.v_n, b.v_n, 1e-14));
        prop_assert!(same(a.var_hat, b.var_hat, 1e-14));
        prop_assert!(same(a.t_n, b.t_n, 1e-14));
    }

    #[test]
    fn direction_sign_flip(seed in any::<u64>(), n in 5usize..40) {
        let (e, u, h) = instance(seed, n, 1);
        let (a, b) = (stat(&e, &u, h), stat(&e, &-&u, h));
        prop_assert_eq!(a.v_n, b.v_n);
        prop_assert_eq!(a.t_n, b.t_n);
    }

    #[test]
    fn rotation_of_directions(seed in any::<u64>(), n in 5usize..40, q in 2usize..5) {
        let (e, u, h) = instance(seed, n, q);
        let c = random_orthogonal(&mut rng::stream(seed, &[2]), q);
        let (a, b) = (stat(&e, &u, h), stat(&e, &(&u * c), h));
        prop_assert!(same(a.v_n, b.v_n, 1e-10));
        prop_assert!(same(a.var_hat, b.var_hat, 1e-10));
        prop_assert!((a.t_n - b.t_n).abs() <= 1e-10 * a.t_n.abs().max(1.0));
    }

    #[test]
    fn result_fields_consistent(seed in any::<u64>(), n in 5usize..40, q in 1usize..4) {
        let (e, u, h) = instance(seed, n, q);
        let t = stat(&e, &u, h);
        prop_assert!((t.t_n_squared - t.t_n * t.t_n).abs() <= 1e-12 * t.t_n_squared.max(1.0));
        prop_assert!((t.p_value - chi2_1_upper_tail(t.t_n_squared)).abs() <= 1e-10);
        prop_assert!((0.0..=1.0).contains(&t.p_value));
        prop_assert!(t.var_hat >= 0.0);
    }

    #[test]
    fn standardization_round_trip(seed in any::<u64>(), n in 3usize..30, p in 1usize..5) {
        let mut r = rng::stream(seed, &[]);
        let x = DMatrix::from_fn(n, p, |_, c| r.random_range(-50.0..50.0) * (c + 1) as f64 + 7.0);
        let data = Dataset::new(x.clone(), DVector::zeros(n)).unwrap();
        let (z, record) = standardize_columns(&data).unwrap();
        let back = record.invert(&z.x);
        for (a, b) in back.iter().zip(x.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        for c in 0..p {
            let col = z.x.column(c);
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            prop_assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn covariance_symmetric_psd(seed in any::<u64>(), n in 2usize..30, p in 1usize..6) {
        let mut r = rng::stream(seed, &[]);
        let data = Dataset::new(normal_matrix(&mut r, n, p), DVector::zeros(n)).unwrap();
        let cov = sample_moments(&data).unwrap().covariance;
        prop_assert!((&cov - cov.transpose()).amax() <= 1e-12);
        let (vals, _) = sym_eigen_desc(&cov).unwrap();
        prop_assert!(vals.min() >= -1e-10);
    }

    #[test]
    fn ols_residuals_orthogonal(seed in any::<u64>(), n in 6usize..40, p in 1usize..4, intercept in any::<bool>()) {
        let mut r = rng::stream(seed, &[]);
        let x = normal_matrix(&mut r, n, p);
        let y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal) + 3.0);
        let (z, _) = standardize_columns(&Dataset::new(x, y).unwrap()).unwrap();
        let fit = fit_ols(&z, intercept).unwrap();
        for c in 0..p {
            prop_assert!(fit.residuals.dot(&z.x.column(c)).abs() < 1e-8);
        }
        if intercept {
            prop_assert!(fit.residuals.sum().abs() < 1e-8);
        }
        prop_assert!((&fit.sigma_x_hat - fit.sigma_x_hat.transpose()).amax() < 1e-10);
        // Independent solve through the normal equations.
        let cols = p + usize::from(intercept);
        let design = DMatrix::from_fn(n, cols, |i, c| if c < p { z.x[(i, c)] } else { 1.0 });
        let coef = (design.transpose() * &design).lu().solve(&(design.transpose() * &z.y)).unwrap();
        let resid = &z.y - &design * coef;
        prop_assert!((resid - &fit.residuals).amax() < 1e-8);
    }

    #[test]
    fn link_gradients_match_differences(seed in any::<u64>(), p in 1usize..5) {
        let mut r = rng::stream(seed, &[]);
        let x: Vec<f64> = (0..p).map(|_| r.random_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..p).map(|_| r.random_range(0.2..2.0)).collect();
        let index: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        prop_assume!(index.abs() > 1e-2);
        prop_assert!(gradient_fd_error(&QuadraticLink, &x, &beta, &[]) < 1e-5);
        let linear = LinearLink { intercept: true };
        prop_assert!(gradient_fd_error(&linear, &x, &beta, &[0.3]) < 1e-5);
    }

    #[test]
    fn nls_objective_never_increases(seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[]);
        let x = DMatrix::from_fn(40, 1, |_, _| r.random_range(0.5..2.0));
        let y = x.column(0).map(|v| 4.0 * v * v + 0.1 * r.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let fit = fit_nls(&data, &QuadraticLink, &[r.random_range(0.5..4.0)]).unwrap();
        prop_assert!(fit.rss_history.windows(2).all(|w| w[1] <= w[0]));
        let (_, sigma) = link_gradient_matrix(&data, &fit, &QuadraticLink);
        prop_assert!(sym_eigen_desc(&sigma).unwrap().0.min() >= -1e-10);
    }

    #[test]
    fn multipliers_two_valued(seed in any::<u64>(), count in 1usize..200) {
        let v = two_point_multipliers(count, &mut rng::stream(seed, &[]));
        prop_assert_eq!(v.len(), count);
        prop_assert!(v.iter().all(|&x| x == multiplier_low() || x == multiplier_high()));
    }

    #[test]
    fn bootstrap_p_value_in_unit_interval(obs in -5.0f64..5.0, stars in prop::collection::vec(-5.0f64..5.0, 0..50)) {
        let p = bootstrap_p_value(obs, &stars);
        prop_assert!(p > 0.0 && p <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dee_sir_rotation_equivariance(seed in any::<u64>(), p in 2usize..5) {
        let mut r = rng::stream(seed, &[]);
        let n = 150;
        let x = normal_matrix(&mut r, n, p);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + 0.5 * x[(i, 1)] + 0.2 * r.sample::<f64, _>(StandardNormal));
        let q = random_orthogonal(&mut r, p);
        let a = dee_aggregate(&Dataset::new(x.clone(), y.clone()).unwrap(), &DeeConfig::sir()).unwrap();
        let b = dee_aggregate(&Dataset::new(&x * &q, y).unwrap(), &DeeConfig::sir()).unwrap();
        for (l1, l2) in a.eigenvalues.iter().zip(b.eigenvalues.iter()) {
            prop_assert!((l1 - l2).abs() < 1e-8 * l1.abs().max(1e-6));
        }
        let lead_a = q.transpose() * a.directions.columns(0, 1);
        let lead_b = b.directions.columns(0, 1).into_owned();
        prop_assert!(max_principal_angle(&lead_a, &lead_b) < 1e-6);
    }

    #[test]
    fn dee_output_contract(seed in any::<u64>(), p in 1usize..6, save in any::<bool>()) {
        let mut r = rng::stream(seed, &[]);
        let n = 60;
        let x = normal_matrix(&mut r, n, p);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)].powi(2) + r.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let config = if save { DeeConfig::save() } else { DeeConfig::sir() };
        let spectrum = dee_aggregate(&data, &config).unwrap();
        prop_assert!((&spectrum.whitened - spectrum.whitened.transpose()).amax() < 1e-10);
        prop_assert!(spectrum.eigenvalues.iter().all(|&l| l >= 0.0));
        prop_assert!(spectrum.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let est = dee_estimate(&data, &config).unwrap();
        let again = dee_estimate(&data, &config).unwrap();
        prop_assert_eq!(&est.directions, &again.directions);
        let gram = est.directions.transpose() * &est.directions;
        prop_assert!((gram - DMatrix::identity(est.q_hat, est.q_hat)).amax() < 1e-10);
        for col in est.directions.column_iter() {
            let (idx, _) = col.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
            prop_assert!(col[idx] > 0.0);
        }
    }
}

#[test]
fn sigma_x_hat_psd_for_linear_link() {
    let mut r = rng::stream(1, &[]);
    let x = normal_matrix(&mut r, 30, 3);
    let y = DVector::from_fn(30, |i, _| x[(i, 0)]);
    let data = Dataset::new(x, y).unwrap();
    let fit = fit_ols(&data, true).unwrap();
    let (m, sigma) = link_gradient_matrix(&data, &fit, &LinearLink { intercept: true });
    assert!(m.column(3).iter().all(|&v| v == 1.0));
    assert!(sym_eigen_desc(&sigma).unwrap().0.min() >= -1e-10);
    let _ = LinearLink { intercept: false }.theta_dim();
}
