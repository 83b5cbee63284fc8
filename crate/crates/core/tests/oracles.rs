mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use switchback::design::{draw_assignment, lag_weights, normalize, AssignmentDesign, TreatmentPath};
use switchback::dgp::{brute_force_tau, impulse_responses, normal_errors, ArModel, LinearModel, PotentialOutcomeModel};
use switchback::hac::{bias_term, hac_covariance_with, HacConfig, Kernel};
use switchback::harness::{analytic_variances, median, replicate, target_tau};
use switchback::regression::{estimate, ols_no_intercept, regressors, LaggedDesign, RegressionSpec};
use switchback::rng::derive_seed;

use common::*;

fn all_paths(len: usize) -> impl Iterator<Item = TreatmentPath> {
    (0u32..1 << len).map(move |m| TreatmentPath::from_bits(&(0..len).map(|i| (m >> i & 1) as u8).collect::<Vec<_>>()))
}

#[test]
fn hand_example_matches_numpy_reference() {
    // reference values computed independently with numpy's dense solve
    let z = TreatmentPath::from_bits(&[1, 0, 1, 1, 0, 0, 1, 0]);
    let y = [0.3, -1.2, 2.5, 0.7, -0.4, 1.1, 0.9, -2.0];
    let design = AssignmentDesign::binary_constant(0.5, 8).unwrap();
    let est = estimate(&y, &z, &design, &RegressionSpec::full(1)).unwrap().with_hac(&HacConfig::fixed(1)).unwrap();
    assert_relative_eq!(est.tau_tilde[0], 0.3, max_relative = 1e-12);
    assert_relative_eq!(est.tau_tilde[1], -0.4, max_relative = 1e-12);
    assert_relative_eq!(est.tau_hat[0], 1.2, max_relative = 1e-12);
    assert_relative_eq!(est.tau_hat[1], -1.6, max_relative = 1e-12);
    let want = DMatrix::from_row_slice(2, 2, &[4.4982, 2.1798, 2.1798, 2.4822]);
    assert!(rel_frobenius(&est.vhat().unwrap().matrix, &want) < 1e-12);
}

#[test]
fn ols_matches_normal_equations() {
    let x = DMatrix::from_row_slice(
        8,
        3,
        &[
            1.0, 0.5, -2.0, -1.0, 1.5, 0.3, 2.0, -0.7, 1.1, 0.4, 0.9, -1.3, -1.6, -0.2, 0.8, 0.7, 1.2, 2.2, -0.3, -1.8,
            0.6, 1.4, 0.1, -0.9,
        ],
    );
    let y = [1.0, -0.5, 2.3, 0.4, -1.1, 3.0, 0.2, -0.7];
    let fit = ols_no_intercept(&LaggedDesign::from_matrix(x.clone(), 0), &y).unwrap();
    let beta = gauss_jordan_inverse(&(x.transpose() * &x)) * x.transpose() * DVector::from_column_slice(&y);
    for j in 0..3 {
        assert_relative_eq!(fit.coefficients[j], beta[j], max_relative = 1e-12);
    }
}

#[test]
fn hac_matches_dense_product_on_random_instance() {
    let design = AssignmentDesign::binary_constant(0.4, 30).unwrap();
    let z = draw_assignment(&design, 30).unwrap();
    let y = normal_errors(30, 1.0, 31);
    let est = estimate(&y, &z, &design, &RegressionSpec::full(2)).unwrap();
    let h = hac_covariance_with(&est.design, &est.residuals, &est.weights, 3, Kernel::Bartlett).unwrap();
    let dense = dense_sandwich(est.design.matrix(), &est.residuals, &est.weights, 3);
    assert!(rel_frobenius(&h.matrix, &dense) < 1e-9);
}

#[test]
fn moment_identity_holds_for_time_varying_design() {
    let len = 8;
    let design = AssignmentDesign::binary(vec![0.3, 0.6, 0.5, 0.2, 0.7, 0.4, 0.5, 0.35], 0.01).unwrap();
    let model =
        PotentialOutcomeModel::Ar(ArModel::constant(vec![0.6, -0.2], 1.0, 0.2, normal_errors(len, 1.0, 3)).unwrap());
    for spec in [RegressionSpec::full(2), RegressionSpec::marginal(2, 1)] {
        let tau = target_tau(&model, &design, &spec).unwrap();
        let mut acc = vec![0.0; tau.len()];
        for path in all_paths(len) {
            let prob: f64 =
                path.values().iter().zip(design.means()).map(|(&z, &p)| if z == 1.0 { p } else { 1.0 - p }).product();
            let y = model.simulate(&path).unwrap();
            let (x, w) = regressors(&path, &design, &spec).unwrap();
            let wt = DVector::from_iterator(w.len(), w.iter().zip(&tau).map(|(a, b)| a * b));
            let u = DVector::from_column_slice(&y[spec.lags..]) - x.matrix() * wt;
            let score = x.matrix().tr_mul(&u) / x.rows() as f64;
            for (a, s) in acc.iter_mut().zip(score.iter()) {
                *a += prob * s;
            }
        }
        for a in acc {
            assert!(a.abs() < 1e-10, "{a}");
        }
    }
}

#[test]
fn brute_force_matches_closed_forms() {
    let len = 9;
    let design = AssignmentDesign::binary((0..len).map(|t| 0.25 + 0.05 * t as f64).collect(), 0.01).unwrap();
    let eps = normal_errors(len, 1.0, 4);
    let models = [
        PotentialOutcomeModel::Linear(
            LinearModel::banded(len, 2, |s, k| 1.0 + 0.1 * s as f64 - 0.3 * k as f64, eps.clone())
                .unwrap()
                .with_interactions(vec![0.4, -0.2])
                .unwrap(),
        ),
        PotentialOutcomeModel::Ar(ArModel::constant(vec![0.5, 0.2], 0.8, 0.1, eps.clone()).unwrap()),
        PotentialOutcomeModel::Ma(
            switchback::dgp::MaModel::new(
                vec![0.7, -0.3],
                (0..len).map(|t| [0.1 * t as f64, 0.6]).collect(),
                eps.iter().map(|&e| [e, e + 0.2]).collect(),
            )
            .unwrap(),
        ),
    ];
    for model in &models {
        let truth = model.true_tau(&design, 3).unwrap();
        for t in 4..=len {
            for k in 0..=3 {
                let brute = brute_force_tau(model, &design, t, k).unwrap();
                assert_relative_eq!(brute, truth.per_time[t - 4][k], epsilon = 1e-10);
            }
        }
    }
}

#[test]
fn ar_recursion_matches_impulse_expansion() {
    let len = 200;
    let phi = vec![0.5, -0.3, 0.1];
    let mu1: Vec<f64> = (0..len).map(|t| (t as f64 * 0.1).sin()).collect();
    let mu0: Vec<f64> = (0..len).map(|t| 0.2 * (t % 5) as f64).collect();
    let eps = normal_errors(len, 1.0, 8);
    let model = PotentialOutcomeModel::Ar(ArModel::new(phi.clone(), mu0.clone(), mu1.clone(), eps.clone()).unwrap());
    let design = AssignmentDesign::binary_constant(0.5, len).unwrap();
    let z = draw_assignment(&design, 1).unwrap();
    let y = model.simulate(&z).unwrap();
    let psi_all: Vec<f64> = (0..len).map(|j| psi(&phi, j)).collect();
    for (a, b) in impulse_responses(&phi, len - 1).iter().zip(&psi_all) {
        assert_relative_eq!(a, b, epsilon = 1e-14);
    }
    for t in 0..len {
        let direct: f64 = (0..=t)
            .map(|j| {
                let s = t - j;
                let mu = if z.values()[s] == 1.0 { mu1[s] } else { mu0[s] };
                psi_all[j] * (mu + eps[s])
            })
            .sum();
        assert_relative_eq!(y[t], direct, epsilon = 1e-10, max_relative = 1e-10);
    }
}

#[test]
fn linear_effects_do_not_depend_on_probabilities() {
    let len = 8;
    let model = PotentialOutcomeModel::Linear(LinearModel::homogeneous(&[1.0, -0.5, 0.25], normal_errors(len, 1.0, 2)).unwrap());
    let a = AssignmentDesign::binary_constant(0.5, len).unwrap();
    let b = AssignmentDesign::binary(vec![0.2, 0.9, 0.4, 0.6, 0.3, 0.8, 0.5, 0.1], 0.01).unwrap();
    for t in 1..=len {
        for k in 0..3 {
            assert_relative_eq!(
                brute_force_tau(&model, &a, t, k).unwrap(),
                brute_force_tau(&model, &b, t, k).unwrap(),
                epsilon = 1e-12
            );
        }
    }
}

#[test]
fn location_shift_leaves_design_average_unchanged() {
    let len = 10;
    let design = AssignmentDesign::binary_constant(0.5, len).unwrap();
    let y = normal_errors(len, 1.0, 12);
    let c = 3.7;
    let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
    let spec = RegressionSpec::full(2);
    let (mut mean_a, mut mean_b) = (vec![0.0; 3], vec![0.0; 3]);
    let total = (1u32 << len) as f64;
    for path in all_paths(len) {
        let Ok(a) = estimate(&y, &path, &design, &spec) else { continue };
        let b = estimate(&shifted, &path, &design, &spec).unwrap();
        // per-path bound |Δτ̃| <= ‖Xᵀ1‖ c / σ_min²
        let x = a.design.matrix();
        let ones = DVector::from_element(x.nrows(), 1.0);
        let smin = x.clone().svd(false, false).singular_values.min();
        let bound = (x.tr_mul(&ones)).norm() * c / (smin * smin);
        for j in 0..3 {
            assert!((b.tau_tilde[j] - a.tau_tilde[j]).abs() <= bound * (1.0 + 1e-9) + 1e-12);
            mean_a[j] += a.tau_hat[j] / total;
            mean_b[j] += b.tau_hat[j] / total;
        }
    }
    for j in 0..3 {
        assert!((mean_a[j] - mean_b[j]).abs() < 1e-10, "{j}: {} vs {}", mean_a[j], mean_b[j]);
    }
}

#[test]
fn marginal_and_full_agree_when_outcome_tracks_one_lag() {
    let len = 9;
    let k = 1;
    let design = AssignmentDesign::binary_constant(0.5, len).unwrap();
    let (mut full, mut marginal) = (0.0, 0.0);
    for path in all_paths(len) {
        let zt = normalize(&path, &design).unwrap();
        let y: Vec<f64> = (0..len).map(|t| if t >= k { 1.5 * zt.values()[t - k] } else { 0.0 }).collect();
        let (Ok(f), Ok(m)) = (
            estimate(&y, &path, &design, &RegressionSpec::full(2)),
            estimate(&y, &path, &design, &RegressionSpec::marginal(2, k)),
        ) else {
            continue;
        };
        full += f.tau_hat[k];
        marginal += m.tau_hat[0];
    }
    assert_relative_eq!(full, marginal, max_relative = 1e-10);
}

#[test]
fn gram_matrix_converges_to_inverse_weights() {
    let spec = RegressionSpec::full(2);
    let mut medians = Vec::new();
    for len in [200, 2000, 20000] {
        let design = AssignmentDesign::binary_constant(0.5, len).unwrap();
        let w = lag_weights(&design, 2).unwrap();
        let winv = DMatrix::from_diagonal(&DVector::from_iterator(3, w.iter().map(|x| 1.0 / x)));
        let errs: Vec<f64> = (0..200u64)
            .map(|i| {
                let z = draw_assignment(&design, derive_seed(len as u64, i)).unwrap();
                let (x, _) = regressors(&z, &design, &spec).unwrap();
                let g = x.matrix().tr_mul(x.matrix()) / x.rows() as f64;
                (g - &winv).norm()
            })
            .collect();
        medians.push(median(&errs));
    }
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
}

#[test]
fn bias_term_examples() {
    // 40 outcome rows after dropping one lag, so the alternating effect averages to zero
    let len = 41;
    let design = AssignmentDesign::binary_constant(0.5, len).unwrap();
    let homogeneous = PotentialOutcomeModel::Linear(LinearModel::homogeneous(&[1.0, 0.5], normal_errors(len, 1.0, 1)).unwrap());
    let b = bias_term(&homogeneous, &design, 1, 3).unwrap();
    assert!(b.raw.iter().all(|&x| x == 0.0));

    let alternating = PotentialOutcomeModel::Linear(
        LinearModel::banded(len, 1, |s, k| if k == 0 { if s % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 }, vec![0.0; len])
            .unwrap(),
    );
    let truth = alternating.true_tau(&design, 1).unwrap();
    assert_eq!(truth.tau[0], 0.0);
    let b = bias_term(&alternating, &design, 1, 2).unwrap();
    for i in 0..b.rows {
        assert_eq!(b.b[(i, 0)], truth.per_time[i][0]);
    }
    assert!(b.raw[(0, 0)] > 0.0);
    assert!(b.raw.clone().symmetric_eigenvalues().min() >= -1e-10);

    let b0 = bias_term(&alternating, &design, 1, 0).unwrap();
    assert!(rel_frobenius(&b0.raw, &(b0.b.transpose() * &b0.b)) < 1e-14);
}

#[test]
fn analytic_variances_hand_case() {
    // K=1, β=(1, 0.5), ε≡0, p=0.5, T=4: level term (0.75)²·3 / (0.25·3) = 2.25
    let v = analytic_variances(&[1.0, 0.5], &[], &[0.0; 4], 1, 0.5).unwrap();
    assert_relative_eq!(v.full, 2.25, max_relative = 1e-14);
    assert_relative_eq!(v.marginal[0], 2.5, max_relative = 1e-14);
    assert_relative_eq!(v.marginal[1], 3.25, max_relative = 1e-14);
    assert_relative_eq!(v.with_interaction, v.without_interaction, max_relative = 1e-14);
    assert_relative_eq!(v.marginal[0] - v.full, 0.25, max_relative = 1e-12);
}

#[test]
fn normalized_treatment_has_mean_zero() {
    let probs = vec![0.1, 0.5, 0.8, 0.3, 0.65];
    let design = AssignmentDesign::binary(probs, 0.01).unwrap();
    let draws = 100_000u64;
    let mut sums = [0.0; 5];
    for i in 0..draws {
        let z = draw_assignment(&design, derive_seed(77, i)).unwrap();
        for (s, v) in sums.iter_mut().zip(normalize(&z, &design).unwrap().values()) {
            *s += v;
        }
    }
    for (t, s) in sums.iter().enumerate() {
        let mean = s / draws as f64;
        let bound = 4.0 * (1.0 / design.variances()[t] / draws as f64).sqrt();
        assert!(mean.abs() <= bound, "t={t} mean={mean} bound={bound}");
    }

    let long = AssignmentDesign::binary_constant(0.5, 100_000).unwrap();
    let z = draw_assignment(&long, 5).unwrap();
    let share = z.values().iter().sum::<f64>() / 1e5;
    assert!((0.494..=0.506).contains(&share));
}

#[test]
fn simulation_config_centers_on_truth() {
    let (model, design, cfg) = ar1_setup(1000);
    let spec = RegressionSpec::full(5);
    let tau = target_tau(&model, &design, &spec).unwrap();
    assert_relative_eq!(tau[0], 0.5, max_relative = 1e-14);
    assert_relative_eq!(tau[3], 0.5 * 0.125, max_relative = 1e-14);
    let set = replicate(&model, &design, &spec, &[], Kernel::Bartlett, 5000, cfg.seed).unwrap();
    let mean = set.mean_tau();
    let sd = set.sd_tau();
    for k in 0..6 {
        assert!((mean[k] - tau[k]).abs() <= 3.0 * sd[k] / (5000f64).sqrt(), "lag {k}");
    }
    let single = replicate(&model, &design, &spec, &[], Kernel::Bartlett, 1, cfg.seed).unwrap();
    let z = draw_assignment(&design, derive_seed(cfg.seed, 0)).unwrap();
    let direct = estimate(&model.simulate(&z).unwrap(), &z, &design, &spec).unwrap();
    assert_eq!(single.tau_hat[0], direct.tau_hat);
}
