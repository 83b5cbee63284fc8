#![allow(dead_code)]

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use switchback::config::{ExperimentConfig, AR1_COVERAGE};
use switchback::design::AssignmentDesign;
use switchback::dgp::PotentialOutcomeModel;

/// Model and design of the bundled AR(1) experiment at horizon `len`.
pub fn ar1_setup(len: usize) -> (PotentialOutcomeModel, AssignmentDesign, ExperimentConfig) {
    let cfg = ExperimentConfig::from_json(AR1_COVERAGE).expect("bundled config parses");
    let model = cfg.model.build(len).expect("model");
    let design = cfg.design.build(len).expect("design");
    (model, design, cfg)
}

/// Meat written out with the full `n x n` kernel matrix.
pub fn dense_meat(x: &DMatrix<f64>, u: &[f64], bandwidth: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let q = DMatrix::from_fn(n, n, |i, j| {
        let d = (i as f64 - j as f64).abs();
        if d <= bandwidth as f64 {
            1.0 - d / (bandwidth as f64 + 1.0)
        } else {
            0.0
        }
    });
    let du = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(u));
    x.transpose() * &du * q * &du * x
}

/// `(T-K) W⁻¹ (XᵀX)⁻¹ meat (XᵀX)⁻¹ W⁻¹` with a Gauss-Jordan inverse.
pub fn dense_sandwich(x: &DMatrix<f64>, u: &[f64], w: &[f64], bandwidth: usize) -> DMatrix<f64> {
    let g = gauss_jordan_inverse(&(x.transpose() * x));
    let winv = DMatrix::from_fn(w.len(), w.len(), |i, j| if i == j { 1.0 / w[i] } else { 0.0 });
    let n = x.nrows() as f64;
    &winv * &g * dense_meat(x, u, bandwidth) * &g * &winv * n
}

pub fn gauss_jordan_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = DMatrix::identity(n, n);
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
        m.swap_rows(c, piv);
        inv.swap_rows(c, piv);
        let d = m[(c, c)];
        for j in 0..n {
            m[(c, j)] /= d;
            inv[(c, j)] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[(r, c)];
                for j in 0..n {
                    m[(r, j)] -= f * m[(c, j)];
                    inv[(r, j)] -= f * inv[(c, j)];
                }
            }
        }
    }
    inv
}

/// Kolmogorov-Smirnov distance to the standard normal.
pub fn ks_normal(xs: &[f64]) -> f64 {
    let norm = Normal::new(0.0, 1.0).unwrap();
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = norm.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Impulse responses by direct recursion.
pub fn psi(phi: &[f64], k: usize) -> f64 {
    let mut out = vec![1.0];
    for j in 1..=k {
        let s: f64 = (1..=phi.len().min(j)).map(|i| phi[i - 1] * out[j - i]).sum();
        out.push(s);
    }
    out[k]
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}
