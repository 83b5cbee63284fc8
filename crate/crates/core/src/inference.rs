//! Normal-pivot intervals, the studentized Wald test and the randomization test.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::design::{draw_assignment, AssignmentDesign, TreatmentPath};
use crate::error::{Error, Result};
use crate::hac::HacConfig;
use crate::regression::{estimate, EstimateResult, RegressionSpec};
use crate::rng::derive_seed;

/// Relative singular-value cutoff for inverting a covariance block.
pub const COVARIANCE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagInference {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    /// Set when the standard error is zero.
    pub degenerate: bool,
}

/// `q_{(1+level)/2}` of the standard normal.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 * (1.0 + level)))
}

/// `2(1 - Φ(|z|)) = erfc(|z|/√2)`.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

pub fn lag_interval(label: String, estimate: f64, std_error: f64, q: f64) -> LagInference {
    let (p_value, degenerate) = if std_error > 0.0 {
        (two_sided_p(estimate / std_error), false)
    } else if estimate == 0.0 {
        (1.0, true)
    } else {
        (0.0, true)
    };
    LagInference {
        label,
        estimate,
        std_error,
        ci_low: estimate - q * std_error,
        ci_high: estimate + q * std_error,
        p_value,
        degenerate,
    }
}

pub fn confidence_intervals(result: &EstimateResult, level: f64) -> Result<Vec<LagInference>> {
    let q = normal_quantile(level)?;
    let se = result.vhat()?.standard_errors();
    Ok(result
        .labels
        .iter()
        .zip(result.tau_hat.iter().zip(se))
        .map(|(label, (&est, se))| lag_interval(label.clone(), est, se, q))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldTest {
    pub lags: Vec<usize>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("df >= 1").sf(x)
}

fn check_subset(subset: &[usize], dim: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("joint test needs at least one coefficient".into()));
    }
    for (i, &j) in subset.iter().enumerate() {
        if j >= dim {
            return Err(Error::InvalidArgument(format!("coefficient index {j} outside 0..{dim}")));
        }
        if subset[..i].contains(&j) {
            return Err(Error::InvalidArgument(format!("coefficient index {j} repeated")));
        }
    }
    Ok(())
}

/// `(T-K) τ̂_Sᵀ V̂_SS⁻¹ τ̂_S` against `χ²_{|S|}`.
pub fn wald_test(result: &EstimateResult, subset: &[usize]) -> Result<WaldTest> {
    let vhat = result.vhat()?;
    check_subset(subset, vhat.dim())?;
    let m = subset.len();
    let block = DMatrix::from_fn(m, m, |i, j| vhat.matrix[(subset[i], subset[j])]);
    let tau = DVector::from_iterator(m, subset.iter().map(|&j| result.tau_hat[j]));
    let svd = block.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio >= COVARIANCE_CUTOFF) {
        return Err(Error::SingularCovariance { lags: subset.to_vec(), ratio });
    }
    let u = svd.u.as_ref().expect("computed");
    let vt = svd.v_t.as_ref().expect("computed");
    // V⁻¹ = V Σ⁻¹ Uᵀ
    let proj_u = u.transpose() * &tau;
    let proj_v = vt * &tau;
    let quad: f64 = (0..m).map(|i| proj_v[i] * proj_u[i] / svd.singular_values[i]).sum();
    let statistic = result.rows() as f64 * quad;
    Ok(WaldTest { lags: subset.to_vec(), statistic, df: m, p_value: chi_square_sf(statistic, m) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrtResult {
    pub observed: f64,
    pub p_value: f64,
    pub draws: usize,
    /// Resamples excluded for singular fits.
    pub singular: usize,
    #[serde(skip)]
    pub resamples: Vec<f64>,
}

/// `(1 + #{s ≥ observed}) / (n + 1)`.
pub fn frt_p_value(observed: f64, resamples: &[f64]) -> f64 {
    let hits = resamples.iter().filter(|&&s| s >= observed).count();
    (1 + hits) as f64 / (resamples.len() + 1) as f64
}

fn is_singular(e: &Error) -> bool {
    matches!(e, Error::SingularDesign { .. } | Error::SingularCovariance { .. })
}

fn studentized(
    y: &[f64],
    path: &TreatmentPath,
    design: &AssignmentDesign,
    spec: &RegressionSpec,
    hac: &HacConfig,
    subset: &[usize],
) -> Result<f64> {
    let est = estimate(y, path, design, spec)?.with_hac(hac)?;
    Ok(wald_test(&est, subset)?.statistic)
}

/// Randomization test of the sharp null on the studentized Wald statistic.
///
/// The outcome series is held fixed and `draws` new assignment paths are
/// drawn from `design`; resample `i` uses seed `derive_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn frt_sharp(
    y: &[f64],
    path: &TreatmentPath,
    design: &AssignmentDesign,
    spec: &RegressionSpec,
    hac: &HacConfig,
    subset: &[usize],
    draws: usize,
    seed: u64,
) -> Result<FrtResult> {
    let observed = studentized(y, path, design, spec, hac, subset)?;
    let stats: Vec<Option<f64>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let z = draw_assignment(design, derive_seed(seed, i as u64))?;
            match studentized(y, &z, design, spec, hac, subset) {
                Ok(s) => Ok(Some(s)),
                Err(e) if is_singular(&e) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let resamples: Vec<f64> = stats.iter().flatten().copied().collect();
    let singular = draws - resamples.len();
    if singular * 100 >= draws && singular > 0 {
        return Err(Error::TooManySingularResamples { singular, draws });
    }
    Ok(FrtResult { observed, p_value: frt_p_value(observed, &resamples), draws, singular, resamples })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub level: f64,
    pub rows: usize,
    pub bandwidth: usize,
    pub kernel: &'static str,
    pub lags: Vec<LagInference>,
    pub joint: Option<WaldTest>,
    pub frt: Option<FrtResult>,
}

impl InferenceReport {
    pub fn new(result: &EstimateResult, level: f64, joint: Option<&[usize]>) -> Result<Self> {
        let vhat = result.vhat()?;
        Ok(Self {
            level,
            rows: result.rows(),
            bandwidth: vhat.bandwidth,
            kernel: vhat.kernel.name(),
            lags: confidence_intervals(result, level)?,
            joint: joint.map(|s| wald_test(result, s)).transpose()?,
            frt: None,
        })
    }
}
