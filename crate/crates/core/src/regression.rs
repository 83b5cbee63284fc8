//! Lagged no-intercept regressions on normalized treatments.
//!
//! The pipeline is normalize -> lagged design -> least squares (Householder QR)
//! -> rescale by the harmonic-mean weights. Only outcome times `t = K+1..=T`
//! enter the fit; the first `K` outcomes are accepted but unused.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::design::{
    self, exposure_transform, generalized_weights, interaction_weights, lag_weights, AssignmentDesign,
    ExposureColumns, ExposureSpec, NormalizedPath, TreatmentKind, TreatmentPath,
};
use crate::error::{Error, Result};
use crate::hac::{hac_covariance, HacConfig, HacCovariance};

/// Relative singular-value cutoff below which a design counts as rank deficient.
pub const RANK_CUTOFF: f64 = 1e-10;
/// Gram condition numbers above this are logged as a warning.
pub const CONDITION_WARNING: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// `z̃_t, …, z̃_{t-K}`.
    Full,
    /// Only `z̃_{t-k}`.
    Marginal(usize),
    /// Full columns plus `z̃_{t-k+1} z̃_{t-k}` for `k = 1..=K`.
    Interaction,
    Exposure(ExposureSpec),
    /// Full columns with row `t` scaled by `h_t` (one value per `t = K+1..=T`).
    Generalized(Vec<f64>),
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Marginal(_) => "marginal",
            Variant::Interaction => "interaction",
            Variant::Exposure(_) => "exposure",
            Variant::Generalized(_) => "generalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub lags: usize,
    pub variant: Variant,
}

impl RegressionSpec {
    pub fn full(lags: usize) -> Self {
        Self { lags, variant: Variant::Full }
    }

    pub fn marginal(lags: usize, lag: usize) -> Self {
        Self { lags, variant: Variant::Marginal(lag) }
    }

    pub fn interaction(lags: usize) -> Self {
        Self { lags, variant: Variant::Interaction }
    }

    pub fn exposure(spec: ExposureSpec) -> Self {
        Self { lags: spec.max_lag(), variant: Variant::Exposure(spec) }
    }

    pub fn generalized(lags: usize, h: Vec<f64>) -> Self {
        Self { lags, variant: Variant::Generalized(h) }
    }

    /// Number of regressors `P`.
    pub fn columns(&self) -> usize {
        match &self.variant {
            Variant::Full | Variant::Generalized(_) => self.lags + 1,
            Variant::Marginal(_) => 1,
            Variant::Interaction => 2 * self.lags + 1,
            Variant::Exposure(spec) => spec.blocks(),
        }
    }

    /// Coefficient labels in column order.
    pub fn labels(&self) -> Vec<String> {
        match &self.variant {
            Variant::Full | Variant::Generalized(_) => (0..=self.lags).map(|k| format!("tau_{k}")).collect(),
            Variant::Marginal(k) => vec![format!("tau_{k}")],
            Variant::Interaction => (0..=self.lags)
                .map(|k| format!("tau_{k}"))
                .chain((1..=self.lags).map(|k| format!("tau_{}_{k}", k - 1)))
                .collect(),
            Variant::Exposure(spec) => (0..spec.blocks()).map(|s| format!("tau_g{s}")).collect(),
        }
    }

    pub fn validate(&self, len: usize, kind: TreatmentKind) -> Result<()> {
        if self.lags >= len {
            return Err(Error::InvalidLagCount { lags: self.lags, len });
        }
        match &self.variant {
            Variant::Full => {}
            Variant::Marginal(k) => {
                if *k > self.lags {
                    return Err(Error::InvalidSpec(format!("marginal lag {k} exceeds K={}", self.lags)));
                }
            }
            Variant::Interaction => {
                if kind != TreatmentKind::Binary {
                    return Err(Error::InvalidSpec("interaction regression needs a binary design".into()));
                }
                if self.lags == 0 {
                    return Err(Error::InvalidSpec("interaction regression needs K >= 1".into()));
                }
            }
            Variant::Exposure(spec) => {
                if spec.max_lag() != self.lags {
                    return Err(Error::InvalidSpec(format!(
                        "exposure blocks end at lag {} but K={}",
                        spec.max_lag(),
                        self.lags
                    )));
                }
                if kind != TreatmentKind::Binary {
                    return Err(Error::InvalidSpec("exposure regression needs a binary design".into()));
                }
            }
            Variant::Generalized(h) => {
                if h.len() != len - self.lags {
                    return Err(Error::LengthMismatch { what: "h sequence", expected: len - self.lags, got: h.len() });
                }
            }
        }
        Ok(())
    }
}

/// Regressor matrix with one row per outcome time `t = K+1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDesign {
    matrix: DMatrix<f64>,
    lags: usize,
}

impl LaggedDesign {
    pub fn from_matrix(matrix: DMatrix<f64>, lags: usize) -> Self {
        Self { matrix, lags }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    /// Length `T` of the series the design was built from.
    pub fn series_len(&self) -> usize {
        self.rows() + self.lags
    }
}

pub fn build_design(ztilde: &NormalizedPath, lags: usize, variant: &Variant) -> Result<LaggedDesign> {
    let z = ztilde.values();
    let len = z.len();
    if len <= lags {
        return Err(Error::InvalidLagCount { lags, len });
    }
    let rows = len - lags;
    let matrix = match variant {
        Variant::Full => DMatrix::from_fn(rows, lags + 1, |i, k| z[i + lags - k]),
        Variant::Marginal(k) => {
            if *k > lags {
                return Err(Error::InvalidSpec(format!("marginal lag {k} exceeds K={lags}")));
            }
            DMatrix::from_fn(rows, 1, |i, _| z[i + lags - k])
        }
        Variant::Interaction => {
            if lags == 0 {
                return Err(Error::InvalidSpec("interaction regression needs K >= 1".into()));
            }
            DMatrix::from_fn(rows, 2 * lags + 1, |i, c| {
                let t = i + lags;
                if c <= lags {
                    z[t - c]
                } else {
                    let k = c - lags;
                    z[t - k + 1] * z[t - k]
                }
            })
        }
        Variant::Generalized(h) => {
            if h.len() != rows {
                return Err(Error::LengthMismatch { what: "h sequence", expected: rows, got: h.len() });
            }
            DMatrix::from_fn(rows, lags + 1, |i, k| h[i] * z[i + lags - k])
        }
        Variant::Exposure(_) => {
            return Err(Error::InvalidSpec(
                "exposure designs are built from exposure columns, see exposure_design".into(),
            ))
        }
    };
    Ok(LaggedDesign { matrix, lags })
}

pub fn exposure_design(columns: &ExposureColumns) -> LaggedDesign {
    let rows = columns.columns.first().map_or(0, Vec::len);
    let matrix = DMatrix::from_fn(rows, columns.columns.len(), |i, s| columns.columns[s][i]);
    LaggedDesign { matrix, lags: columns.lags }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    /// Condition number of `XᵀX`.
    pub condition_number: f64,
}

/// Least squares without intercept via Householder QR.
pub fn ols_no_intercept(x: &LaggedDesign, y: &[f64]) -> Result<OlsFit> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::LengthMismatch { what: "outcome segment", expected: n, got: y.len() });
    }
    if n < p {
        return Err(Error::InvalidSpec(format!("{n} rows cannot identify {p} coefficients")));
    }
    let qr = x.matrix().clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio >= RANK_CUTOFF) {
        let rmax = r.diagonal().amax();
        let column = (0..p)
            .find(|&j| r[(j, j)].abs() <= RANK_CUTOFF * rmax)
            .unwrap_or_else(|| {
                (0..p)
                    .min_by(|&a, &b| r[(a, a)].abs().total_cmp(&r[(b, b)].abs()))
                    .unwrap_or(0)
            });
        return Err(Error::SingularDesign { column, ratio });
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::SingularDesign { column: 0, ratio })?;
    let condition_number = (smax / smin).powi(2);
    if condition_number > CONDITION_WARNING {
        warn!("Gram matrix condition number {condition_number:.3e} exceeds {CONDITION_WARNING:e}");
    }
    Ok(OlsFit { coefficients: beta.iter().copied().collect(), condition_number })
}

/// `τ̂_j = τ̃_j / w_j`.
pub fn rescale(tau_tilde: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if tau_tilde.len() != weights.len() {
        return Err(Error::LengthMismatch { what: "weights", expected: tau_tilde.len(), got: weights.len() });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| !(w > 0.0)) {
        return Err(Error::NonPositiveWeight { index, value });
    }
    Ok(tau_tilde.iter().zip(weights).map(|(t, w)| t / w).collect())
}

/// Everything downstream inference needs from one fit.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub spec: RegressionSpec,
    /// Series length `T`.
    pub len: usize,
    pub labels: Vec<String>,
    pub tau_tilde: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub weights: Vec<f64>,
    /// `Û_t = Y_t - x_tᵀ τ̃` for `t = K+1..=T`.
    pub residuals: Vec<f64>,
    pub design: LaggedDesign,
    pub condition_number: f64,
    pub vhat: Option<HacCovariance>,
}

impl EstimateResult {
    /// Rows used in the fit, `T - K`.
    pub fn rows(&self) -> usize {
        self.design.rows()
    }

    pub fn lags(&self) -> usize {
        self.spec.lags
    }

    pub fn with_hac(mut self, config: &HacConfig) -> Result<Self> {
        self.vhat = Some(hac_covariance(&self.design, &self.residuals, &self.weights, config)?);
        Ok(self)
    }

    pub fn vhat(&self) -> Result<&HacCovariance> {
        self.vhat
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("estimate has no HAC covariance attached".into()))
    }
}

/// Regressors and weights for `spec`, without fitting.
pub fn regressors(
    path: &TreatmentPath,
    design: &AssignmentDesign,
    spec: &RegressionSpec,
) -> Result<(LaggedDesign, Vec<f64>)> {
    spec.validate(design.len(), design.kind())?;
    let lags = spec.lags;
    match &spec.variant {
        Variant::Exposure(es) => {
            let cols = exposure_transform(path, design, es)?;
            let weights = cols.weights.clone();
            Ok((exposure_design(&cols), weights))
        }
        variant => {
            let ztilde = design::normalize(path, design)?;
            let x = build_design(&ztilde, lags, variant)?;
            let weights = match variant {
                Variant::Full => lag_weights(design, lags)?,
                Variant::Marginal(k) => vec![lag_weights(design, lags)?[*k]],
                Variant::Interaction => {
                    let mut w = lag_weights(design, lags)?;
                    w.extend(interaction_weights(design, lags)?);
                    w
                }
                Variant::Generalized(h) => generalized_weights(design, h, lags)?,
                Variant::Exposure(_) => unreachable!(),
            };
            Ok((x, weights))
        }
    }
}

pub fn estimate(
    y: &[f64],
    path: &TreatmentPath,
    design: &AssignmentDesign,
    spec: &RegressionSpec,
) -> Result<EstimateResult> {
    if y.len() != design.len() {
        return Err(Error::LengthMismatch { what: "outcome series", expected: design.len(), got: y.len() });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("outcome at t={} is not finite", i + 1)));
    }
    let (x, weights) = regressors(path, design, spec)?;
    let segment = &y[spec.lags..];
    let fit = ols_no_intercept(&x, segment)?;
    let tau_hat = rescale(&fit.coefficients, &weights)?;
    let beta = DVector::from_column_slice(&fit.coefficients);
    let fitted = x.matrix() * beta;
    let residuals = segment.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    Ok(EstimateResult {
        labels: spec.labels(),
        spec: spec.clone(),
        len: y.len(),
        tau_tilde: fit.coefficients,
        tau_hat,
        weights,
        residuals,
        design: x,
        condition_number: fit.condition_number,
        vhat: None,
    })
}

/// Weighted least squares for the lag-0 effect using all `T` observations:
/// `[Σ (z_t - p_t)^2 / (p_t(1-p_t))]^-1 Σ z̃_t y_t`.
pub fn wls_lag0(y: &[f64], path: &TreatmentPath, design: &AssignmentDesign) -> Result<f64> {
    if design.kind() != TreatmentKind::Binary {
        return Err(Error::InvalidSpec("the lag-0 WLS estimator needs a binary design".into()));
    }
    if y.len() != design.len() {
        return Err(Error::LengthMismatch { what: "outcome series", expected: design.len(), got: y.len() });
    }
    let ztilde = design::normalize(path, design)?;
    let (p, v) = (design.means(), design.variances());
    let z = path.values();
    let denom: f64 = (0..y.len()).map(|t| (z[t] - p[t]).powi(2) / v[t]).sum();
    if !(denom > 0.0) {
        return Err(Error::SingularDesign { column: 0, ratio: 0.0 });
    }
    let num: f64 = ztilde.values().iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(num / denom)
}
