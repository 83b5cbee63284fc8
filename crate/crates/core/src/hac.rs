//! Kernel-weighted sandwich covariance for the rescaled coefficients.
//!
//! `V̂ = (T-K) W⁻¹ G⁻¹ M G⁻¹ W⁻¹` with `G = XᵀX` and the meat accumulated as a
//! lag sum `M = Γ_0 + Σ_{ℓ=1}^{L} κ(ℓ)(Γ_ℓ + Γ_ℓᵀ)`, `Γ_ℓ = Σ_t Û_t Û_{t+ℓ} x_t x_{t+ℓ}ᵀ`.
//! Standard errors are `sqrt(V̂_kk / (T-K))`; no small-sample correction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::AssignmentDesign;
use crate::dgp::PotentialOutcomeModel;
use crate::error::{Error, Result};
use crate::regression::LaggedDesign;

/// Eigenvalues down to `-PSD_TOLERANCE * trace` are treated as zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Bartlett,
}

impl Kernel {
    pub fn weight(self, lag: i64, bandwidth: usize) -> f64 {
        match self {
            Kernel::Bartlett => bartlett_weight(lag, bandwidth),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Bartlett => "bartlett",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bartlett" | "newey-west" => Ok(Kernel::Bartlett),
            other => Err(Error::InvalidArgument(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bandwidth {
    Fixed(usize),
    /// `floor(T^{1/4})` with `T` the full series length.
    FourthRoot,
}

impl Bandwidth {
    pub fn resolve(self, len: usize) -> usize {
        match self {
            Bandwidth::Fixed(l) => l,
            Bandwidth::FourthRoot => fourth_root_floor(len),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "auto" | "fourth-root" | "t^1/4" => Ok(Bandwidth::FourthRoot),
            _ => s
                .parse()
                .map(Bandwidth::Fixed)
                .map_err(|_| Error::InvalidArgument(format!("bandwidth '{s}' is neither an integer nor 'auto'"))),
        }
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Fixed(l) => write!(f, "{l}"),
            Bandwidth::FourthRoot => f.write_str("auto"),
        }
    }
}

/// Largest integer `L` with `L^4 <= n`, computed without floating error.
pub fn fourth_root_floor(n: usize) -> usize {
    let mut l = (n as f64).powf(0.25).floor() as usize;
    while (l + 1).checked_pow(4).is_some_and(|x| x <= n) {
        l += 1;
    }
    while l > 0 && l.pow(4) > n {
        l -= 1;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HacConfig {
    pub bandwidth: Bandwidth,
    pub kernel: Kernel,
}

impl Default for HacConfig {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::FourthRoot, kernel: Kernel::Bartlett }
    }
}

impl HacConfig {
    pub fn fixed(bandwidth: usize) -> Self {
        Self { bandwidth: Bandwidth::Fixed(bandwidth), kernel: Kernel::Bartlett }
    }
}

pub fn bartlett_weight(lag: i64, bandwidth: usize) -> f64 {
    let a = lag.unsigned_abs() as usize;
    if a > bandwidth {
        0.0
    } else {
        1.0 - a as f64 / (bandwidth as f64 + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HacCovariance {
    pub matrix: DMatrix<f64>,
    pub bandwidth: usize,
    pub kernel: Kernel,
    /// `T - K`, the divisor for standard errors.
    pub rows: usize,
}

impl HacCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `sqrt(max(V̂_kk, 0) / (T-K))`.
    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.rows as f64;
        self.matrix.diagonal().iter().map(|&v| (v.max(0.0) / n).sqrt()).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().min()
    }

    /// Smallest eigenvalue is at least `-PSD_TOLERANCE * trace`.
    pub fn is_psd(&self) -> bool {
        let tr = self.matrix.trace().abs();
        self.min_eigenvalue() >= -PSD_TOLERANCE * tr
    }
}

/// Bartlett-weighted meat `Σ_{|ℓ|≤L} κ(ℓ) Γ_ℓ` from scores `g_t = Û_t x_t`.
pub fn hac_meat(x: &DMatrix<f64>, residuals: &[f64], bandwidth: usize, kernel: Kernel) -> DMatrix<f64> {
    let n = x.nrows();
    let mut g = x.clone();
    for (mut row, &u) in g.row_iter_mut().zip(residuals) {
        row *= u;
    }
    let mut meat = g.transpose() * &g;
    for lag in 1..=bandwidth.min(n.saturating_sub(1)) {
        let w = kernel.weight(lag as i64, bandwidth);
        if w == 0.0 {
            continue;
        }
        let gamma = g.rows(0, n - lag).transpose() * g.rows(lag, n - lag);
        meat += (&gamma + gamma.transpose()) * w;
    }
    meat
}

pub fn hac_covariance(
    x: &LaggedDesign,
    residuals: &[f64],
    weights: &[f64],
    config: &HacConfig,
) -> Result<HacCovariance> {
    let bandwidth = config.bandwidth.resolve(x.series_len());
    hac_covariance_with(x, residuals, weights, bandwidth, config.kernel)
}

pub fn hac_covariance_with(
    x: &LaggedDesign,
    residuals: &[f64],
    weights: &[f64],
    bandwidth: usize,
    kernel: Kernel,
) -> Result<HacCovariance> {
    let (n, p) = (x.rows(), x.cols());
    if residuals.len() != n {
        return Err(Error::LengthMismatch { what: "residuals", expected: n, got: residuals.len() });
    }
    if weights.len() != p {
        return Err(Error::LengthMismatch { what: "weights", expected: p, got: weights.len() });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| !(w > 0.0)) {
        return Err(Error::NonPositiveWeight { index, value });
    }
    if bandwidth >= n {
        return Err(Error::BandwidthTooLarge { bandwidth, rows: n });
    }
    let xm = x.matrix();
    let gram = xm.transpose() * xm;
    let ginv = gram
        .cholesky()
        .ok_or(Error::SingularDesign { column: 0, ratio: 0.0 })?
        .inverse();
    let meat = hac_meat(xm, residuals, bandwidth, kernel);
    let mut bread = ginv;
    for (j, w) in weights.iter().enumerate() {
        bread.row_mut(j).unscale_mut(*w);
    }
    let mut v = &bread * meat * bread.transpose() * n as f64;
    v = (&v + v.transpose()) * 0.5;
    Ok(HacCovariance { matrix: v, bandwidth, kernel, rows: n })
}

/// Heterogeneity matrix `b_K` and the kernel form `b_Kᵀ Q_K b_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasTerm {
    /// `(T-K) x (K+1)`, entry `(t, k) = τ_{t,k} - w_k τ_k / v_{t-k}`.
    pub b: DMatrix<f64>,
    /// `b_Kᵀ Q_K b_K` as a sum over rows.
    pub raw: DMatrix<f64>,
    pub rows: usize,
}

impl BiasTerm {
    /// `B_K / (T-K)`, the scale on which `E[V̂] - V` is measured.
    pub fn normalized(&self) -> DMatrix<f64> {
        &self.raw / self.rows as f64
    }
}

/// Bias term of the full-lag regression for a model with known per-time effects.
pub fn bias_term(
    model: &PotentialOutcomeModel,
    design: &AssignmentDesign,
    lags: usize,
    bandwidth: usize,
) -> Result<BiasTerm> {
    let truth = model.true_tau(design, lags)?;
    let weights = crate::design::lag_weights(design, lags)?;
    let v = design.variances();
    let n = design.len() - lags;
    if bandwidth >= n {
        return Err(Error::BandwidthTooLarge { bandwidth, rows: n });
    }
    let b = DMatrix::from_fn(n, lags + 1, |i, k| {
        let t = i + lags;
        truth.per_time[i][k] - weights[k] * truth.tau[k] / v[t - k]
    });
    let raw = hac_meat(&b, &vec![1.0; n], bandwidth, Kernel::Bartlett);
    let raw = (&raw + raw.transpose()) * 0.5;
    Ok(BiasTerm { b, raw, rows: n })
}
