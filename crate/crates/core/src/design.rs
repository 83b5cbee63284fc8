//! Assignment designs, normalized regressors and the weights that map raw
//! least-squares coefficients back onto the effect scale.
//!
//! Time is 1-based in the documentation and 0-based in storage: `values[0]`
//! holds `z_1`. A regression with `K` lags uses outcome times `t = K+1..=T`,
//! i.e. storage rows `K..T`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub const DEFAULT_OVERLAP_FLOOR: f64 = 0.01;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;
/// Widest exposure block whose moments are enumerated exactly.
pub const EXPOSURE_WIDTH_CAP: usize = 20;
pub const EXPOSURE_VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

/// Per-time distribution for continuous designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, variance: f64 },
    /// Takes `values[1]` with probability `prob`, else `values[0]`.
    TwoPoint { values: [f64; 2], prob: f64 },
}

impl Sampler {
    pub fn mean(&self) -> f64 {
        match *self {
            Sampler::Uniform { low, high } => 0.5 * (low + high),
            Sampler::Normal { mean, .. } => mean,
            Sampler::TwoPoint { values, prob } => values[0] + prob * (values[1] - values[0]),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Sampler::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Sampler::Normal { variance, .. } => variance,
            Sampler::TwoPoint { values, prob } => prob * (1.0 - prob) * (values[1] - values[0]).powi(2),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Sampler::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Sampler::Normal { mean, variance } => mean.is_finite() && variance.is_finite() && variance > 0.0,
            Sampler::TwoPoint { values, prob } => {
                values.iter().all(|v| v.is_finite()) && prob > 0.0 && prob < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDesign(format!("malformed sampler {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            Sampler::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Sampler::Normal { mean, variance } => Normal::new(mean, variance.sqrt())
                .expect("validated at construction")
                .sample(rng),
            Sampler::TwoPoint { values, prob } => {
                if rng.random::<f64>() < prob {
                    values[1]
                } else {
                    values[0]
                }
            }
        }
    }
}

/// Independent per-time assignment distribution, known to the analyst.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentDesign {
    kind: TreatmentKind,
    means: Vec<f64>,
    variances: Vec<f64>,
    samplers: Option<Vec<Sampler>>,
    floor: f64,
}

impl AssignmentDesign {
    /// Bernoulli design with `P(Z_t = 1) = probs[t]`. Every probability must
    /// lie in `[floor, 1 - floor]`.
    pub fn binary(probs: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor <= 0.5) {
            return Err(Error::InvalidDesign(format!("overlap floor {floor} outside (0, 0.5]")));
        }
        if probs.is_empty() {
            return Err(Error::InvalidDesign("design has no time points".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p >= floor && p <= 1.0 - floor) {
                return Err(Error::InvalidDesign(format!(
                    "p_{} = {p} violates overlap [{floor}, {}]",
                    i + 1,
                    1.0 - floor
                )));
            }
        }
        let variances = probs.iter().map(|p| p * (1.0 - p)).collect();
        Ok(Self {
            kind: TreatmentKind::Binary,
            means: probs,
            variances,
            samplers: None,
            floor,
        })
    }

    pub fn binary_constant(p: f64, len: usize) -> Result<Self> {
        Self::binary(vec![p; len], DEFAULT_OVERLAP_FLOOR)
    }

    /// Continuous design with declared moments. When samplers are supplied
    /// their analytic moments must agree with the declared ones.
    pub fn continuous(
        means: Vec<f64>,
        variances: Vec<f64>,
        samplers: Option<Vec<Sampler>>,
        variance_floor: f64,
    ) -> Result<Self> {
        if !(variance_floor > 0.0) {
            return Err(Error::InvalidDesign(format!("variance floor {variance_floor} must be positive")));
        }
        if means.is_empty() {
            return Err(Error::InvalidDesign("design has no time points".into()));
        }
        if variances.len() != means.len() {
            return Err(Error::LengthMismatch {
                what: "design variances",
                expected: means.len(),
                got: variances.len(),
            });
        }
        for (i, (&m, &v)) in means.iter().zip(&variances).enumerate() {
            if !m.is_finite() || !v.is_finite() {
                return Err(Error::InvalidDesign(format!("non-finite moment at t={}", i + 1)));
            }
            if v < variance_floor {
                return Err(Error::VarianceBelowFloor { t: i + 1, value: v, floor: variance_floor });
            }
        }
        if let Some(s) = &samplers {
            if s.len() != means.len() {
                return Err(Error::LengthMismatch { what: "design samplers", expected: means.len(), got: s.len() });
            }
            for (i, sampler) in s.iter().enumerate() {
                sampler.validate()?;
                let (m, v) = (sampler.mean(), sampler.variance());
                let tol = 1e-9 * (1.0 + m.abs().max(v.abs()));
                if (m - means[i]).abs() > tol || (v - variances[i]).abs() > tol {
                    return Err(Error::InvalidDesign(format!(
                        "sampler at t={} has moments ({m}, {v}) but the design declares ({}, {})",
                        i + 1,
                        means[i],
                        variances[i]
                    )));
                }
            }
        }
        Ok(Self {
            kind: TreatmentKind::Continuous,
            means,
            variances,
            samplers,
            floor: variance_floor,
        })
    }

    /// Continuous design whose moments are read off the samplers.
    pub fn from_samplers(samplers: Vec<Sampler>, variance_floor: f64) -> Result<Self> {
        for s in &samplers {
            s.validate()?;
        }
        let means = samplers.iter().map(Sampler::mean).collect();
        let variances = samplers.iter().map(Sampler::variance).collect();
        Self::continuous(means, variances, Some(samplers), variance_floor)
    }

    pub fn kind(&self) -> TreatmentKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Treatment probabilities; only meaningful for binary designs.
    pub fn probabilities(&self) -> Option<&[f64]> {
        (self.kind == TreatmentKind::Binary).then_some(self.means.as_slice())
    }

    pub fn samplers(&self) -> Option<&[Sampler]> {
        self.samplers.as_deref()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Constant probability, if every `p_t` is identical.
    pub fn constant_probability(&self) -> Option<f64> {
        let p = self.probabilities()?;
        p.iter().all(|&x| x == p[0]).then_some(p[0])
    }

    /// Design restricted to the first `len` time points.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::InvalidArgument(format!("cannot truncate design of length {} to {len}", self.len())));
        }
        Ok(Self {
            kind: self.kind,
            means: self.means[..len].to_vec(),
            variances: self.variances[..len].to_vec(),
            samplers: self.samplers.as_ref().map(|s| s[..len].to_vec()),
            floor: self.floor,
        })
    }
}

/// One realized assignment sequence `z_1..z_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentPath {
    values: Vec<f64>,
}

impl TreatmentPath {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Path from 0/1 indicators.
    pub fn from_bits(bits: &[u8]) -> Self {
        Self { values: bits.iter().map(|&b| f64::from(b)).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_against(&self, design: &AssignmentDesign) -> Result<()> {
        if self.len() != design.len() {
            return Err(Error::LengthMismatch { what: "treatment path", expected: design.len(), got: self.len() });
        }
        if design.kind() == TreatmentKind::Binary {
            if let Some((i, &v)) = self.values.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
                return Err(Error::NonBinaryTreatment { t: i + 1, value: v });
            }
        } else if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("treatment at t={} is not finite", i + 1)));
        }
        Ok(())
    }
}

/// `(z_t - m_t) / v_t` for every `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPath {
    values: Vec<f64>,
}

impl NormalizedPath {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Inverse map `z = z̃ v + m`.
    pub fn denormalize(&self, design: &AssignmentDesign) -> TreatmentPath {
        TreatmentPath::new(
            self.values
                .iter()
                .zip(design.means().iter().zip(design.variances()))
                .map(|(zt, (m, v))| zt * v + m)
                .collect(),
        )
    }
}

pub fn normalize(path: &TreatmentPath, design: &AssignmentDesign) -> Result<NormalizedPath> {
    path.check_against(design)?;
    if let Some(i) = design.variances().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::VarianceBelowFloor { t: i + 1, value: design.variances()[i], floor: design.floor() });
    }
    let values = path
        .values()
        .iter()
        .zip(design.means().iter().zip(design.variances()))
        .map(|(z, (m, v))| (z - m) / v)
        .collect();
    Ok(NormalizedPath { values })
}

fn check_lags(lags: usize, len: usize) -> Result<()> {
    if lags >= len {
        Err(Error::InvalidLagCount { lags, len })
    } else {
        Ok(())
    }
}

/// Harmonic mean of `1/x` over the outcome window, i.e. `[(T-K)^-1 Σ x_t^-1]^-1`
/// where `inv` yields `x_t^-1` for storage row `t`.
fn harmonic<F: Fn(usize) -> f64>(len: usize, lags: usize, inv: F) -> f64 {
    let n = (len - lags) as f64;
    // Neumaier summation keeps constant-variance weights within a few ulps of v
    let (mut total, mut carry) = (0.0f64, 0.0f64);
    for x in (lags..len).map(inv) {
        let s = total + x;
        carry += if total.abs() >= x.abs() { (total - s) + x } else { (x - s) + total };
        total = s;
    }
    n / (total + carry)
}

/// Lag weights `w_k = [(T-K)^-1 Σ_{t=K+1}^T v_{t-k}^-1]^-1` for `k = 0..=K`.
pub fn lag_weights(design: &AssignmentDesign, lags: usize) -> Result<Vec<f64>> {
    check_lags(lags, design.len())?;
    let v = design.variances();
    Ok((0..=lags).map(|k| harmonic(design.len(), lags, |t| 1.0 / v[t - k])).collect())
}

/// Weights `w_{k-1,k}` for `k = 1..=K` on consecutive-lag interaction columns.
pub fn interaction_weights(design: &AssignmentDesign, lags: usize) -> Result<Vec<f64>> {
    if design.kind() != TreatmentKind::Binary {
        return Err(Error::InvalidSpec("interaction weights need a binary design".into()));
    }
    if lags == 0 {
        return Err(Error::InvalidSpec("interaction terms need K >= 1".into()));
    }
    check_lags(lags, design.len())?;
    let v = design.variances();
    Ok((1..=lags)
        .map(|k| harmonic(design.len(), lags, |t| 1.0 / (v[t - k] * v[t - k + 1])))
        .collect())
}

/// Weights `w_{h,k}` for regressors scaled row-wise by `h_t`, `t = K+1..=T`.
///
/// `h` holds one value per outcome time in the estimation window. Row `t` of
/// the lagged design is multiplied by `h_t`, so column `k` has second moment
/// `h_t^2 / v_{t-k}` and the estimand becomes `(T-K)^-1 Σ h_t τ_{t,k}`.
pub fn generalized_weights(design: &AssignmentDesign, h: &[f64], lags: usize) -> Result<Vec<f64>> {
    check_lags(lags, design.len())?;
    let rows = design.len() - lags;
    if h.len() != rows {
        return Err(Error::LengthMismatch { what: "h sequence", expected: rows, got: h.len() });
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("h contains non-finite values".into()));
    }
    if h.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("h is identically zero".into()));
    }
    let v = design.variances();
    Ok((0..=lags)
        .map(|k| harmonic(design.len(), lags, |t| h[t - lags].powi(2) / v[t - k]))
        .collect())
}

/// Exposure mappings over consecutive lag blocks.
///
/// Block `s` covers lags `k_{s-1}+1 ..= k_s` (block 0 covers `0 ..= k_0`).
/// A truth table entry is addressed by `Σ_j z_{t - first_lag - j} 2^j`, so bit 0
/// is the most recent treatment in the block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureSpec {
    boundaries: Vec<usize>,
    tables: Vec<Vec<u8>>,
}

impl ExposureSpec {
    pub fn new(boundaries: Vec<usize>, tables: Vec<Vec<u8>>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InvalidSpec("exposure spec needs at least one block".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec(format!("exposure boundaries {boundaries:?} are not increasing")));
        }
        if tables.len() != boundaries.len() {
            return Err(Error::LengthMismatch {
                what: "exposure truth tables",
                expected: boundaries.len(),
                got: tables.len(),
            });
        }
        let spec = Self { boundaries, tables };
        for s in 0..spec.blocks() {
            let width = spec.width(s);
            if width > EXPOSURE_WIDTH_CAP {
                return Err(Error::EnumerationCap { what: "exposure block", bits: width, cap: EXPOSURE_WIDTH_CAP });
            }
            let table = &spec.tables[s];
            if table.len() != 1 << width {
                return Err(Error::LengthMismatch { what: "exposure truth table", expected: 1 << width, got: table.len() });
            }
            if table.iter().any(|&x| x > 1) {
                return Err(Error::InvalidSpec(format!("truth table {s} has entries outside {{0,1}}")));
            }
            if table.iter().all(|&x| x == table[0]) {
                return Err(Error::InvalidSpec(format!("exposure mapping {s} is constant")));
            }
        }
        Ok(spec)
    }

    /// `g_s(z) = z` on unit-width blocks `0..=lags`.
    pub fn identity(lags: usize) -> Self {
        Self { boundaries: (0..=lags).collect(), tables: vec![vec![0, 1]; lags + 1] }
    }

    pub fn blocks(&self) -> usize {
        self.boundaries.len()
    }

    /// `K = k_S`.
    pub fn max_lag(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }

    pub fn first_lag(&self, s: usize) -> usize {
        if s == 0 {
            0
        } else {
            self.boundaries[s - 1] + 1
        }
    }

    pub fn width(&self, s: usize) -> usize {
        self.boundaries[s] + 1 - self.first_lag(s)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn table(&self, s: usize) -> &[u8] {
        &self.tables[s]
    }
}

/// Normalized exposure regressors and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureColumns {
    /// `columns[s][t - K - 1]` is `g̃_{t,s}` for `t = K+1..=T`.
    pub columns: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `E[g_{t,s}]`, same layout as `columns`.
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub lags: usize,
}

pub fn exposure_transform(
    path: &TreatmentPath,
    design: &AssignmentDesign,
    spec: &ExposureSpec,
) -> Result<ExposureColumns> {
    if design.kind() != TreatmentKind::Binary {
        return Err(Error::InvalidSpec("exposure mappings need a binary design".into()));
    }
    path.check_against(design)?;
    let lags = spec.max_lag();
    check_lags(lags, design.len())?;
    let len = design.len();
    let p = design.means();
    let z = path.values();
    let blocks = spec.blocks();
    let mut columns = vec![Vec::with_capacity(len - lags); blocks];
    let mut means = vec![Vec::with_capacity(len - lags); blocks];
    let mut variances = vec![Vec::with_capacity(len - lags); blocks];
    for s in 0..blocks {
        let first = spec.first_lag(s);
        let width = spec.width(s);
        let table = spec.table(s);
        for t in lags..len {
            // enumerate every block assignment with its Bernoulli probability
            let mut mean = 0.0;
            for (idx, &g) in table.iter().enumerate() {
                if g == 0 {
                    continue;
                }
                let mut prob = 1.0;
                for j in 0..width {
                    let pt = p[t - first - j];
                    prob *= if idx >> j & 1 == 1 { pt } else { 1.0 - pt };
                }
                mean += prob;
            }
            let var = mean * (1.0 - mean);
            if var < EXPOSURE_VARIANCE_FLOOR {
                return Err(Error::VarianceBelowFloor { t: t + 1, value: var, floor: EXPOSURE_VARIANCE_FLOOR });
            }
            let idx = (0..width).fold(0usize, |acc, j| acc | ((z[t - first - j] as usize) << j));
            let g = f64::from(table[idx]);
            columns[s].push((g - mean) / var);
            means[s].push(mean);
            variances[s].push(var);
        }
    }
    let n = (len - lags) as f64;
    let weights = variances.iter().map(|vs| n / vs.iter().map(|v| 1.0 / v).sum::<f64>()).collect();
    Ok(ExposureColumns { columns, weights, means, variances, lags })
}

/// Draw an assignment path from `stream(seed)`; see [`crate::rng`].
pub fn draw_assignment(design: &AssignmentDesign, seed: u64) -> Result<TreatmentPath> {
    draw_assignment_from(design, &mut rng::stream(seed))
}

pub fn draw_assignment_from(design: &AssignmentDesign, rng: &mut StreamRng) -> Result<TreatmentPath> {
    let values = match design.kind() {
        TreatmentKind::Binary => design
            .means()
            .iter()
            .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect(),
        TreatmentKind::Continuous => {
            let samplers = design
                .samplers()
                .ok_or_else(|| Error::InvalidDesign("continuous design has no samplers to draw from".into()))?;
            samplers.iter().map(|s| s.sample(rng)).collect()
        }
    };
    Ok(TreatmentPath::new(values))
}
