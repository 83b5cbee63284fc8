//! Fixed potential-outcome models and their true lagged effects.
//!
//! Storage is 0-based: `s = t - 1`. All models are additive in the treatment
//! (up to the optional consecutive-lag products of [`LinearModel`]), so a
//! continuous `z` enters through the same formulas and `μ(z)`, `ε(z)` are
//! read as linear interpolations between their values at 0 and 1.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{AssignmentDesign, TreatmentKind, TreatmentPath};
use crate::error::{Error, Result};
use crate::rng;

/// Largest `t` accepted by [`brute_force_tau`] (enumerates `2^{t-1}` paths).
pub const BRUTE_FORCE_CAP: usize = 20;

/// `Ψ_0 = 1`, `Ψ_j = Σ_{k=1}^{min(p,j)} φ_k Ψ_{j-k}`, for `j = 0..=horizon`.
pub fn impulse_responses(phi: &[f64], horizon: usize) -> Vec<f64> {
    let mut psi = Vec::with_capacity(horizon + 1);
    psi.push(1.0);
    for j in 1..=horizon {
        let v = (1..=phi.len().min(j)).map(|k| phi[k - 1] * psi[j - k]).sum();
        psi.push(v);
    }
    psi
}

/// `n` iid `N(0, sd²)` draws from `stream(seed)`.
pub fn normal_errors(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed);
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut r);
            sd * x
        })
        .collect()
}

/// `Y_s = Σ_k β_{s,k} z_{s-k} + Σ_{j≥1} γ_j z_{s-j} z_{s-j+1} + ε_s`.
///
/// `β` is banded: lags beyond `max_lag` are zero. `γ_j` is the homogeneous
/// coefficient on the product of lags `j-1` and `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    max_lag: usize,
    /// Row-major `T x (max_lag+1)`.
    beta: Vec<f64>,
    interactions: Vec<f64>,
    eps: Vec<f64>,
}

impl LinearModel {
    /// `β_{s,k} = coef(s, k)` for `k <= max_lag`.
    pub fn banded<F: Fn(usize, usize) -> f64>(len: usize, max_lag: usize, coef: F, eps: Vec<f64>) -> Result<Self> {
        if eps.len() != len {
            return Err(Error::LengthMismatch { what: "error series", expected: len, got: eps.len() });
        }
        let width = max_lag + 1;
        let beta: Vec<f64> = (0..len * width).map(|i| coef(i / width, i % width)).collect();
        if beta.iter().chain(&eps).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("linear model coefficients must be finite".into()));
        }
        Ok(Self { max_lag, beta, interactions: Vec::new(), eps })
    }

    /// Time-invariant `β_k`.
    pub fn homogeneous(beta: &[f64], eps: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("need at least one coefficient".into()));
        }
        Self::banded(eps.len(), beta.len() - 1, |_, k| beta[k], eps)
    }

    /// Adds `γ_j z_{s-j} z_{s-j+1}` terms, `interactions[j-1] = γ_j`.
    pub fn with_interactions(mut self, interactions: Vec<f64>) -> Result<Self> {
        if interactions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("interaction coefficients must be finite".into()));
        }
        self.interactions = interactions;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn beta(&self, s: usize, k: usize) -> f64 {
        if k > self.max_lag || k > s {
            0.0
        } else {
            self.beta[s * (self.max_lag + 1) + k]
        }
    }

    pub fn interaction(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.interactions.get(j - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn interactions(&self) -> &[f64] {
        &self.interactions
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    fn outcome(&self, s: usize, z: &[f64]) -> f64 {
        let mut y = self.eps[s];
        for k in 0..=self.max_lag.min(s) {
            y += self.beta(s, k) * z[s - k];
        }
        for j in 1..=self.interactions.len().min(s) {
            y += self.interactions[j - 1] * z[s - j] * z[s - j + 1];
        }
        y
    }

    fn effect(&self, means: &[f64], s: usize, k: usize) -> f64 {
        if k > s {
            return 0.0;
        }
        let mut e = self.beta(s, k);
        if k >= 1 {
            e += self.interaction(k) * means[s - k + 1];
        }
        if s > k {
            e += self.interaction(k + 1) * means[s - k - 1];
        }
        e
    }
}

/// `Y_s = μ_s(z_s) + Σ_k φ_k Y_{s-k} + ε_s` with zero pre-sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    phi: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    eps: Vec<f64>,
}

impl ArModel {
    pub fn new(phi: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        let n = eps.len();
        for (what, v) in [("mu(0) series", &mu0), ("mu(1) series", &mu1)] {
            if v.len() != n {
                return Err(Error::LengthMismatch { what, expected: n, got: v.len() });
            }
        }
        if phi.iter().chain(&mu0).chain(&mu1).chain(&eps).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("autoregressive model parameters must be finite".into()));
        }
        Ok(Self { phi, mu0, mu1, eps })
    }

    /// Constant mean shift `μ(1), μ(0)` over time.
    pub fn constant(phi: Vec<f64>, mu1: f64, mu0: f64, eps: Vec<f64>) -> Result<Self> {
        let n = eps.len();
        Self::new(phi, vec![mu0; n], vec![mu1; n], eps)
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    fn mu(&self, s: usize, z: f64) -> f64 {
        self.mu0[s] + z * (self.mu1[s] - self.mu0[s])
    }

    fn run(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for s in 0..z.len() {
            let mut y = self.mu(s, z[s]) + self.eps[s];
            for (k, phi) in self.phi.iter().enumerate() {
                if s > k {
                    y += phi * out[s - k - 1];
                }
            }
            out.push(y);
        }
    }
}

/// `Y_s = μ_s(z_s) + Σ_{k=1}^q θ_k ε_{s-k}(z_{s-k}) + ε_s(z_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaModel {
    theta: Vec<f64>,
    /// `[μ_s(0), μ_s(1)]`.
    mu: Vec<[f64; 2]>,
    /// `[ε_s(0), ε_s(1)]`.
    eps: Vec<[f64; 2]>,
}

impl MaModel {
    pub fn new(theta: Vec<f64>, mu: Vec<[f64; 2]>, eps: Vec<[f64; 2]>) -> Result<Self> {
        if mu.len() != eps.len() {
            return Err(Error::LengthMismatch { what: "mean functions", expected: eps.len(), got: mu.len() });
        }
        if theta.len() >= eps.len().max(1) {
            return Err(Error::InvalidArgument(format!("MA order {} must be below T={}", theta.len(), eps.len())));
        }
        let flat = mu.iter().chain(&eps).flat_map(|p| p.iter());
        if theta.iter().chain(flat).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("moving-average model parameters must be finite".into()));
        }
        Ok(Self { theta, mu, eps })
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn lerp(pair: [f64; 2], z: f64) -> f64 {
        pair[0] + z * (pair[1] - pair[0])
    }

    fn outcome(&self, s: usize, z: &[f64]) -> f64 {
        let mut y = Self::lerp(self.mu[s], z[s]) + Self::lerp(self.eps[s], z[s]);
        for (k, theta) in self.theta.iter().enumerate() {
            let lag = k + 1;
            if s >= lag {
                y += theta * Self::lerp(self.eps[s - lag], z[s - lag]);
            }
        }
        y
    }

    fn effect(&self, s: usize, k: usize) -> f64 {
        let d = |p: [f64; 2]| p[1] - p[0];
        if k > s {
            0.0
        } else if k == 0 {
            d(self.mu[s]) + d(self.eps[s])
        } else if k <= self.theta.len() {
            self.theta[k - 1] * d(self.eps[s - k])
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PotentialOutcomeModel {
    Linear(LinearModel),
    Ar(ArModel),
    Ma(MaModel),
}

/// True effects over the window `t = K+1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueEffects {
    /// `τ_0..τ_K`.
    pub tau: Vec<f64>,
    /// `per_time[t-K-1][k] = τ_{t,k}`.
    pub per_time: Vec<Vec<f64>>,
    /// `τ_{k-1,k}` for `k = 1..=K` (empty when `K = 0`).
    pub interactions: Vec<f64>,
}

impl TrueEffects {
    /// Main effects followed by interaction effects, matching the interaction regression layout.
    pub fn with_interactions(&self) -> Vec<f64> {
        self.tau.iter().chain(&self.interactions).copied().collect()
    }
}

impl PotentialOutcomeModel {
    pub fn len(&self) -> usize {
        match self {
            Self::Linear(m) => m.len(),
            Self::Ar(m) => m.len(),
            Self::Ma(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Y_{s+1}` given `z_1..z_{s+1}` (only the prefix `z[..=s]` is read).
    pub fn outcome_at(&self, s: usize, z: &[f64]) -> f64 {
        match self {
            Self::Linear(m) => m.outcome(s, z),
            Self::Ma(m) => m.outcome(s, z),
            Self::Ar(m) => {
                let mut out = Vec::with_capacity(s + 1);
                m.run(&z[..=s], &mut out);
                out[s]
            }
        }
    }

    pub fn simulate(&self, path: &TreatmentPath) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        self.simulate_into(path.values(), &mut out)?;
        Ok(out)
    }

    /// Allocation-reusing form of [`simulate`](Self::simulate).
    pub fn simulate_into(&self, z: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if z.len() != self.len() {
            return Err(Error::LengthMismatch { what: "treatment path", expected: self.len(), got: z.len() });
        }
        match self {
            Self::Ar(m) => m.run(z, out),
            Self::Linear(m) => {
                out.clear();
                out.extend((0..z.len()).map(|s| m.outcome(s, z)));
            }
            Self::Ma(m) => {
                out.clear();
                out.extend((0..z.len()).map(|s| m.outcome(s, z)));
            }
        }
        Ok(())
    }

    /// `τ_{s+1,k}` in closed form.
    pub fn effect_at(&self, design: &AssignmentDesign, s: usize, k: usize, psi: &[f64]) -> f64 {
        match self {
            Self::Linear(m) => m.effect(design.means(), s, k),
            Self::Ma(m) => m.effect(s, k),
            Self::Ar(m) => {
                if k > s {
                    0.0
                } else {
                    psi[k] * (m.mu1[s - k] - m.mu0[s - k])
                }
            }
        }
    }

    pub fn true_tau(&self, design: &AssignmentDesign, lags: usize) -> Result<TrueEffects> {
        let len = self.len();
        if design.len() != len {
            return Err(Error::LengthMismatch { what: "design", expected: len, got: design.len() });
        }
        if lags >= len {
            return Err(Error::InvalidLagCount { lags, len });
        }
        let psi = match self {
            Self::Ar(m) => impulse_responses(&m.phi, lags),
            _ => Vec::new(),
        };
        let per_time: Vec<Vec<f64>> = (lags..len)
            .map(|s| (0..=lags).map(|k| self.effect_at(design, s, k, &psi)).collect())
            .collect();
        let n = (len - lags) as f64;
        let tau = (0..=lags).map(|k| per_time.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let interactions = (1..=lags)
            .map(|k| match self {
                Self::Linear(m) => m.interaction(k),
                _ => 0.0,
            })
            .collect();
        Ok(TrueEffects { tau, per_time, interactions })
    }
}

/// `τ_{t,k}` by enumerating every assignment of the other `t-1` coordinates.
///
/// `t` is 1-based and at most [`BRUTE_FORCE_CAP`].
pub fn brute_force_tau(model: &PotentialOutcomeModel, design: &AssignmentDesign, t: usize, k: usize) -> Result<f64> {
    if design.kind() != TreatmentKind::Binary {
        return Err(Error::Unsupported("brute-force effects need a binary design".into()));
    }
    if t > BRUTE_FORCE_CAP {
        return Err(Error::EnumerationCap { what: "brute-force effect", bits: t - 1, cap: BRUTE_FORCE_CAP - 1 });
    }
    if t == 0 || t > model.len() || t > design.len() {
        return Err(Error::InvalidArgument(format!("time {t} outside 1..={}", model.len().min(design.len()))));
    }
    if k >= t {
        return Ok(0.0);
    }
    let s = t - 1;
    let target = s - k;
    let p = design.means();
    let others: Vec<usize> = (0..t).filter(|&i| i != target).collect();
    let mut z = vec![0.0; t];
    let mut total = 0.0;
    for mask in 0u64..(1u64 << others.len()) {
        let mut prob = 1.0;
        for (b, &i) in others.iter().enumerate() {
            let on = mask >> b & 1 == 1;
            z[i] = if on { 1.0 } else { 0.0 };
            prob *= if on { p[i] } else { 1.0 - p[i] };
        }
        z[target] = 1.0;
        let y1 = model.outcome_at(s, &z);
        z[target] = 0.0;
        let y0 = model.outcome_at(s, &z);
        total += prob * (y1 - y0);
    }
    Ok(total)
}
