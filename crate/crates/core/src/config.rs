//! JSON experiment configuration.
//!
//! A config is one JSON document. Command-line flags override the matching
//! fields after the file is read; anything not given falls back to the
//! defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{AssignmentDesign, ExposureSpec, Sampler, DEFAULT_OVERLAP_FLOOR, DEFAULT_VARIANCE_FLOOR};
use crate::dgp::{normal_errors, ArModel, LinearModel, MaModel, PotentialOutcomeModel};
use crate::error::{Error, Result};
use crate::hac::{Bandwidth, HacConfig, Kernel};
use crate::regression::{RegressionSpec, Variant};

fn one() -> f64 {
    1.0
}

fn default_floor() -> f64 {
    DEFAULT_OVERLAP_FLOOR
}

fn default_variance_floor() -> f64 {
    DEFAULT_VARIANCE_FLOOR
}

/// Sinusoidal drift added to one lag's coefficient: `amplitude * sin(2π t / period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seasonal {
    pub lag: usize,
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Ar {
        phi: Vec<f64>,
        mu1: f64,
        mu0: f64,
        #[serde(default = "one")]
        noise_sd: f64,
        #[serde(default)]
        noise_seed: u64,
    },
    Linear {
        beta: Vec<f64>,
        #[serde(default)]
        interactions: Vec<f64>,
        #[serde(default)]
        seasonal: Option<Seasonal>,
        #[serde(default = "one")]
        noise_sd: f64,
        #[serde(default)]
        noise_seed: u64,
    },
    Ma {
        theta: Vec<f64>,
        mu1: f64,
        mu0: f64,
        /// `ε_t(1) - ε_t(0)`.
        #[serde(default)]
        noise_shift: f64,
        #[serde(default = "one")]
        noise_sd: f64,
        #[serde(default)]
        noise_seed: u64,
    },
}

impl ModelSpec {
    /// Fixed model of horizon `len`; the error series is the first `len` draws of its seed.
    pub fn build(&self, len: usize) -> Result<PotentialOutcomeModel> {
        let check_sd = |sd: f64| {
            if sd.is_finite() && sd >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("noise_sd {sd} must be finite and nonnegative")))
            }
        };
        match self {
            ModelSpec::Ar { phi, mu1, mu0, noise_sd, noise_seed } => {
                check_sd(*noise_sd)?;
                let eps = normal_errors(len, *noise_sd, *noise_seed);
                Ok(PotentialOutcomeModel::Ar(ArModel::constant(phi.clone(), *mu1, *mu0, eps)?))
            }
            ModelSpec::Linear { beta, interactions, seasonal, noise_sd, noise_seed } => {
                check_sd(*noise_sd)?;
                if beta.is_empty() {
                    return Err(Error::Config("linear model needs at least one beta".into()));
                }
                let eps = normal_errors(len, *noise_sd, *noise_seed);
                let coef = |s: usize, k: usize| {
                    let base = beta[k];
                    match seasonal {
                        Some(sea) if sea.lag == k => {
                            let t = (s + 1) as f64;
                            base + sea.amplitude * (2.0 * std::f64::consts::PI * t / sea.period).sin()
                        }
                        _ => base,
                    }
                };
                if let Some(sea) = seasonal {
                    if sea.lag >= beta.len() || !(sea.period > 0.0) {
                        return Err(Error::Config("seasonal term needs lag < len(beta) and period > 0".into()));
                    }
                }
                let m = LinearModel::banded(len, beta.len() - 1, coef, eps)?.with_interactions(interactions.clone())?;
                Ok(PotentialOutcomeModel::Linear(m))
            }
            ModelSpec::Ma { theta, mu1, mu0, noise_shift, noise_sd, noise_seed } => {
                check_sd(*noise_sd)?;
                let eps = normal_errors(len, *noise_sd, *noise_seed);
                let mu = vec![[*mu0, *mu1]; len];
                let eps = eps.into_iter().map(|e| [e, e + noise_shift]).collect();
                Ok(PotentialOutcomeModel::Ma(MaModel::new(theta.clone(), mu, eps)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Probabilities {
    Constant(f64),
    PerTime(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplerSpec {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, variance: f64 },
    TwoPoint { values: [f64; 2], prob: f64 },
}

impl From<&SamplerSpec> for Sampler {
    fn from(s: &SamplerSpec) -> Self {
        match *s {
            SamplerSpec::Uniform { low, high } => Sampler::Uniform { low, high },
            SamplerSpec::Normal { mean, variance } => Sampler::Normal { mean, variance },
            SamplerSpec::TwoPoint { values, prob } => Sampler::TwoPoint { values, prob },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Samplers {
    Constant(SamplerSpec),
    PerTime(Vec<SamplerSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DesignSpec {
    Binary {
        p: Probabilities,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    Continuous {
        sampler: Samplers,
        #[serde(default = "default_variance_floor")]
        variance_floor: f64,
    },
}

impl DesignSpec {
    pub fn build(&self, len: usize) -> Result<AssignmentDesign> {
        let take = |n: usize| {
            if n < len {
                Err(Error::Config(format!("design lists {n} time points but T={len}")))
            } else {
                Ok(())
            }
        };
        match self {
            DesignSpec::Binary { p, floor } => {
                let probs = match p {
                    Probabilities::Constant(p) => vec![*p; len],
                    Probabilities::PerTime(v) => {
                        take(v.len())?;
                        v[..len].to_vec()
                    }
                };
                AssignmentDesign::binary(probs, *floor)
            }
            DesignSpec::Continuous { sampler, variance_floor } => {
                let samplers: Vec<Sampler> = match sampler {
                    Samplers::Constant(s) => vec![s.into(); len],
                    Samplers::PerTime(v) => {
                        take(v.len())?;
                        v[..len].iter().map(Sampler::from).collect()
                    }
                };
                AssignmentDesign::from_samplers(samplers, *variance_floor)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Full,
    Marginal,
    Interaction,
    Exposure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureConfig {
    pub boundaries: Vec<usize>,
    pub tables: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub lags: usize,
    #[serde(default = "RegressionConfig::default_variant")]
    pub variant: VariantName,
    /// Lag used by the marginal variant.
    #[serde(default)]
    pub lag: Option<usize>,
    #[serde(default)]
    pub exposure: Option<ExposureConfig>,
}

impl RegressionConfig {
    fn default_variant() -> VariantName {
        VariantName::Full
    }

    pub fn build(&self) -> Result<RegressionSpec> {
        let spec = match self.variant {
            VariantName::Full => RegressionSpec::full(self.lags),
            VariantName::Interaction => RegressionSpec::interaction(self.lags),
            VariantName::Marginal => {
                let k = self.lag.ok_or_else(|| Error::Config("marginal variant needs 'lag'".into()))?;
                RegressionSpec::marginal(self.lags, k)
            }
            VariantName::Exposure => {
                let e = self.exposure.as_ref().ok_or_else(|| Error::Config("exposure variant needs 'exposure'".into()))?;
                let spec = ExposureSpec::new(e.boundaries.clone(), e.tables.clone())?;
                if spec.max_lag() != self.lags {
                    return Err(Error::Config(format!("exposure blocks end at {} but lags={}", spec.max_lag(), self.lags)));
                }
                RegressionSpec { lags: self.lags, variant: Variant::Exposure(spec) }
            }
        };
        Ok(spec)
    }
}

/// Bandwidth as written in JSON: an integer or `"auto"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Fixed(usize),
    Rule(String),
}

impl BandwidthSpec {
    pub fn resolve(&self) -> Result<Bandwidth> {
        match self {
            BandwidthSpec::Fixed(l) => Ok(Bandwidth::Fixed(*l)),
            BandwidthSpec::Rule(s) => s.parse().map_err(|_| Error::Config(format!("bandwidth rule '{s}' unknown"))),
        }
    }
}

impl From<Bandwidth> for BandwidthSpec {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Fixed(l) => BandwidthSpec::Fixed(l),
            Bandwidth::FourthRoot => BandwidthSpec::Rule("auto".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HacSpec {
    #[serde(default = "HacSpec::default_bandwidth")]
    pub bandwidth: BandwidthSpec,
    #[serde(default = "HacSpec::default_kernel")]
    pub kernel: Kernel,
}

impl HacSpec {
    fn default_bandwidth() -> BandwidthSpec {
        BandwidthSpec::Rule("auto".into())
    }

    fn default_kernel() -> Kernel {
        Kernel::Bartlett
    }

    pub fn build(&self) -> Result<HacConfig> {
        Ok(HacConfig { bandwidth: self.bandwidth.resolve()?, kernel: self.kernel })
    }
}

impl Default for HacSpec {
    fn default() -> Self {
        Self { bandwidth: Self::default_bandwidth(), kernel: Self::default_kernel() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    Replications,
    Coverage,
    Consistency,
    Frobenius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "ExperimentConfig::default_name")]
    pub name: String,
    pub model: ModelSpec,
    pub design: DesignSpec,
    pub regression: RegressionConfig,
    #[serde(default)]
    pub hac: HacSpec,
    pub lengths: Vec<usize>,
    #[serde(default = "ExperimentConfig::default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ExperimentConfig::default_level")]
    pub level: f64,
    #[serde(default = "ExperimentConfig::default_oracle")]
    pub oracle_replications: usize,
    /// Bandwidths compared in the Frobenius curve.
    #[serde(default = "ExperimentConfig::default_bandwidths")]
    pub frobenius_bandwidths: Vec<BandwidthSpec>,
    #[serde(default = "ExperimentConfig::default_outputs")]
    pub outputs: Vec<Output>,
}

impl ExperimentConfig {
    fn default_name() -> String {
        "experiment".into()
    }

    fn default_replications() -> usize {
        5000
    }

    fn default_level() -> f64 {
        0.95
    }

    fn default_oracle() -> usize {
        20000
    }

    fn default_bandwidths() -> Vec<BandwidthSpec> {
        vec![
            BandwidthSpec::Fixed(0),
            BandwidthSpec::Fixed(1),
            BandwidthSpec::Fixed(5),
            BandwidthSpec::Rule("auto".into()),
        ]
    }

    fn default_outputs() -> Vec<Output> {
        vec![Output::Coverage, Output::Consistency]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.lengths.is_empty() {
            return Err(Error::Config("lengths must list at least one T".into()));
        }
        if let Some(&t) = self.lengths.iter().find(|&&t| t <= self.regression.lags) {
            return Err(Error::Config(format!("T={t} must exceed lags={}", self.regression.lags)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0, 1)", self.level)));
        }
        self.regression.build()?;
        self.hac.build()?;
        for b in &self.frobenius_bandwidths {
            b.resolve()?;
        }
        Ok(())
    }

    pub fn wants(&self, output: Output) -> bool {
        self.outputs.contains(&output)
    }
}

/// Bundled configuration for the AR(1) coverage experiment.
pub const AR1_COVERAGE: &str = include_str!("../configs/ar1_coverage.json");
