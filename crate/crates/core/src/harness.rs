//! Design-based Monte Carlo: fix the potential outcomes, redraw assignments.
//!
//! Replication `i` uses seed `derive_seed(root, i)`, results are collected in
//! index order and reduced sequentially, so no emitted number depends on the
//! rayon thread count.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Output};
use crate::design::{draw_assignment, AssignmentDesign};
use crate::dgp::PotentialOutcomeModel;
use crate::error::{Error, Result};
use crate::hac::{hac_covariance_with, Bandwidth, Kernel};
use crate::inference::normal_quantile;
use crate::regression::{estimate, regressors, RegressionSpec, Variant};
use crate::rng::derive_seed;

/// Decimal with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationSet {
    pub len: usize,
    pub rows: usize,
    pub labels: Vec<String>,
    pub seeds: Vec<u64>,
    pub tau_hat: Vec<Vec<f64>>,
    /// Resolved bandwidths, one per entry of `vhat[i]`.
    pub bandwidths: Vec<usize>,
    /// `vhat[i][b]` is replication `i` under bandwidth `b`.
    pub vhat: Vec<Vec<DMatrix<f64>>>,
}

impl ReplicationSet {
    pub fn count(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn mean_tau(&self) -> Vec<f64> {
        let p = self.labels.len();
        let r = self.count() as f64;
        (0..p).map(|j| self.tau_hat.iter().map(|t| t[j]).sum::<f64>() / r).collect()
    }

    /// Sample standard deviation per coefficient (`R - 1` denominator).
    pub fn sd_tau(&self) -> Vec<f64> {
        let mean = self.mean_tau();
        let r = self.count() as f64;
        (0..mean.len())
            .map(|j| {
                let ss: f64 = self.tau_hat.iter().map(|t| (t[j] - mean[j]).powi(2)).sum();
                (ss / (r - 1.0).max(1.0)).sqrt()
            })
            .collect()
    }

    /// Sample covariance of `√(T-K)(τ̂ - τ)`; centering at `τ` is irrelevant.
    pub fn scaled_covariance(&self) -> DMatrix<f64> {
        let p = self.labels.len();
        let mean = DVector::from_vec(self.mean_tau());
        let mut cov = DMatrix::zeros(p, p);
        for t in &self.tau_hat {
            let d = DVector::from_column_slice(t) - &mean;
            cov += &d * d.transpose();
        }
        cov * (self.rows as f64 / (self.count() as f64 - 1.0).max(1.0))
    }

    pub fn mean_vhat(&self, b: usize) -> DMatrix<f64> {
        let p = self.labels.len();
        let mut acc = DMatrix::zeros(p, p);
        for v in &self.vhat {
            acc += &v[b];
        }
        acc / self.count() as f64
    }

    pub fn bandwidth_index(&self, bandwidth: usize) -> Option<usize> {
        self.bandwidths.iter().position(|&b| b == bandwidth)
    }
}

/// `R` replications of the fixed model under fresh assignments.
///
/// Each replication attaches one HAC covariance per entry of `bandwidths`.
pub fn replicate(
    model: &PotentialOutcomeModel,
    design: &AssignmentDesign,
    spec: &RegressionSpec,
    bandwidths: &[Bandwidth],
    kernel: Kernel,
    replications: usize,
    seed: u64,
) -> Result<ReplicationSet> {
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be at least 1".into()));
    }
    let len = design.len();
    let resolved: Vec<usize> = bandwidths.iter().map(|b| b.resolve(len)).collect();
    let rows: Vec<(u64, Vec<f64>, Vec<DMatrix<f64>>)> = (0..replications)
        .into_par_iter()
        .map_init(Vec::new, |y, i| {
            let s = derive_seed(seed, i as u64);
            let z = draw_assignment(design, s)?;
            model.simulate_into(z.values(), y)?;
            let est = estimate(y, &z, design, spec)?;
            let v = resolved
                .iter()
                .map(|&l| hac_covariance_with(&est.design, &est.residuals, &est.weights, l, kernel).map(|h| h.matrix))
                .collect::<Result<Vec<_>>>()?;
            Ok((s, est.tau_hat, v))
        })
        .collect::<Result<_>>()?;
    let mut set = ReplicationSet {
        len,
        rows: len - spec.lags,
        labels: spec.labels(),
        seeds: Vec::with_capacity(replications),
        tau_hat: Vec::with_capacity(replications),
        bandwidths: resolved,
        vhat: Vec::with_capacity(replications),
    };
    for (s, t, v) in rows {
        set.seeds.push(s);
        set.tau_hat.push(t);
        set.vhat.push(v);
    }
    Ok(set)
}

/// Estimand vector matching the regression's coefficient layout.
pub fn target_tau(model: &PotentialOutcomeModel, design: &AssignmentDesign, spec: &RegressionSpec) -> Result<Vec<f64>> {
    let truth = model.true_tau(design, spec.lags)?;
    match &spec.variant {
        Variant::Full => Ok(truth.tau),
        Variant::Marginal(k) => Ok(vec![truth.tau[*k]]),
        Variant::Interaction => Ok(truth.with_interactions()),
        other => Err(Error::Unsupported(format!("no closed-form target for the {} variant", other.name()))),
    }
}

/// Monte Carlo covariance of the oracle scores `(T-K)^{-1/2} Σ_t x_t U_t`,
/// `U_t = Y_t - x_tᵀ W τ`, over `R` fresh assignments.
pub fn oracle_v(
    model: &PotentialOutcomeModel,
    design: &AssignmentDesign,
    spec: &RegressionSpec,
    tau: &[f64],
    replications: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if replications < 2 {
        return Err(Error::InvalidArgument("oracle covariance needs at least 2 replications".into()));
    }
    if matches!(spec.variant, Variant::Exposure(_) | Variant::Generalized(_)) {
        return Err(Error::Unsupported(format!("oracle covariance for the {} variant", spec.variant.name())));
    }
    let p = spec.columns();
    if tau.len() != p {
        return Err(Error::LengthMismatch { what: "true effects", expected: p, got: tau.len() });
    }
    let lags = spec.lags;
    let scores: Vec<DVector<f64>> = (0..replications)
        .into_par_iter()
        .map_init(Vec::new, |y, i| {
            let z = draw_assignment(design, derive_seed(seed, i as u64))?;
            model.simulate_into(z.values(), y)?;
            let (x, w) = regressors(&z, design, spec)?;
            let wt = DVector::from_iterator(p, w.iter().zip(tau).map(|(a, b)| a * b));
            let xm = x.matrix();
            let u = DVector::from_column_slice(&y[lags..]) - xm * wt;
            Ok(xm.tr_mul(&u) / (x.rows() as f64).sqrt())
        })
        .collect::<Result<_>>()?;
    let r = replications as f64;
    let mean = scores.iter().fold(DVector::zeros(p), |acc, s| acc + s) / r;
    let mut cov = DMatrix::zeros(p, p);
    for s in &scores {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov /= r - 1.0;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Fraction of replications whose interval under bandwidth `b` covers `tau`.
pub fn coverage(set: &ReplicationSet, tau: &[f64], b: usize, level: f64) -> Result<Vec<f64>> {
    let q = normal_quantile(level)?;
    let n = set.rows as f64;
    let p = tau.len();
    let mut hits = vec![0usize; p];
    for (t, v) in set.tau_hat.iter().zip(&set.vhat) {
        for j in 0..p {
            let se = (v[b][(j, j)].max(0.0) / n).sqrt();
            if (t[j] - tau[j]).abs() <= q * se {
                hits[j] += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / set.count() as f64).collect())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `‖τ̂ - τ‖₂` for every replication.
pub fn estimation_errors(set: &ReplicationSet, tau: &[f64]) -> Vec<f64> {
    set.tau_hat
        .iter()
        .map(|t| t.iter().zip(tau).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Mean of `‖V̂ - V‖_F / ‖V‖_F` under bandwidth `b`; `NaN` when `V = 0`.
pub fn frobenius_error(set: &ReplicationSet, oracle: &DMatrix<f64>, b: usize) -> f64 {
    let norm = oracle.norm();
    if norm == 0.0 {
        return f64::NAN;
    }
    set.vhat.iter().map(|v| (&v[b] - oracle).norm() / norm).sum::<f64>() / set.count() as f64
}

/// Closed-form asymptotic variances for a homogeneous linear model under constant `p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticVariances {
    pub full: f64,
    /// Indexed by lag `k = 0..=K`.
    pub marginal: Vec<f64>,
    pub with_interaction: f64,
    pub without_interaction: f64,
}

/// Evaluates the displayed sums for `Y_t = Σ β_k z_{t-k} + Σ β_{k-1,k} z_{t-k} z_{t-k+1} + ε_t`.
///
/// `beta[k] = β_k` (zero beyond the slice), `interactions[j-1] = β_{j-1,j}`.
pub fn analytic_variances(
    beta: &[f64],
    interactions: &[f64],
    eps: &[f64],
    lags: usize,
    p: f64,
) -> Result<AnalyticVariances> {
    let len = eps.len();
    if lags >= len {
        return Err(Error::InvalidLagCount { lags, len });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("probability {p} outside (0, 1)")));
    }
    let b = |l: usize| beta.get(l).copied().unwrap_or(0.0);
    let g = |j: usize| if j == 0 { 0.0 } else { interactions.get(j - 1).copied().unwrap_or(0.0) };
    let v = p * (1.0 - p);
    let n = (len - lags) as f64;
    let mut tail = 0.0;
    let mut marginal_tail = vec![0.0; lags + 1];
    let mut int_tail = 0.0;
    let mut gain_with = 0.0;
    let mut gain_without = 0.0;
    let mut level = 0.0;
    let mut level_int = 0.0;
    // storage index s = t - 1, lags ℓ run up to t - 1 = s
    for s in lags..len {
        for l in (lags + 1)..=s {
            tail += b(l).powi(2);
            int_tail += b(l).powi(2) + p * p * g(l).powi(2) + p * p * g(l + 1).powi(2);
            gain_with += v * g(l).powi(2);
        }
        for l in 1..=s {
            gain_without += v * g(l).powi(2);
        }
        for (k, m) in marginal_tail.iter_mut().enumerate() {
            *m += (0..=s).filter(|&l| l != k).map(|l| b(l).powi(2)).sum::<f64>();
        }
        let sb: f64 = (0..=s).map(b).sum();
        let sg: f64 = (1..=s).map(g).sum();
        level += (p * sb + eps[s]).powi(2);
        level_int += (p * sb + p * p * sg + eps[s]).powi(2);
    }
    let level = level / (v * n);
    let level_int = level_int / (v * n);
    Ok(AnalyticVariances {
        full: tail / n + level,
        marginal: marginal_tail.iter().map(|m| m / n + level).collect(),
        with_interaction: int_tail / n + gain_with / n + level_int,
        without_interaction: int_tail / n + gain_without / n + level_int,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LengthSummary {
    pub len: usize,
    pub bandwidth: usize,
    pub tau: Vec<f64>,
    pub mean_tau_hat: Vec<f64>,
    pub sd_tau_hat: Vec<f64>,
    pub coverage: Option<Vec<f64>>,
    pub median_error: Option<f64>,
    /// `(bandwidth, mean normalized Frobenius error)`.
    pub frobenius: Option<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub replications: usize,
    pub seed: u64,
    pub level: f64,
    pub labels: Vec<String>,
    pub oracle: &'static str,
    pub lengths: Vec<LengthSummary>,
}

/// Runs every requested output for every `T` and optionally writes files under `out/<name>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let spec = cfg.regression.build()?;
    let hac = cfg.hac.build()?;
    let dir = match out {
        Some(o) => {
            let d = o.join(&cfg.name);
            fs::create_dir_all(&d)?;
            Some(d)
        }
        None => None,
    };
    let mut rep_writer = match (&dir, cfg.wants(Output::Replications)) {
        (Some(d), true) => {
            let mut w = csv::Writer::from_path(d.join("replications.csv"))?;
            w.write_record(["T", "replication", "seed", "lag", "estimate", "vhat"])?;
            Some(w)
        }
        _ => None,
    };
    let frob: Vec<Bandwidth> = if cfg.wants(Output::Frobenius) {
        cfg.frobenius_bandwidths.iter().map(|b| b.resolve()).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut summaries = Vec::new();
    for (ti, &len) in cfg.lengths.iter().enumerate() {
        info!("{}: T={len}, R={}", cfg.name, cfg.replications);
        let model = cfg.model.build(len)?;
        let design = cfg.design.build(len)?;
        let tau = target_tau(&model, &design, &spec)?;
        let mut bws = vec![hac.bandwidth];
        bws.extend(frob.iter().copied());
        let seed = derive_seed(cfg.seed, ti as u64);
        let set = replicate(&model, &design, &spec, &bws, hac.kernel, cfg.replications, seed)?;
        let cov = if cfg.wants(Output::Coverage) { Some(coverage(&set, &tau, 0, cfg.level)?) } else { None };
        let median_error = cfg.wants(Output::Consistency).then(|| median(&estimation_errors(&set, &tau)));
        let frobenius = if frob.is_empty() {
            None
        } else {
            let oracle = oracle_v(&model, &design, &spec, &tau, cfg.oracle_replications, derive_seed(seed, u64::MAX - 1))?;
            Some((0..frob.len()).map(|i| (set.bandwidths[i + 1], frobenius_error(&set, &oracle, i + 1))).collect())
        };
        if let Some(w) = rep_writer.as_mut() {
            for (i, (t, v)) in set.tau_hat.iter().zip(&set.vhat).enumerate() {
                for (j, label) in set.labels.iter().enumerate() {
                    w.write_record([
                        len.to_string(),
                        i.to_string(),
                        set.seeds[i].to_string(),
                        label.clone(),
                        fmt_f64(t[j]),
                        fmt_f64(v[0][(j, j)]),
                    ])?;
                }
            }
        }
        summaries.push(LengthSummary {
            len,
            bandwidth: set.bandwidths[0],
            mean_tau_hat: set.mean_tau(),
            sd_tau_hat: set.sd_tau(),
            tau,
            coverage: cov,
            median_error,
            frobenius,
        });
    }
    if let Some(mut w) = rep_writer {
        w.flush()?;
    }
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        replications: cfg.replications,
        seed: cfg.seed,
        level: cfg.level,
        labels: spec.labels(),
        oracle: "score covariance",
        lengths: summaries,
    };
    if let Some(d) = dir {
        write_outputs(&d, cfg, &summary)?;
    }
    Ok(summary)
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, summary: &ExperimentSummary) -> Result<()> {
    if cfg.wants(Output::Coverage) {
        let mut w = csv::Writer::from_path(dir.join("table.csv"))?;
        let mut header = vec!["T".to_string(), "bandwidth".to_string()];
        header.extend(summary.labels.iter().cloned());
        w.write_record(&header)?;
        for s in &summary.lengths {
            let mut row = vec![s.len.to_string(), s.bandwidth.to_string()];
            row.extend(s.coverage.iter().flatten().map(|&c| fmt_f64(c)));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    if cfg.wants(Output::Consistency) || cfg.wants(Output::Frobenius) {
        let mut w = csv::Writer::from_path(dir.join("curve.csv"))?;
        w.write_record(["T", "curve", "bandwidth", "value"])?;
        for s in &summary.lengths {
            if let Some(m) = s.median_error {
                w.write_record([s.len.to_string(), "median_l2_error".into(), String::new(), fmt_f64(m)])?;
            }
            for (b, e) in s.frobenius.iter().flatten() {
                w.write_record([s.len.to_string(), "frobenius".into(), b.to_string(), fmt_f64(*e)])?;
            }
        }
        w.flush()?;
    }
    let mut f = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n")?;
    Ok(())
}
