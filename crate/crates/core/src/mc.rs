//! Monte-Carlo replication of the estimators on the simulation designs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::make_folds;
use crate::dgp::{gen_confounded, gen_mar, ConfoundedDgpConfig, MarDgpConfig, OracleTables};
use crate::error::{Error, Result};
use crate::estimators::{estimate_fr, estimate_irm, estimate_ssm, FrConfig, IrmSample, LearnerConfig, Method};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum DgpChoice {
    Mar(MarDgpConfig),
    Confounded(ConfoundedDgpConfig),
}

impl DgpChoice {
    /// True long-model ATE.
    pub fn theta_true(&self) -> Result<f64> {
        match self {
            DgpChoice::Mar(c) => Ok(c.theta0),
            DgpChoice::Confounded(c) => Ok(OracleTables::from_config(c)?.theta0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Template design; `n` and `seed` are overwritten per replication.
    pub dgp: DgpChoice,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub sample_sizes: Vec<usize>,
    pub base_seed: u64,
    pub folds: usize,
    /// Nuisance learners for IRM and SSM.
    pub learners: LearnerConfig,
    pub fr: FrConfig,
}

impl McConfig {
    /// Fifty replications at n ∈ {1000, 4000} on the MAR design with
    /// parametric nuisances for the baselines and default forests for FR.
    pub fn desk_scale() -> Self {
        McConfig {
            dgp: DgpChoice::Mar(MarDgpConfig::new(1000, 0)),
            methods: vec![Method::Irm, Method::Ssm, Method::Fr],
            reps: 50,
            sample_sizes: vec![1000, 4000],
            base_seed: 2024,
            folds: 3,
            learners: LearnerConfig::parametric(),
            fr: FrConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample sizes must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// One (replication, sample size, method) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub method: Method,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub theta: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub n: usize,
    pub mean_ate: f64,
    pub sd_ate: f64,
    pub mean_se: f64,
    /// Mean absolute error `mean |θ̂ − θ₀|`.
    pub mae: f64,
    pub coverage: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub theta_true: f64,
    pub cells: Vec<CellSummary>,
    pub reps: Vec<RepResult>,
}

impl McSummary {
    pub fn cell(&self, method: Method, n: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }
}

/// Seed of replication `rep` at sample size `n`.
pub fn rep_seed(base: u64, rep: usize, n: usize) -> u64 {
    rng::derive_seed(base, &[rep as u64, n as u64])
}

fn run_one(cfg: &McConfig, n: usize, rep: usize) -> Vec<RepResult> {
    let seed = rep_seed(cfg.base_seed, rep, n);
    let data = match &cfg.dgp {
        DgpChoice::Mar(c) => gen_mar(&MarDgpConfig { n, seed, ..c.clone() }),
        DgpChoice::Confounded(c) => gen_confounded(&ConfoundedDgpConfig { n, seed, ..c.clone() }).map(|s| s.data),
    }
    .map_err(|e| e.to_string());
    let folds = data.as_ref().map_err(|e| e.clone()).and_then(|d| make_folds(d, cfg.folds, seed).map_err(|e| e.to_string()));
    cfg.methods
        .iter()
        .map(|&method| {
            let outcome = match (&data, &folds) {
                (Ok(d), Ok(f)) => {
                    let learners = LearnerConfig {
                        forest: crate::forest::ForestConfig { seed, ..cfg.learners.forest.clone() },
                        ..cfg.learners.clone()
                    };
                    let fr = FrConfig { forest: crate::forest::ForestConfig { seed, ..cfg.fr.forest.clone() }, ..cfg.fr.clone() };
                    match method {
                        Method::Irm => estimate_irm(d, f, &learners, IrmSample::ZeroFilled),
                        Method::Ssm => estimate_ssm(d, f, &learners, true),
                        Method::Fr => estimate_fr(d, f, &fr),
                    }
                    .map_err(|e| e.to_string())
                }
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            match outcome {
                Ok(est) => RepResult {
                    method,
                    n,
                    rep,
                    seed,
                    theta: Some(est.theta),
                    se: Some(est.se),
                    ci_low: Some(est.ci_low),
                    ci_high: Some(est.ci_high),
                    error: None,
                },
                Err(msg) => RepResult { method, n, rep, seed, theta: None, se: None, ci_low: None, ci_high: None, error: Some(msg) },
            }
        })
        .collect()
}

/// Runs every (sample size, replication) pair in parallel and summarizes.
/// Failed replications are kept in the raw results; the run aborts if more
/// than 10% of the replications of any cell fail.
pub fn run_mc(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let theta_true = cfg.dgp.theta_true()?;
    let jobs: Vec<(usize, usize)> =
        cfg.sample_sizes.iter().flat_map(|&n| (0..cfg.reps).map(move |rep| (n, rep))).collect();
    let raw: Vec<RepResult> = jobs.par_iter().flat_map_iter(|&(n, rep)| run_one(cfg, n, rep)).collect();
    let summary = summarize(&raw, theta_true);
    for c in &summary.cells {
        let total = c.reps_ok + c.reps_failed;
        if c.reps_failed * 10 > total {
            return Err(Error::Train(format!(
                "{} at n = {}: {} of {} replications failed",
                c.method, c.n, c.reps_failed, total
            )));
        }
    }
    Ok(summary)
}

/// Aggregates raw results per (method, n), ordered by method then n.
pub fn summarize(raw: &[RepResult], theta_true: f64) -> McSummary {
    let mut keys: Vec<(Method, usize)> = raw.iter().map(|r| (r.method, r.n)).collect();
    keys.sort();
    keys.dedup();
    let cells = keys
        .into_iter()
        .map(|(method, n)| {
            let rows: Vec<&RepResult> = raw.iter().filter(|r| r.method == method && r.n == n).collect();
            let ok: Vec<&RepResult> = rows.iter().copied().filter(|r| r.theta.is_some()).collect();
            let m = ok.len() as f64;
            let thetas: Vec<f64> = ok.iter().map(|r| r.theta.unwrap_or(f64::NAN)).collect();
            let mean = thetas.iter().sum::<f64>() / m;
            let sd = if ok.len() > 1 {
                (thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            let covered = ok
                .iter()
                .filter(|r| matches!((r.ci_low, r.ci_high), (Some(lo), Some(hi)) if lo <= theta_true && theta_true <= hi))
                .count();
            CellSummary {
                method,
                n,
                mean_ate: mean,
                sd_ate: sd,
                mean_se: ok.iter().map(|r| r.se.unwrap_or(f64::NAN)).sum::<f64>() / m,
                mae: thetas.iter().map(|t| (t - theta_true).abs()).sum::<f64>() / m,
                coverage: covered as f64 / m,
                reps_ok: ok.len(),
                reps_failed: rows.len() - ok.len(),
            }
        })
        .collect();
    McSummary { theta_true, cells, reps: raw.to_vec() }
}

/// Aligned text table of the summary cells.
pub fn format_table(summary: &McSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "theta0 = {}", summary.theta_true);
    let _ = writeln!(out, "{:<6} {:>7} {:>10} {:>10} {:>10} {:>10} {:>9} {:>6}", "method", "n", "ATE", "SE", "MAE", "sd", "coverage", "fail");
    for c in &summary.cells {
        let _ = writeln!(
            out,
            "{:<6} {:>7} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9.3} {:>6}",
            c.method.name(),
            c.n,
            c.mean_ate,
            c.mean_se,
            c.mae,
            c.sd_ate,
            c.coverage,
            c.reps_failed
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub method: Method,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

/// Histogram of successful estimates per cell over a common range, so
/// densities of different methods can be overlaid.
pub fn histogram(summary: &McSummary, bins: usize) -> Vec<HistogramBin> {
    let ok: Vec<&RepResult> = summary.reps.iter().filter(|r| r.theta.is_some()).collect();
    if ok.is_empty() || bins == 0 {
        return Vec::new();
    }
    let values = ok.iter().map(|r| r.theta.unwrap_or(f64::NAN));
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out = Vec::new();
    for cell in &summary.cells {
        let mut counts = vec![0usize; bins];
        for r in ok.iter().filter(|r| r.method == cell.method && r.n == cell.n) {
            let t = r.theta.unwrap_or(f64::NAN);
            let b = (((t - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let total = counts.iter().sum::<usize>().max(1) as f64;
        for (b, &count) in counts.iter().enumerate() {
            out.push(HistogramBin {
                method: cell.method,
                n: cell.n,
                lo: lo + b as f64 * width,
                hi: lo + (b + 1) as f64 * width,
                count,
                density: count as f64 / (total * width),
            });
        }
    }
    out
}
