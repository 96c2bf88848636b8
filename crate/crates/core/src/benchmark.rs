//! Benchmarking sensitivity parameters against observed covariate groups:
//! drop a group, refit with the same folds and seed, and measure how much
//! outcome and representer explanatory power it carried.

use serde::{Deserialize, Serialize};

use crate::data::{CovariateGroup, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::estimators::{estimate_fr, AteEstimate, FrConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub group: String,
    pub k: usize,
    pub theta_full: f64,
    pub theta_minus_j: f64,
    /// `θ_{s,−j} − θ_s`.
    pub delta_theta: f64,
    pub gy: f64,
    pub gs: f64,
    pub rho_j: f64,
    pub gy_negative: bool,
    pub gs_negative: bool,
    pub eta2_full: f64,
    pub eta2_minus_j: f64,
    pub e_alpha2_full: f64,
    pub e_alpha2_minus_j: f64,
}

/// Out-of-fold quantities of one fit needed by the gain metrics.
struct FitSummary {
    theta: f64,
    eta2: f64,
    e_alpha2: f64,
    g_obs: Vec<f64>,
    alpha: Vec<f64>,
}

fn summarize_fit(data: &Dataset, est: &AteEstimate) -> Result<FitSummary> {
    let nuis = est.nuisances.as_ref().ok_or_else(|| Error::Train("estimate carries no nuisances".into()))?;
    let sel: Vec<usize> = (0..data.n()).filter(|&i| data.s()[i] == 1).collect();
    let ns = sel.len() as f64;
    let ys: Vec<f64> = sel.iter().map(|&i| data.y()[i].expect("selected row has an outcome")).collect();
    let ybar = ys.iter().sum::<f64>() / ns;
    let var_y = ys.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / ns;
    let g_obs: Vec<f64> = sel.iter().map(|&i| nuis.g_at(i, data.d()[i])).collect();
    let mse = ys.iter().zip(&g_obs).map(|(y, g)| (y - g).powi(2)).sum::<f64>() / ns;
    let alpha: Vec<f64> = sel.iter().map(|&i| nuis.alpha_hat[i]).collect();
    let e_alpha2 = nuis.alpha_hat.iter().map(|a| a * a).sum::<f64>() / data.n() as f64;
    Ok(FitSummary { theta: est.theta, eta2: 1.0 - mse / var_y, e_alpha2, g_obs, alpha })
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa > 0.0 && sbb > 0.0 {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Gain metrics from a full fit and a group-dropped fit.
fn gains(group: &str, k: usize, full: &FitSummary, minus: &FitSummary) -> BenchmarkResult {
    let d_eta2 = full.eta2 - minus.eta2;
    let gy = d_eta2 / (1.0 - full.eta2);
    let gs = (full.e_alpha2 - minus.e_alpha2) / full.e_alpha2;
    let dg: Vec<f64> = minus.g_obs.iter().zip(&full.g_obs).map(|(m, f)| m - f).collect();
    let da: Vec<f64> = full.alpha.iter().zip(&minus.alpha).map(|(f, m)| f - m).collect();
    BenchmarkResult {
        group: group.to_string(),
        k,
        theta_full: full.theta,
        theta_minus_j: minus.theta,
        delta_theta: minus.theta - full.theta,
        gy,
        gs,
        rho_j: correlation(&dg, &da),
        gy_negative: gy < 0.0,
        gs_negative: gs < 0.0,
        eta2_full: full.eta2,
        eta2_minus_j: minus.eta2,
        e_alpha2_full: full.e_alpha2,
        e_alpha2_minus_j: minus.e_alpha2,
    }
}

/// Benchmarks one group. The full model is refitted here; use
/// [`benchmark_groups`] to share the full fit across groups.
pub fn benchmark_group(data: &Dataset, folds: &FoldPlan, group: &CovariateGroup, cfg: &FrConfig) -> Result<BenchmarkResult> {
    let full = estimate_fr(data, folds, cfg)?;
    benchmark_against(data, folds, group, cfg, &full)
}

fn benchmark_against(
    data: &Dataset,
    folds: &FoldPlan,
    group: &CovariateGroup,
    cfg: &FrConfig,
    full: &AteEstimate,
) -> Result<BenchmarkResult> {
    if group.indices.is_empty() {
        return Err(Error::Group(format!("group `{}` is empty", group.name)));
    }
    let reduced = data.drop_covariates(&group.indices)?;
    let minus = estimate_fr(&reduced, folds, cfg)?;
    let fs = summarize_fit(data, full)?;
    let ms = summarize_fit(&reduced, &minus)?;
    Ok(gains(&group.name, group.indices.len(), &fs, &ms))
}

/// Benchmarks every group against one shared full fit, in group order.
pub fn benchmark_groups(data: &Dataset, folds: &FoldPlan, groups: &[CovariateGroup], cfg: &FrConfig) -> Result<Vec<BenchmarkResult>> {
    let full = estimate_fr(data, folds, cfg)?;
    groups.iter().map(|g| benchmark_against(data, folds, g, cfg, &full)).collect()
}

/// Writes the table `group, k, theta_full, theta_minus_j, delta_theta, |gy|,
/// |gs|, |rho|` followed by signed values and flags.
pub fn write_table<W: std::io::Write>(results: &[BenchmarkResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "group", "k", "theta_full", "theta_minus_j", "delta_theta", "abs_gy", "abs_gs", "abs_rho", "gy", "gs", "rho_j",
        "gy_negative", "gs_negative",
    ])?;
    for r in results {
        w.write_record([
            r.group.clone(),
            r.k.to_string(),
            format!("{:.6}", r.theta_full),
            format!("{:.6}", r.theta_minus_j),
            format!("{:.6}", r.delta_theta),
            format!("{:.6}", r.gy.abs()),
            format!("{:.6}", r.gs.abs()),
            format!("{:.6}", r.rho_j.abs()),
            format!("{:.6}", r.gy),
            format!("{:.6}", r.gs),
            format!("{:.6}", r.rho_j),
            r.gy_negative.to_string(),
            r.gs_negative.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_edge_cases() {
        assert_eq!(correlation(&[1.0, 1.0], &[2.0, 3.0]), 0.0);
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gains_from_summaries() {
        let full = FitSummary { theta: 1.0, eta2: 0.5, e_alpha2: 4.0, g_obs: vec![0.0, 1.0], alpha: vec![2.0, -2.0] };
        let minus = FitSummary { theta: 1.2, eta2: 0.4, e_alpha2: 3.0, g_obs: vec![0.1, 0.8], alpha: vec![1.5, -1.0] };
        let r = gains("g", 1, &full, &minus);
        assert!((r.delta_theta - 0.2).abs() < 1e-15);
        assert!((r.gy - 0.2).abs() < 1e-12);
        assert!((r.gs - 0.25).abs() < 1e-15);
        assert!(!r.gy_negative);
    }
}
