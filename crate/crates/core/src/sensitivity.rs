//! Omitted-variable bias from a latent selection confounder.
//!
//! The bias of the short parameter satisfies `|θ₀ − θ_s|² = ρ² S̃² C_Y² C_S²`
//! with `S̃² = E[(Y − g_s)²] E[α_s²]` identified from observed data. The
//! quasi-Gaussian device maps an interpretable latent partial R² `μ_S²` of
//! the selection index to `C_S²`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::z_value;
use crate::normal;
use crate::rng::{self, tags};

/// Observed-data inputs. `residuals` are `s·(y − ĝ_s)` over all `n` rows
/// (zero where unselected); `alpha_s` is the unnormalized plug-in short
/// representer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityInputs {
    pub residuals: Vec<f64>,
    pub alpha_s: Vec<f64>,
    pub theta_s: f64,
    pub se_s: f64,
}

impl SensitivityInputs {
    pub fn new(residuals: Vec<f64>, alpha_s: Vec<f64>, theta_s: f64, se_s: f64) -> Result<Self> {
        if residuals.len() != alpha_s.len() {
            return Err(Error::Dimension { expected: residuals.len(), got: alpha_s.len() });
        }
        if residuals.len() < 2 {
            return Err(Error::Domain("sensitivity inputs need n >= 2".into()));
        }
        if residuals.iter().chain(&alpha_s).any(|v| !v.is_finite()) || !theta_s.is_finite() || !(se_s >= 0.0) {
            return Err(Error::Domain("sensitivity inputs must be finite with se >= 0".into()));
        }
        Ok(SensitivityInputs { residuals, alpha_s, theta_s, se_s })
    }

    pub fn n(&self) -> usize {
        self.residuals.len()
    }
}

/// `S̃² = mean(residual²) · mean(α_s²)`.
pub fn scale_factor(inputs: &SensitivityInputs) -> f64 {
    let n = inputs.n() as f64;
    let r2 = inputs.residuals.iter().map(|v| v * v).sum::<f64>() / n;
    let a2 = inputs.alpha_s.iter().map(|v| v * v).sum::<f64>() / n;
    r2 * a2
}

/// `|ρ| · √(S̃² C_Y² C_S²)`.
pub fn bias_bound(s2: f64, cy2: f64, cs2: f64, rho: f64) -> Result<f64> {
    if !(s2 >= 0.0) || !s2.is_finite() {
        return Err(Error::Domain(format!("S2 must be finite and >= 0, got {s2}")));
    }
    if !(0.0..1.0).contains(&cy2) {
        return Err(Error::Domain(format!("C_Y^2 must be in [0, 1), got {cy2}")));
    }
    if !(cs2 >= 0.0) || !cs2.is_finite() {
        return Err(Error::Domain(format!("C_S^2 must be finite and >= 0, got {cs2}")));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must be in [-1, 1], got {rho}")));
    }
    Ok(rho.abs() * (s2 * cy2 * cs2).sqrt())
}

/// Equal-strength robustness value: the `r` with `C_Y² = r`,
/// `C_S² = r/(1 − r)` and `ρ = 1` whose bound equals `|θ_s|`, i.e. the
/// positive root of `r² + a r − a = 0` with `a = θ_s²/S̃²`.
pub fn robustness_value(theta_s: f64, s2: f64) -> Result<f64> {
    if !(s2 > 0.0) || !s2.is_finite() {
        return Err(Error::Domain(format!("S2 must be positive, got {s2}")));
    }
    let a = theta_s * theta_s / s2;
    if a == 0.0 {
        return Ok(0.0);
    }
    // (−a + √(a² + 4a)) / 2 rewritten as 2a / (a + √(a² + 4a)) to avoid
    // cancellation for large a.
    Ok(2.0 * a / (a + (a * a + 4.0 * a).sqrt()))
}

/// `[θ_s − bound − z·se, θ_s + bound + z·se]`.
pub fn adjusted_interval(theta_s: f64, se: f64, bound: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must be in (0, 1), got {level}")));
    }
    let half = bound + z_value(level) * se;
    Ok((theta_s - half, theta_s + half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGridPoint {
    pub cy2: f64,
    pub cs2: f64,
    pub rho: f64,
    pub bias_bound: f64,
    pub theta_low: f64,
    pub theta_high: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Bounds for every `(C_Y², C_S²)` pair.
pub fn grid(inputs: &SensitivityInputs, cy2: &[f64], cs2: &[f64], rho: f64, level: f64) -> Result<Vec<SensitivityGridPoint>> {
    let s2 = scale_factor(inputs);
    let mut out = Vec::with_capacity(cy2.len() * cs2.len());
    for &cy in cy2 {
        for &cs in cs2 {
            let b = bias_bound(s2, cy, cs, rho)?;
            let (ci_low, ci_high) = adjusted_interval(inputs.theta_s, inputs.se_s, b, level)?;
            out.push(SensitivityGridPoint {
                cy2: cy,
                cs2: cs,
                rho,
                bias_bound: b,
                theta_low: inputs.theta_s - b,
                theta_high: inputs.theta_s + b,
                ci_low,
                ci_high,
            });
        }
    }
    Ok(out)
}

pub const PROBABILITY_FLOOR: f64 = 1e-12;
pub const DEFAULT_B_DRAWS: usize = 10_000;

/// `{0, 0.05, …, 0.95}`.
pub fn default_mu2_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub mu2_grid: Vec<f64>,
    pub cs2_values: Vec<f64>,
    pub r2_values: Vec<f64>,
    pub mc_draws: usize,
    pub mc_se: Vec<f64>,
    /// Long probabilities raised to the floor, per grid point.
    pub floored: Vec<u64>,
}

impl CalibrationCurve {
    /// Linear interpolation of `C_S²` in `μ_S²`, flat beyond the grid.
    pub fn cs2_at(&self, mu2: f64) -> f64 {
        let g = &self.mu2_grid;
        if g.is_empty() {
            return f64::NAN;
        }
        if mu2 <= g[0] {
            return self.cs2_values[0];
        }
        for w in 1..g.len() {
            if mu2 <= g[w] {
                let t = (mu2 - g[w - 1]) / (g[w] - g[w - 1]);
                return self.cs2_values[w - 1] + t * (self.cs2_values[w] - self.cs2_values[w - 1]);
            }
        }
        *self.cs2_values.last().expect("non-empty")
    }
}

/// Long selection probability under the probit device:
/// `π₀ = Φ((h − μ a)/√(1 − μ²))` with `h = Φ⁻¹(π_s)`, `μ = √μ²`.
#[inline]
pub fn long_probability(h: f64, mu2: f64, a: f64) -> f64 {
    if mu2 == 0.0 {
        return normal::cdf(h);
    }
    normal::cdf((h - mu2.sqrt() * a) / (1.0 - mu2).sqrt())
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Domain(format!("{name} must lie in (0, 1) after clipping, got {v}")));
    }
    Ok(())
}

/// Monte-Carlo map `μ_S² ↦ C_S²`.
///
/// For each grid point and observation, `b_draws` latent values
/// `A ~ N(0, 1)` are drawn (one per observation and draw, shared by both
/// arms), long probabilities are formed, floored at 1e-12, and
/// `1/(p₁ π₀(1)) + 1/(p₀ π₀(0))` is averaged. Each grid point has its own
/// random stream.
pub fn calibrate_quasi_gaussian(
    p1: &[f64],
    pi1: &[f64],
    pi0: &[f64],
    mu2_grid: &[f64],
    b_draws: usize,
    seed: u64,
) -> Result<CalibrationCurve> {
    let n = p1.len();
    if pi1.len() != n || pi0.len() != n {
        return Err(Error::Dimension { expected: n, got: pi1.len().min(pi0.len()) });
    }
    if n == 0 {
        return Err(Error::Domain("calibration needs at least one observation".into()));
    }
    if b_draws < 100 {
        return Err(Error::Domain(format!("b_draws must be at least 100, got {b_draws}")));
    }
    for (i, &m) in mu2_grid.iter().enumerate() {
        if !(0.0..=0.99).contains(&m) {
            return Err(Error::Domain(format!("mu2 grid point {i} = {m} outside [0, 0.99]")));
        }
    }
    for i in 0..n {
        check_probability("p1", p1[i])?;
        check_probability("pi1", pi1[i])?;
        check_probability("pi0", pi0[i])?;
    }
    let h1: Vec<f64> = pi1.iter().map(|&p| normal::quantile(p)).collect();
    let h0: Vec<f64> = pi0.iter().map(|&p| normal::quantile(p)).collect();
    let e_short: f64 = (0..n).map(|i| 1.0 / (p1[i] * pi1[i]) + 1.0 / ((1.0 - p1[i]) * pi0[i])).sum::<f64>() / n as f64;

    let points: Vec<Result<(f64, f64, u64)>> = mu2_grid
        .par_iter()
        .enumerate()
        .map(|(g, &mu2)| {
            if mu2 == 0.0 {
                // π₀ = π_s exactly: C_S² = 0 with no Monte-Carlo error.
                return Ok((0.0, 0.0, 0));
            }
            let mut rng = rng::stream(seed, &[tags::CALIBRATION, g as u64]);
            let (mut sum, mut sum_sq, mut floored) = (0.0, 0.0, 0u64);
            for i in 0..n {
                for _ in 0..b_draws {
                    let a: f64 = rng.sample(StandardNormal);
                    let mut v = 0.0;
                    for (h, w) in [(h1[i], p1[i]), (h0[i], 1.0 - p1[i])] {
                        let mut pl = long_probability(h, mu2, a);
                        if !pl.is_finite() {
                            return Err(Error::Numerical { mu2, msg: format!("non-finite long probability at observation {i}") });
                        }
                        if pl < PROBABILITY_FLOOR {
                            pl = PROBABILITY_FLOOR;
                            floored += 1;
                        }
                        v += 1.0 / (w * pl);
                    }
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let m = (n * b_draws) as f64;
            let mean = sum / m;
            let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
            Ok((mean, (var / m).sqrt(), floored))
        })
        .collect();

    let mut curve = CalibrationCurve {
        mu2_grid: mu2_grid.to_vec(),
        cs2_values: Vec::with_capacity(mu2_grid.len()),
        r2_values: Vec::with_capacity(mu2_grid.len()),
        mc_draws: b_draws,
        mc_se: Vec::with_capacity(mu2_grid.len()),
        floored: Vec::with_capacity(mu2_grid.len()),
    };
    for (g, point) in points.into_iter().enumerate() {
        let (e_long, se_long, floored) = point?;
        if mu2_grid[g] == 0.0 {
            curve.cs2_values.push(0.0);
            curve.r2_values.push(1.0);
        } else {
            curve.cs2_values.push(e_long / e_short - 1.0);
            curve.r2_values.push(e_short / e_long);
        }
        curve.mc_se.push(se_long / e_short);
        curve.floored.push(floored);
    }
    Ok(curve)
}

/// Mean and Monte-Carlo standard error of `π₀^(b)` over `b_draws` latent
/// draws for one selection probability.
pub fn mixture_mean(pi_s: f64, mu2: f64, b_draws: usize, seed: u64) -> (f64, f64) {
    let h = normal::quantile(pi_s);
    let mut rng = rng::stream(seed, &[tags::CALIBRATION, u64::MAX]);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..b_draws {
        let a: f64 = rng.sample(StandardNormal);
        let v = long_probability(h, mu2, a);
        sum += v;
        sum_sq += v * v;
    }
    let m = b_draws as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    (mean, (var / m).sqrt())
}

/// How the second contour axis is turned into `C_S²`.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionAxis {
    /// Treat the axis value `v` as `1 − R²_{α₀∼α_s}`: `C_S² = v/(1 − v)`.
    Technical,
    /// Treat the axis value as `μ_S²` and read `C_S²` off the curve.
    Calibrated(CalibrationCurve),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub cy2: f64,
    pub eta_s2: f64,
    pub cs2: f64,
    pub bound: f64,
    /// The worst-case (`ρ = 1`) bound reaches `|θ_s|`.
    pub flips_sign: bool,
}

fn axis(range: (f64, f64), resolution: usize) -> Vec<f64> {
    if resolution <= 1 {
        return vec![range.0];
    }
    (0..resolution).map(|i| range.0 + (range.1 - range.0) * i as f64 / (resolution - 1) as f64).collect()
}

/// Worst-case bounds over a `resolution × resolution` grid.
pub fn contour_grid(
    s2: f64,
    theta_s: f64,
    cy2_range: (f64, f64),
    eta_s2_range: (f64, f64),
    resolution: usize,
    selection: &SelectionAxis,
) -> Result<Vec<ContourPoint>> {
    for (lo, hi) in [cy2_range, eta_s2_range] {
        if !(0.0 <= lo && lo <= hi && hi <= 0.99) {
            return Err(Error::Domain(format!("contour range [{lo}, {hi}] must lie within [0, 0.99]")));
        }
    }
    let mut out = Vec::with_capacity(resolution * resolution);
    for &cy2 in &axis(cy2_range, resolution) {
        for &eta in &axis(eta_s2_range, resolution) {
            let cs2 = match selection {
                SelectionAxis::Technical => eta / (1.0 - eta),
                SelectionAxis::Calibrated(curve) => curve.cs2_at(eta).max(0.0),
            };
            let bound = bias_bound(s2, cy2, cs2, 1.0)?;
            out.push(ContourPoint { cy2, eta_s2: eta, cs2, bound, flips_sign: bound >= theta_s.abs() });
        }
    }
    Ok(out)
}

/// Everything the sensitivity report carries. `points` runs over `cy2`
/// (outer) and `mu2` (inner); `cs2[j]` is the value used for `mu2[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub theta_s: f64,
    pub se_s: f64,
    pub level: f64,
    pub s2: f64,
    pub robustness_value: f64,
    /// `"calibrated"` when `mu2` went through the quasi-Gaussian curve,
    /// `"technical"` when it was read as `1 − R²_{α₀∼α_s}`.
    pub selection_axis: String,
    pub mu2: Vec<f64>,
    pub cs2: Vec<f64>,
    pub points: Vec<SensitivityGridPoint>,
    pub calibration: Option<CalibrationCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityOptions {
    pub cy2: Vec<f64>,
    pub mu2: Vec<f64>,
    pub rho: f64,
    pub level: f64,
    pub b_draws: usize,
    pub seed: u64,
    pub mu2_grid: Vec<f64>,
    pub contour_resolution: usize,
    pub cy2_range: (f64, f64),
    pub eta_s2_range: (f64, f64),
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions {
            cy2: vec![0.01, 0.03, 0.05, 0.1],
            mu2: vec![0.01, 0.03, 0.05, 0.1],
            rho: 1.0,
            level: 0.95,
            b_draws: DEFAULT_B_DRAWS,
            seed: 0,
            mu2_grid: default_mu2_grid(),
            contour_resolution: 20,
            cy2_range: (0.0, 0.5),
            eta_s2_range: (0.0, 0.5),
        }
    }
}

/// Propensities `(p̂₁, π̂_s(1,·), π̂_s(0,·))` per observation.
pub type Propensities<'a> = (&'a [f64], &'a [f64], &'a [f64]);

/// Full analysis: scale factor, robustness value, bound grid and contour.
/// With propensities the selection axis is calibrated through the
/// quasi-Gaussian curve; without them it is the technical axis.
pub fn analyze(
    inputs: &SensitivityInputs,
    propensities: Option<Propensities>,
    opts: &SensitivityOptions,
) -> Result<(SensitivityReport, Vec<ContourPoint>)> {
    let s2 = scale_factor(inputs);
    let rv = robustness_value(inputs.theta_s, s2)?;
    let calibration = match propensities {
        Some((p1, pi1, pi0)) => Some(calibrate_quasi_gaussian(p1, pi1, pi0, &opts.mu2_grid, opts.b_draws, opts.seed)?),
        None => None,
    };
    let axis = match &calibration {
        Some(c) => SelectionAxis::Calibrated(c.clone()),
        None => SelectionAxis::Technical,
    };
    let mut cs2 = Vec::with_capacity(opts.mu2.len());
    for &m in &opts.mu2 {
        if !(0.0..1.0).contains(&m) {
            return Err(Error::Domain(format!("mu2 must be in [0, 1), got {m}")));
        }
        cs2.push(match &axis {
            SelectionAxis::Technical => m / (1.0 - m),
            SelectionAxis::Calibrated(c) => c.cs2_at(m).max(0.0),
        });
    }
    let points = grid(inputs, &opts.cy2, &cs2, opts.rho, opts.level)?;
    let contour = contour_grid(s2, inputs.theta_s, opts.cy2_range, opts.eta_s2_range, opts.contour_resolution, &axis)?;
    let report = SensitivityReport {
        theta_s: inputs.theta_s,
        se_s: inputs.se_s,
        level: opts.level,
        s2,
        robustness_value: rv,
        selection_axis: if calibration.is_some() { "calibrated" } else { "technical" }.into(),
        mu2: opts.mu2.clone(),
        cs2,
        points,
        calibration,
    };
    Ok((report, contour))
}

/// Writes contour points as CSV `cy2, eta_s2, cs2, bound, flips_sign`.
pub fn write_contour<W: std::io::Write>(points: &[ContourPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cy2", "eta_s2", "cs2", "bound", "flips_sign"])?;
    for p in points {
        w.write_record([
            crate::data::format_f64(p.cy2),
            crate::data::format_f64(p.eta_s2),
            crate::data::format_f64(p.cs2),
            crate::data::format_f64(p.bound),
            p.flips_sign.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_factor_arithmetic() {
        let zero = SensitivityInputs::new(vec![0.0; 4], vec![2.0, -2.0, 2.0, -2.0], 1.0, 0.1).unwrap();
        assert_eq!(scale_factor(&zero), 0.0);
        let ones = SensitivityInputs::new(vec![1.0; 4], vec![2.0, -2.0, 2.0, -2.0], 1.0, 0.1).unwrap();
        assert_eq!(scale_factor(&ones), 4.0);
    }

    #[test]
    fn bound_arithmetic_and_domain() {
        assert_eq!(bias_bound(4.0, 0.0, 0.09, 1.0).unwrap(), 0.0);
        assert!((bias_bound(4.0, 0.04, 0.09, 1.0).unwrap() - 0.12).abs() < 1e-15);
        assert!(bias_bound(4.0, 1.0, 0.1, 1.0).is_err());
        assert!(bias_bound(4.0, 0.1, -0.1, 1.0).is_err());
        assert!(bias_bound(4.0, 0.1, 0.1, 1.5).is_err());
    }

    #[test]
    fn robustness_value_cases() {
        assert_eq!(robustness_value(0.0, 2.0).unwrap(), 0.0);
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        assert!((robustness_value(1.0, 1.0).unwrap() - golden).abs() < 1e-15);
    }

    #[test]
    fn interval_cases() {
        let (lo, hi) = adjusted_interval(1.0, 0.0, 0.3, 0.95).unwrap();
        assert_eq!((lo, hi), (0.7, 1.3));
        let (lo, hi) = adjusted_interval(1.0, 0.1, 0.0, 0.95).unwrap();
        assert!((hi - 1.0 - z_value(0.95) * 0.1).abs() < 1e-15 && (1.0 - lo - (hi - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn calibration_endpoint_is_exact() {
        let curve = calibrate_quasi_gaussian(&[0.4, 0.6], &[0.7, 0.5], &[0.3, 0.8], &[0.0, 0.3], 200, 1).unwrap();
        assert_eq!(curve.cs2_values[0], 0.0);
        assert_eq!(curve.r2_values[0], 1.0);
        assert!(curve.cs2_values[1] > 0.0);
        assert!((curve.cs2_values[1] - (1.0 - curve.r2_values[1]) / curve.r2_values[1]).abs() < 1e-12);
    }

    #[test]
    fn contour_edges_and_scaling() {
        let a = contour_grid(1.0, 0.5, (0.0, 0.5), (0.0, 0.5), 6, &SelectionAxis::Technical).unwrap();
        let b = contour_grid(2.0, 0.5, (0.0, 0.5), (0.0, 0.5), 6, &SelectionAxis::Technical).unwrap();
        for (p, q) in a.iter().zip(&b) {
            if p.cy2 == 0.0 || p.eta_s2 == 0.0 {
                assert_eq!(p.bound, 0.0);
            }
            assert!((q.bound - 2f64.sqrt() * p.bound).abs() < 1e-14);
        }
    }
}
