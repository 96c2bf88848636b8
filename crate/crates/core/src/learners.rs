//! Nuisance learners: penalized logistic regression by IRLS, least squares,
//! and forest-based probability and outcome models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{FeatureMapKind, ForestConfig, MomentForest, TrainView};
use crate::linalg;

/// Logistic regression with an unpenalized intercept (`coef[0]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    #[inline]
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        self.coef[0] + linalg::dot(&self.coef[1..], features)
    }

    #[inline]
    pub fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(features))
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub const LOGISTIC_LAMBDA: f64 = 1e-6;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const SEPARATION_NORM: f64 = 1e6;

/// Penalized negative log-likelihood `−Σ w ℓ + (λ/2)|β_{1..}|²`.
fn objective(x: &[f64], q: usize, labels: &[u8], weights: Option<&[f64]>, coef: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..labels.len() {
        let t = coef[0] + linalg::dot(&coef[1..], &x[i * q..(i + 1) * q]);
        // log(1 + e^t) − y t, computed stably.
        let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * (softplus - labels[i] as f64 * t);
    }
    total + 0.5 * lambda * coef[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Maximizes the Bernoulli log-likelihood with an L2 penalty `lambda` on the
/// slopes by iteratively reweighted least squares (Newton steps with step
/// halving). Stops when the largest coefficient change is below 1e-8 or
/// after 100 iterations. `x` is row-major with `q` feature columns; an
/// intercept is added.
///
/// Under perfect separation the penalty keeps the optimum finite, so a fit
/// normally succeeds with large slopes; `Error::Separation` is raised only
/// if the coefficient norm exceeds 1e6.
pub fn fit_logistic(x: &[f64], q: usize, labels: &[u8], weights: Option<&[f64]>, lambda: f64) -> Result<LogisticModel> {
    let n = labels.len();
    if x.len() != n * q {
        return Err(Error::Dimension { expected: n * q, got: x.len() });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Dimension { expected: n, got: w.len() });
        }
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::Train("logistic regression needs both classes present".into()));
    }
    let dim = q + 1;
    let mean = {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let w = weights.map_or(1.0, |w| w[i]);
            num += w * labels[i] as f64;
            den += w;
        }
        num / den
    };
    let mut coef = vec![0.0; dim];
    coef[0] = (mean / (1.0 - mean)).ln();
    let mut current = objective(x, q, labels, weights, &coef, lambda);
    let mut h = vec![0.0; dim * dim];
    let mut l = vec![0.0; dim * dim];
    let mut grad = vec![0.0; dim];
    let mut feat = vec![0.0; dim];
    for iter in 1..=IRLS_MAX_ITER {
        h.iter_mut().for_each(|v| *v = 0.0);
        grad.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            feat[0] = 1.0;
            feat[1..].copy_from_slice(&x[i * q..(i + 1) * q]);
            let mu = sigmoid(linalg::dot(&coef, &feat));
            let w = weights.map_or(1.0, |w| w[i]);
            let hw = w * (mu * (1.0 - mu)).max(1e-12);
            let r = w * (labels[i] as f64 - mu);
            for a in 0..dim {
                grad[a] += r * feat[a];
                for b in 0..=a {
                    h[a * dim + b] += hw * feat[a] * feat[b];
                }
            }
        }
        for a in 1..dim {
            h[a * dim + a] += lambda;
            grad[a] -= lambda * coef[a];
        }
        let mut ridge = 0.0;
        let mut ok = linalg::cholesky_into(&h, dim, ridge, &mut l);
        while !ok {
            ridge = if ridge == 0.0 { 1e-10 * (1.0 + h[0]) } else { ridge * 10.0 };
            if ridge > 1e6 {
                return Err(Error::Train("logistic Hessian is singular".into()));
            }
            ok = linalg::cholesky_into(&h, dim, ridge, &mut l);
        }
        let mut step = grad.clone();
        linalg::cholesky_solve(&l, dim, &mut step);
        let mut scale = 1.0;
        let mut candidate = vec![0.0; dim];
        let mut accepted = false;
        for _ in 0..40 {
            for a in 0..dim {
                candidate[a] = coef[a] + scale * step[a];
            }
            let value = objective(x, q, labels, weights, &candidate, lambda);
            if value <= current + 1e-12 * current.abs() {
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let max_change = step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max);
        if accepted {
            coef.copy_from_slice(&candidate);
        }
        let norm = coef.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > SEPARATION_NORM {
            return Err(Error::Separation { norm });
        }
        if !accepted || max_change < IRLS_TOL {
            return Ok(LogisticModel { coef, iterations: iter, converged: accepted || max_change < IRLS_TOL });
        }
    }
    Ok(LogisticModel { coef, iterations: IRLS_MAX_ITER, converged: false })
}

/// Least squares with intercept (`coef[0]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
}

impl LinearModel {
    #[inline]
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.coef[0] + linalg::dot(&self.coef[1..], features)
    }
}

/// Ordinary least squares via the normal equations (Cholesky), with a
/// relative ridge of 1e-12 of the Gram trace added only if needed.
pub fn fit_ols(x: &[f64], q: usize, y: &[f64]) -> Result<LinearModel> {
    let n = y.len();
    if x.len() != n * q {
        return Err(Error::Dimension { expected: n * q, got: x.len() });
    }
    if n == 0 {
        return Err(Error::Train("least squares needs at least one row".into()));
    }
    let dim = q + 1;
    let mut g = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    let mut feat = vec![0.0; dim];
    for i in 0..n {
        feat[0] = 1.0;
        feat[1..].copy_from_slice(&x[i * q..(i + 1) * q]);
        for a in 0..dim {
            b[a] += feat[a] * y[i];
            for c in 0..=a {
                g[a * dim + c] += feat[a] * feat[c];
            }
        }
    }
    let trace: f64 = (0..dim).map(|a| g[a * dim + a]).sum();
    let mut l = vec![0.0; dim * dim];
    let mut ridge = 0.0;
    while !linalg::cholesky_into(&g, dim, ridge, &mut l) {
        ridge = if ridge == 0.0 { 1e-12 * trace.max(1.0) } else { ridge * 10.0 };
        if ridge > trace.max(1.0) {
            return Err(Error::Train("least-squares system is singular".into()));
        }
    }
    linalg::cholesky_solve(&l, dim, &mut b);
    Ok(LinearModel { coef: b })
}

/// Clips a probability into `[eps, 1 − eps]`; reports whether it moved.
#[inline]
pub fn clip_probability(p: f64, eps: f64) -> (f64, bool) {
    if p < eps {
        (eps, true)
    } else if p > 1.0 - eps {
        (1.0 - eps, true)
    } else {
        (p, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropensityKind {
    #[default]
    Logistic,
    Forest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Linear,
    #[default]
    Forest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityTarget {
    /// `p_1(x) = P(D = 1 | X = x)`.
    Treatment,
    /// `π_s(d, x) = P(S = 1 | D = d, X = x)`.
    Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbabilityModel {
    /// Features `[x]` for treatment, `[d, x]` for selection.
    Logistic(LogisticModel),
    Forest(MomentForest),
    /// Selection observed everywhere in training: `π ≡ 1`, never clipped.
    AlwaysSelected,
}

/// Fitted propensity with its clipping floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub target: PropensityTarget,
    pub clip: f64,
    pub model: ProbabilityModel,
}

/// Training rows and learner settings shared by the fitting helpers below.
pub struct NuisanceData<'a> {
    pub x: &'a [f64],
    pub p: usize,
    pub d: &'a [u8],
    pub s: &'a [u8],
    /// Outcome with zeros where unobserved.
    pub y: &'a [f64],
}

impl NuisanceData<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

impl PropensityModel {
    pub fn fit_treatment(data: &NuisanceData, rows: &[usize], kind: PropensityKind, clip: f64, forest: &ForestConfig) -> Result<Self> {
        let labels: Vec<u8> = rows.iter().map(|&i| data.d[i]).collect();
        let model = match kind {
            PropensityKind::Logistic => {
                let mut x = Vec::with_capacity(rows.len() * data.p);
                for &i in rows {
                    x.extend_from_slice(data.row(i));
                }
                ProbabilityModel::Logistic(fit_logistic(&x, data.p, &labels, None, LOGISTIC_LAMBDA)?)
            }
            PropensityKind::Forest => {
                let ones = vec![1u8; data.d.len()];
                let target: Vec<f64> = data.d.iter().map(|&v| v as f64).collect();
                let view = TrainView { x: data.x, p: data.p, d: data.d, s: &ones, target: &target };
                ProbabilityModel::Forest(MomentForest::train(&view, rows, FeatureMapKind::Constant, forest, 1.0)?)
            }
        };
        Ok(PropensityModel { target: PropensityTarget::Treatment, clip, model })
    }

    pub fn fit_selection(data: &NuisanceData, rows: &[usize], kind: PropensityKind, clip: f64, forest: &ForestConfig) -> Result<Self> {
        let labels: Vec<u8> = rows.iter().map(|&i| data.s[i]).collect();
        if !labels.contains(&0) {
            return Ok(PropensityModel { target: PropensityTarget::Selection, clip, model: ProbabilityModel::AlwaysSelected });
        }
        let model = match kind {
            PropensityKind::Logistic => {
                let q = data.p + 1;
                let mut x = Vec::with_capacity(rows.len() * q);
                for &i in rows {
                    x.push(data.d[i] as f64);
                    x.extend_from_slice(data.row(i));
                }
                ProbabilityModel::Logistic(fit_logistic(&x, q, &labels, None, LOGISTIC_LAMBDA)?)
            }
            PropensityKind::Forest => {
                let ones = vec![1u8; data.d.len()];
                let target: Vec<f64> = data.s.iter().map(|&v| v as f64).collect();
                let view = TrainView { x: data.x, p: data.p, d: data.d, s: &ones, target: &target };
                ProbabilityModel::Forest(MomentForest::train(&view, rows, FeatureMapKind::Intercepts, forest, 1.0)?)
            }
        };
        Ok(PropensityModel { target: PropensityTarget::Selection, clip, model })
    }

    /// Unclipped prediction. `d` is ignored for the treatment target.
    pub fn predict_raw(&self, d: u8, x: &[f64]) -> Result<f64> {
        match &self.model {
            ProbabilityModel::AlwaysSelected => Ok(1.0),
            ProbabilityModel::Logistic(m) => match self.target {
                PropensityTarget::Treatment => Ok(m.predict(x)),
                PropensityTarget::Selection => {
                    let t = m.coef[0] + m.coef[1] * d as f64 + linalg::dot(&m.coef[2..], x);
                    Ok(sigmoid(t))
                }
            },
            ProbabilityModel::Forest(f) => {
                let g = f.predict_g(d, x)?;
                Ok(g.clamp(0.0, 1.0))
            }
        }
    }

    /// Clipped prediction and whether clipping was active.
    pub fn predict(&self, d: u8, x: &[f64]) -> Result<(f64, bool)> {
        let raw = self.predict_raw(d, x)?;
        if matches!(self.model, ProbabilityModel::AlwaysSelected) {
            return Ok((1.0, false));
        }
        Ok(clip_probability(raw, self.clip))
    }
}

/// Outcome regression `μ_d(x) = E[Y | D = d, X = x, S = 1]`, or on the full
/// sample for a zero-filled outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeModel {
    /// Separate least-squares fits per arm: `[control, treated]`.
    Linear([LinearModel; 2]),
    Forest(MomentForest),
}

impl OutcomeModel {
    /// Fits on `rows`; only rows with `s = 1` carry outcome information. To
    /// regress a zero-filled outcome on every row, pass `s` as all ones.
    pub fn fit(data: &NuisanceData, rows: &[usize], kind: OutcomeKind, forest: &ForestConfig) -> Result<Self> {
        match kind {
            OutcomeKind::Linear => {
                let mut arms = Vec::with_capacity(2);
                for arm in 0..2u8 {
                    let sel: Vec<usize> = rows.iter().copied().filter(|&i| data.s[i] == 1 && data.d[i] == arm).collect();
                    if sel.len() < data.p + 1 {
                        return Err(Error::Train(format!(
                            "arm d={arm} has {} selected training rows, need at least {}",
                            sel.len(),
                            data.p + 1
                        )));
                    }
                    let mut x = Vec::with_capacity(sel.len() * data.p);
                    let mut y = Vec::with_capacity(sel.len());
                    for &i in &sel {
                        x.extend_from_slice(data.row(i));
                        y.push(data.y[i]);
                    }
                    arms.push(fit_ols(&x, data.p, &y)?);
                }
                let treated = arms.pop().expect("two arms");
                let control = arms.pop().expect("two arms");
                Ok(OutcomeModel::Linear([control, treated]))
            }
            OutcomeKind::Forest => {
                let view = TrainView { x: data.x, p: data.p, d: data.d, s: data.s, target: data.y };
                Ok(OutcomeModel::Forest(MomentForest::train(&view, rows, FeatureMapKind::ArmLinear, forest, 1.0)?))
            }
        }
    }

    pub fn predict(&self, d: u8, x: &[f64]) -> Result<f64> {
        match self {
            OutcomeModel::Linear(arms) => Ok(arms[d as usize].predict(x)),
            OutcomeModel::Forest(f) => f.predict_g(d, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn independent_labels_give_label_mean() {
        let x: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        // Each feature value has half positive labels.
        let labels = [1, 1, 0, 0, 1, 1, 0, 0];
        let m = fit_logistic(&x, 1, &labels, None, LOGISTIC_LAMBDA).unwrap();
        for v in [0.0, 1.0] {
            assert!((m.predict(&[v]) - 0.5).abs() < 1e-8);
        }
        assert!(m.converged);
    }

    #[test]
    fn separated_labels_stay_bounded() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0 - 0.5).collect();
        let labels: Vec<u8> = x.iter().map(|&v| (v > 0.0) as u8).collect();
        let m = fit_logistic(&x, 1, &labels, None, LOGISTIC_LAMBDA).unwrap();
        assert!(m.coef.iter().all(|c| c.is_finite()));
        assert!(m.predict(&[0.5]) > 0.999 && m.predict(&[-0.5]) < 0.001);
    }

    #[test]
    fn recovers_probabilities() {
        let mut rng = crate::rng::stream(17, &[1]);
        let n = 10_000;
        let mut x = Vec::with_capacity(2 * n);
        let mut truth = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let p = sigmoid(0.3 + 0.8 * a - 0.5 * b);
            x.push(a);
            x.push(b);
            truth.push(p);
            labels.push(rng.random_bool(p) as u8);
        }
        let m = fit_logistic(&x, 2, &labels, None, LOGISTIC_LAMBDA).unwrap();
        let rmse = ((0..n).map(|i| (m.predict(&x[2 * i..2 * i + 2]) - truth[i]).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rmse < 0.03, "rmse {rmse}");
    }

    #[test]
    fn ols_exact_fit() {
        let x: Vec<f64> = vec![0.0, 1.0, 1.0, 0.0, 2.0, 3.0, 4.0, 1.0];
        let y: Vec<f64> = (0..4).map(|i| 1.0 + 2.0 * x[2 * i] - 0.5 * x[2 * i + 1]).collect();
        let m = fit_ols(&x, 2, &y).unwrap();
        for (c, w) in m.coef.iter().zip([1.0, 2.0, -0.5]) {
            assert!((c - w).abs() < 1e-10);
        }
    }

    #[test]
    fn clipping_is_monotone_in_eps() {
        let ps = [0.001, 0.02, 0.3, 0.97, 0.999];
        let count = |eps: f64| ps.iter().filter(|&&p| clip_probability(p, eps).1).count();
        assert!(count(0.001) <= count(0.01));
        assert!(count(0.01) <= count(0.05));
    }
}
