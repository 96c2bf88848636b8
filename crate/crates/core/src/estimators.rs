//! Cross-fitted ATE estimators.
//!
//! * [`estimate_irm`]: AIPW that ignores selection (the biased baseline).
//! * [`estimate_ssm`]: efficient score with treatment and selection
//!   propensities, Hájek-normalized by default.
//! * [`estimate_fr`]: doubly robust score with forest representer and
//!   outcome heads.

use serde::{Deserialize, Serialize};

use crate::data::{format_f64, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::forest::{self, FeatureMapKind, ForestConfig};
use crate::learners::{NuisanceData, OutcomeKind, OutcomeModel, PropensityKind, PropensityModel};
use crate::normal;
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Irm,
    Ssm,
    Fr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Irm => "IRM",
            Method::Ssm => "SSM",
            Method::Fr => "FR",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "irm" => Ok(Method::Irm),
            "ssm" => Ok(Method::Ssm),
            "fr" => Ok(Method::Fr),
            other => Err(Error::Config(format!("unknown method `{other}` (expected irm, ssm or fr)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n_selected: usize,
    pub fold_sizes: Vec<usize>,
    /// Probability predictions moved by clipping, over all that were made.
    pub clipped: usize,
    pub predictions: usize,
    pub clip_rate: f64,
    pub p1_min: Option<f64>,
    pub p1_max: Option<f64>,
    pub pi_min: Option<f64>,
    pub pi_max: Option<f64>,
}

impl Diagnostics {
    fn new(data: &Dataset, folds: Option<&FoldPlan>) -> Self {
        Diagnostics {
            n: data.n(),
            n_selected: data.selected_count(),
            fold_sizes: folds.map(|f| f.sizes()).unwrap_or_default(),
            ..Default::default()
        }
    }

    fn record_p1(&mut self, raw: f64, clipped: bool) {
        self.predictions += 1;
        self.clipped += clipped as usize;
        self.p1_min = Some(self.p1_min.map_or(raw, |v| v.min(raw)));
        self.p1_max = Some(self.p1_max.map_or(raw, |v| v.max(raw)));
    }

    fn record_pi(&mut self, raw: f64, clipped: bool) {
        self.predictions += 1;
        self.clipped += clipped as usize;
        self.pi_min = Some(self.pi_min.map_or(raw, |v| v.min(raw)));
        self.pi_max = Some(self.pi_max.map_or(raw, |v| v.max(raw)));
    }

    fn finish(&mut self) {
        self.clip_rate = if self.predictions > 0 { self.clipped as f64 / self.predictions as f64 } else { 0.0 };
    }
}

/// Per-observation nuisance values, all out-of-fold. Entries a method does
/// not use are `NaN`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Nuisances {
    pub fold: Vec<usize>,
    pub p1: Vec<f64>,
    pub pi1: Vec<f64>,
    pub pi0: Vec<f64>,
    pub g1: Vec<f64>,
    pub g0: Vec<f64>,
    /// Representer used in the score.
    pub alpha_hat: Vec<f64>,
    /// Unnormalized plug-in short representer from the propensities.
    pub alpha_plugin: Vec<f64>,
}

impl Nuisances {
    fn with_len(n: usize) -> Self {
        let nan = vec![f64::NAN; n];
        Nuisances {
            fold: vec![0; n],
            p1: nan.clone(),
            pi1: nan.clone(),
            pi0: nan.clone(),
            g1: nan.clone(),
            g0: nan.clone(),
            alpha_hat: nan.clone(),
            alpha_plugin: nan,
        }
    }

    /// `ĝ(d_i, x_i)`.
    pub fn g_at(&self, i: usize, d: u8) -> f64 {
        if d == 1 {
            self.g1[i]
        } else {
            self.g0[i]
        }
    }

    /// `s · (y − ĝ(d, x))`, zero off the selected sample.
    pub fn residuals(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n())
            .map(|i| match data.y()[i] {
                Some(y) => y - self.g_at(i, data.d()[i]),
                None => 0.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub method: Method,
    pub theta: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub scores: Vec<f64>,
    #[serde(skip)]
    pub nuisances: Option<Nuisances>,
}

/// Two-sided normal critical value at `level`.
pub fn z_value(level: f64) -> f64 {
    normal::quantile(0.5 + 0.5 * level)
}

impl AteEstimate {
    /// `theta = mean(scores)`, `se = sd(scores)/√n` with the `n − 1` sample
    /// standard deviation, and a normal interval at `level`.
    pub fn from_scores(method: Method, scores: Vec<f64>, level: f64, diagnostics: Diagnostics) -> Result<Self> {
        let n = scores.len();
        if n < 2 {
            return Err(Error::Train("need at least two scores".into()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("confidence level must be in (0, 1), got {level}")));
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::Train(format!("non-finite score at observation {i}")));
        }
        let theta = scores.iter().sum::<f64>() / n as f64;
        let var = scores.iter().map(|v| (v - theta).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let z = z_value(level);
        Ok(AteEstimate {
            method,
            theta,
            se,
            ci_low: theta - z * se,
            ci_high: theta + z * se,
            level,
            diagnostics,
            scores,
            nuisances: None,
        })
    }
}

/// Nuisance learners for the IRM and SSM routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub propensity: PropensityKind,
    pub outcome: OutcomeKind,
    /// Probability floor ε: predictions are clipped into `[ε, 1 − ε]`.
    pub clip: f64,
    pub level: f64,
    /// Forest settings for forest-based nuisances; the seed is re-derived
    /// per fold and nuisance.
    pub forest: ForestConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            propensity: PropensityKind::Logistic,
            outcome: OutcomeKind::Forest,
            clip: 0.01,
            level: 0.95,
            forest: ForestConfig::default(),
        }
    }
}

impl LearnerConfig {
    /// Logistic propensities and per-arm least squares.
    pub fn parametric() -> Self {
        LearnerConfig { outcome: OutcomeKind::Linear, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::Config(format!("clip must be in (0, 0.5), got {}", self.clip)));
        }
        self.forest.validate()
    }

    fn forest_for(&self, fold: usize, role: u64) -> ForestConfig {
        ForestConfig { seed: rng::derive_seed(self.forest.seed, &[tags::FOLDS, fold as u64, role]), ..self.forest.clone() }
    }
}

/// Which population the selection-blind baseline treats as the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IrmSample {
    /// All rows, with the unobserved outcome recorded as 0 (`Y·S`).
    #[default]
    ZeroFilled,
    /// Only rows with `s = 1`, as if they were the population.
    SelectedOnly,
}

/// `α_s(w) = 1{d=1}·s/(p_1 π_s1) − 1{d=0}·s/((1 − p_1) π_s0)`.
#[inline]
pub fn plugin_alpha_short(p1: f64, pi_s1: f64, pi_s0: f64, d: u8, s: u8) -> f64 {
    if s == 0 {
        0.0
    } else if d == 1 {
        1.0 / (p1 * pi_s1)
    } else {
        -1.0 / ((1.0 - p1) * pi_s0)
    }
}

fn nuisance_view<'a>(data: &'a Dataset, y: &'a [f64]) -> NuisanceData<'a> {
    NuisanceData { x: data.x(), p: data.p(), d: data.d(), s: data.s(), y }
}

/// Selection-blind AIPW: `μ̂₁ − μ̂₀ + d(y − μ̂₁)/p̂₁ − (1 − d)(y − μ̂₀)/p̂₀`.
pub fn estimate_irm(data: &Dataset, folds: &FoldPlan, learners: &LearnerConfig, sample: IrmSample) -> Result<AteEstimate> {
    learners.validate()?;
    folds.validate_for(data)?;
    let y = data.y_filled();
    let ones = vec![1u8; data.n()];
    // Zero-filled: every row is an outcome row. Selected-only: restrict rows.
    let nd = match sample {
        IrmSample::ZeroFilled => NuisanceData { x: data.x(), p: data.p(), d: data.d(), s: &ones, y: &y },
        IrmSample::SelectedOnly => nuisance_view(data, &y),
    };
    let keep = |i: usize| sample == IrmSample::ZeroFilled || data.s()[i] == 1;
    let mut diag = Diagnostics::new(data, Some(folds));
    let mut nuis = Nuisances::with_len(data.n());
    let mut scores = vec![f64::NAN; data.n()];
    for f in 0..folds.k {
        let train: Vec<usize> = folds.train_rows(f).into_iter().filter(|&i| keep(i)).collect();
        let test: Vec<usize> = folds.test_rows(f).into_iter().filter(|&i| keep(i)).collect();
        let prop = PropensityModel::fit_treatment(&nd, &train, learners.propensity, learners.clip, &learners.forest_for(f, 1))?;
        let outcome = OutcomeModel::fit(&nd, &train, learners.outcome, &learners.forest_for(f, 2))?;
        for &i in &test {
            let x = data.row(i);
            let (p1, c) = prop.predict(1, x)?;
            diag.record_p1(prop.predict_raw(1, x)?, c);
            let (m1, m0) = (outcome.predict(1, x)?, outcome.predict(0, x)?);
            let d = data.d()[i] as f64;
            scores[i] = m1 - m0 + d * (y[i] - m1) / p1 - (1.0 - d) * (y[i] - m0) / (1.0 - p1);
            nuis.fold[i] = f;
            nuis.p1[i] = p1;
            nuis.g1[i] = m1;
            nuis.g0[i] = m0;
            nuis.alpha_hat[i] = if d == 1.0 { 1.0 / p1 } else { -1.0 / (1.0 - p1) };
        }
    }
    diag.finish();
    let scores: Vec<f64> = (0..data.n()).filter(|&i| keep(i)).map(|i| scores[i]).collect();
    let mut est = AteEstimate::from_scores(Method::Irm, scores, learners.level, diag)?;
    est.nuisances = Some(nuis);
    Ok(est)
}

/// Efficient-score estimator with selection propensities.
pub fn estimate_ssm(data: &Dataset, folds: &FoldPlan, learners: &LearnerConfig, hajek: bool) -> Result<AteEstimate> {
    learners.validate()?;
    folds.validate_for(data)?;
    let y = data.y_filled();
    let nd = nuisance_view(data, &y);
    let mut diag = Diagnostics::new(data, Some(folds));
    let mut nuis = Nuisances::with_len(data.n());
    let mut scores = vec![0.0; data.n()];
    for f in 0..folds.k {
        let train = folds.train_rows(f);
        let test = folds.test_rows(f);
        let prop = PropensityModel::fit_treatment(&nd, &train, learners.propensity, learners.clip, &learners.forest_for(f, 1))?;
        let sel = PropensityModel::fit_selection(&nd, &train, learners.propensity, learners.clip, &learners.forest_for(f, 3))?;
        let outcome = OutcomeModel::fit(&nd, &train, learners.outcome, &learners.forest_for(f, 2))?;
        let mut w1 = Vec::with_capacity(test.len());
        let mut w0 = Vec::with_capacity(test.len());
        for &i in &test {
            let x = data.row(i);
            let (p1, c) = prop.predict(1, x)?;
            diag.record_p1(prop.predict_raw(1, x)?, c);
            let (pi1, c1) = sel.predict(1, x)?;
            diag.record_pi(sel.predict_raw(1, x)?, c1);
            let (pi0, c0) = sel.predict(0, x)?;
            diag.record_pi(sel.predict_raw(0, x)?, c0);
            let (d, s) = (data.d()[i], data.s()[i]);
            nuis.fold[i] = f;
            nuis.p1[i] = p1;
            nuis.pi1[i] = pi1;
            nuis.pi0[i] = pi0;
            nuis.g1[i] = outcome.predict(1, x)?;
            nuis.g0[i] = outcome.predict(0, x)?;
            nuis.alpha_plugin[i] = plugin_alpha_short(p1, pi1, pi0, d, s);
            let sf = s as f64;
            w1.push(d as f64 * sf / (p1 * pi1));
            w0.push((1 - d) as f64 * sf / ((1.0 - p1) * pi0));
        }
        if hajek {
            for w in [&mut w1, &mut w0] {
                let mean = w.iter().sum::<f64>() / w.len() as f64;
                if mean > 0.0 {
                    w.iter_mut().for_each(|v| *v /= mean);
                }
            }
        }
        for (t, &i) in test.iter().enumerate() {
            let (m1, m0) = (nuis.g1[i], nuis.g0[i]);
            scores[i] = m1 - m0 + w1[t] * (y[i] - m1) - w0[t] * (y[i] - m0);
            nuis.alpha_hat[i] = w1[t] - w0[t];
        }
    }
    diag.finish();
    let mut est = AteEstimate::from_scores(Method::Ssm, scores, learners.level, diag)?;
    est.nuisances = Some(nuis);
    Ok(est)
}

/// Settings for the forest representer route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrConfig {
    pub feature_map: FeatureMapKind,
    pub forest: ForestConfig,
    pub level: f64,
}

impl Default for FrConfig {
    fn default() -> Self {
        FrConfig { feature_map: FeatureMapKind::ArmLinear, forest: ForestConfig::default(), level: 0.95 }
    }
}

/// Doubly robust score `ĝ(1,x) − ĝ(0,x) + α̂(z)·s·(y − ĝ(d,x))` with
/// out-of-fold forests.
pub fn estimate_fr(data: &Dataset, folds: &FoldPlan, cfg: &FrConfig) -> Result<AteEstimate> {
    folds.validate_for(data)?;
    let pairs = forest::fit(data, folds, cfg.feature_map, &cfg.forest)?;
    let mut nuis = Nuisances::with_len(data.n());
    for (f, pair) in pairs.iter().enumerate() {
        let test = folds.test_rows(f);
        let preds = pair.predict_rows(data.x(), data.p(), data.d(), data.s(), &test)?;
        for (&i, pr) in test.iter().zip(preds) {
            nuis.fold[i] = f;
            nuis.alpha_hat[i] = pr.alpha;
            nuis.g1[i] = pr.g1;
            nuis.g0[i] = pr.g0;
        }
    }
    let diag = Diagnostics { clip_rate: 0.0, ..Diagnostics::new(data, Some(folds)) };
    let scores = dr_scores(data, &nuis.alpha_hat, &nuis.g1, &nuis.g0)?;
    let mut est = AteEstimate::from_scores(Method::Fr, scores, cfg.level, diag)?;
    est.nuisances = Some(nuis);
    Ok(est)
}

/// Fills the propensity columns and the plug-in short representer of
/// `nuis` wherever they are `NaN`, using cross-fitted propensity models.
/// Values a method already produced are kept.
pub fn attach_plugin(nuis: &mut Nuisances, data: &Dataset, folds: &FoldPlan, learners: &LearnerConfig) -> Result<()> {
    learners.validate()?;
    folds.validate_for(data)?;
    let y = data.y_filled();
    let nd = nuisance_view(data, &y);
    for f in 0..folds.k {
        let train = folds.train_rows(f);
        let prop = PropensityModel::fit_treatment(&nd, &train, learners.propensity, learners.clip, &learners.forest_for(f, 1))?;
        let sel = PropensityModel::fit_selection(&nd, &train, learners.propensity, learners.clip, &learners.forest_for(f, 3))?;
        for i in folds.test_rows(f) {
            let x = data.row(i);
            if nuis.p1[i].is_nan() {
                nuis.p1[i] = prop.predict(1, x)?.0;
            }
            if nuis.pi1[i].is_nan() {
                nuis.pi1[i] = sel.predict(1, x)?.0;
            }
            if nuis.pi0[i].is_nan() {
                nuis.pi0[i] = sel.predict(0, x)?.0;
            }
            if nuis.alpha_plugin[i].is_nan() {
                nuis.alpha_plugin[i] = plugin_alpha_short(nuis.p1[i], nuis.pi1[i], nuis.pi0[i], data.d()[i], data.s()[i]);
            }
        }
    }
    Ok(())
}

/// One row of the nuisance export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceRow {
    pub row: usize,
    pub fold: usize,
    pub d: u8,
    pub s: u8,
    pub p1: f64,
    pub pi1: f64,
    pub pi0: f64,
    /// `ĝ(d_i, x_i)`.
    pub g: f64,
    pub g1: f64,
    pub g0: f64,
    pub alpha_hat: f64,
    pub alpha_plugin: f64,
    /// `s·(y − ĝ(d, x))`.
    pub residual: f64,
}

/// Per-observation nuisance table, one [`NuisanceRow`] per observation.
pub fn nuisance_rows(nuis: &Nuisances, data: &Dataset) -> Vec<NuisanceRow> {
    let res = nuis.residuals(data);
    (0..data.n())
        .map(|i| NuisanceRow {
            row: i,
            fold: nuis.fold[i],
            d: data.d()[i],
            s: data.s()[i],
            p1: nuis.p1[i],
            pi1: nuis.pi1[i],
            pi0: nuis.pi0[i],
            g: nuis.g_at(i, data.d()[i]),
            g1: nuis.g1[i],
            g0: nuis.g0[i],
            alpha_hat: nuis.alpha_hat[i],
            alpha_plugin: nuis.alpha_plugin[i],
            residual: res[i],
        })
        .collect()
}

/// Writes the nuisance table as CSV with full-precision floats; unused
/// entries are written as `NaN`.
pub fn write_nuisances<W: std::io::Write>(rows: &[NuisanceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "row", "fold", "d", "s", "p1", "pi1", "pi0", "g", "g1", "g0", "alpha_hat", "alpha_plugin", "residual",
    ])?;
    for r in rows {
        let mut rec = vec![r.row.to_string(), r.fold.to_string(), r.d.to_string(), r.s.to_string()];
        for v in [r.p1, r.pi1, r.pi0, r.g, r.g1, r.g0, r.alpha_hat, r.alpha_plugin, r.residual] {
            rec.push(format_f64(v));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_nuisances`].
pub fn read_nuisances<R: std::io::Read>(reader: R) -> Result<Vec<NuisanceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (line, rec) in r.deserialize().enumerate() {
        let row: NuisanceRow = rec.map_err(|e| Error::Parse { line: line + 2, msg: e.to_string() })?;
        out.push(row);
    }
    Ok(out)
}

/// Doubly robust scores from supplied nuisance values.
pub fn dr_scores(data: &Dataset, alpha: &[f64], g1: &[f64], g0: &[f64]) -> Result<Vec<f64>> {
    let n = data.n();
    for v in [alpha.len(), g1.len(), g0.len()] {
        if v != n {
            return Err(Error::Dimension { expected: n, got: v });
        }
    }
    Ok((0..n)
        .map(|i| {
            let m = g1[i] - g0[i];
            match data.y()[i] {
                Some(y) => {
                    let g = if data.d()[i] == 1 { g1[i] } else { g0[i] };
                    m + alpha[i] * (y - g)
                }
                None => m,
            }
        })
        .collect())
}

/// Doubly robust estimate with injected nuisances.
pub fn estimate_dr_with(data: &Dataset, alpha: &[f64], g1: &[f64], g0: &[f64], level: f64) -> Result<AteEstimate> {
    let scores = dr_scores(data, alpha, g1, g0)?;
    AteEstimate::from_scores(Method::Fr, scores, level, Diagnostics::new(data, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresenterCheck {
    /// `mean(α̂ · g(d, x, s))`.
    pub lhs: f64,
    /// `mean(g(1, x, 1) − g(0, x, 1))`.
    pub rhs: f64,
    /// Standard error of `lhs − rhs` from the per-observation differences.
    pub se: f64,
}

/// Empirical sides of the representer identity for a test function.
pub fn representer_check(alpha: &[f64], g_test: impl Fn(u8, &[f64], u8) -> f64, data: &Dataset) -> Result<RepresenterCheck> {
    let n = data.n();
    if alpha.len() != n {
        return Err(Error::Dimension { expected: n, got: alpha.len() });
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut diffs = Vec::with_capacity(n);
    for i in 0..n {
        let x = data.row(i);
        let a = alpha[i] * g_test(data.d()[i], x, data.s()[i]);
        let b = g_test(1, x, 1) - g_test(0, x, 1);
        lhs += a;
        rhs += b;
        diffs.push(a - b);
    }
    let nf = n as f64;
    let mean = (lhs - rhs) / nf;
    let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    Ok(RepresenterCheck { lhs: lhs / nf, rhs: rhs / nf, se: (var / nf).sqrt() })
}

/// Dispatch by method with default settings for the other routes.
pub fn estimate(data: &Dataset, folds: &FoldPlan, method: Method, learners: &LearnerConfig, fr: &FrConfig) -> Result<AteEstimate> {
    match method {
        Method::Irm => estimate_irm(data, folds, learners, IrmSample::ZeroFilled),
        Method::Ssm => estimate_ssm(data, folds, learners, true),
        Method::Fr => estimate_fr(data, folds, fr),
    }
}
