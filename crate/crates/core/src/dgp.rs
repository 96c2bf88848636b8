//! Simulation designs.
//!
//! * [`gen_mar`]: Gaussian covariates, probit treatment and probit selection
//!   depending on treatment and covariates only (selection is ignorable given
//!   `(D, X)`), homogeneous effect `theta0`.
//! * [`gen_confounded`]: discrete `X` and a discrete latent `A` that shifts
//!   both selection and outcomes. Every long and short quantity is available
//!   in closed form through [`OracleTables`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarDgpConfig {
    pub n: usize,
    pub p: usize,
    pub theta0: f64,
    pub beta0: Vec<f64>,
    /// Standard deviation of each covariate: `X ~ N(0, sigma_x² I)`.
    pub sigma_x: f64,
    pub seed: u64,
}

/// Coefficient profile `β_j = 0.4 / j²`, j = 1..=p.
pub fn default_beta(p: usize) -> Vec<f64> {
    (1..=p).map(|j| 0.4 / (j * j) as f64).collect()
}

impl MarDgpConfig {
    pub const DEFAULT_P: usize = 5;

    pub fn new(n: usize, seed: u64) -> Self {
        MarDgpConfig {
            n,
            p: Self::DEFAULT_P,
            theta0: 1.0,
            beta0: default_beta(Self::DEFAULT_P),
            sigma_x: 1.0,
            seed,
        }
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self.beta0 = default_beta(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 1 {
            return Err(Error::Config("MAR design needs n >= 1 and p >= 1".into()));
        }
        if self.beta0.len() != self.p {
            return Err(Error::Dimension { expected: self.p, got: self.beta0.len() });
        }
        if !(self.sigma_x > 0.0) || !self.sigma_x.is_finite() {
            return Err(Error::Config(format!("sigma_x must be positive, got {}", self.sigma_x)));
        }
        if !self.theta0.is_finite() || self.beta0.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("theta0 and beta0 must be finite".into()));
        }
        Ok(())
    }
}

fn normals(seed: u64, tag: u64, len: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[tag]);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws from the MAR design. Each variable has its own random stream, so
/// e.g. changing the outcome law leaves covariates, treatment and selection
/// unchanged.
pub fn gen_mar(cfg: &MarDgpConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let x: Vec<f64> = normals(cfg.seed, tags::COVARIATES, n * p).into_iter().map(|z| z * cfg.sigma_x).collect();
    let w = normals(cfg.seed, tags::TREATMENT, n);
    let v = normals(cfg.seed, tags::SELECTION, n);
    let u = normals(cfg.seed, tags::OUTCOME, n);
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let xb: f64 = x[i * p..(i + 1) * p].iter().zip(&cfg.beta0).map(|(a, b)| a * b).sum();
        let di = (xb + w[i] > 0.0) as u8;
        let si = (di as f64 + xb + v[i] > 0.0) as u8;
        d.push(di);
        s.push(si);
        y.push((si == 1).then(|| cfg.theta0 * di as f64 + xb + u[i]));
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Dataset::new(y, d, s, x, names)
}

/// Discrete design with a latent confounder of selection and outcomes.
///
/// Tables are indexed `[d][x][a]` (flattened as `(d * nx + x) * na + a`) for
/// the long selection probabilities and outcome means, `[x]` for the
/// treatment propensity and `[x][a]` for `P(A = a | X = x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundedDgpConfig {
    pub n: usize,
    pub x_levels: Vec<f64>,
    pub x_probs: Vec<f64>,
    pub a_levels: Vec<f64>,
    pub a_probs: Vec<Vec<f64>>,
    pub treat_probs: Vec<f64>,
    pub sel_probs: Vec<f64>,
    pub outcome_means: Vec<f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl ConfoundedDgpConfig {
    /// Two covariate levels, latent `A ∈ {−1, +1}` whose law depends on `X`,
    /// and tables in which `A` raises both selection and outcomes.
    pub fn example(n: usize, seed: u64) -> Self {
        ConfoundedDgpConfig {
            n,
            x_levels: vec![0.0, 1.0],
            x_probs: vec![0.6, 0.4],
            a_levels: vec![-1.0, 1.0],
            a_probs: vec![vec![0.5, 0.5], vec![0.3, 0.7]],
            treat_probs: vec![0.4, 0.65],
            // [d=0][x=0][a], [d=0][x=1][a], [d=1][x=0][a], [d=1][x=1][a]
            sel_probs: vec![0.3, 0.7, 0.45, 0.8, 0.5, 0.85, 0.35, 0.9],
            outcome_means: vec![0.0, 0.2, 0.5, 0.6, 1.0, 2.5, 1.8, 2.9],
            noise_sd: 1.0,
            seed,
        }
    }

    fn nx(&self) -> usize {
        self.x_levels.len()
    }

    fn na(&self) -> usize {
        self.a_levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, na) = (self.nx(), self.na());
        if nx == 0 || na == 0 {
            return Err(Error::Config("x_levels and a_levels must be non-empty".into()));
        }
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        let check_len = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::Config(format!("table `{name}` has {got} entries, expected {want}")))
            } else {
                Ok(())
            }
        };
        check_len("x_probs", self.x_probs.len(), nx)?;
        check_len("a_probs", self.a_probs.len(), nx)?;
        for row in &self.a_probs {
            check_len("a_probs row", row.len(), na)?;
        }
        check_len("treat_probs", self.treat_probs.len(), nx)?;
        check_len("sel_probs", self.sel_probs.len(), 2 * nx * na)?;
        check_len("outcome_means", self.outcome_means.len(), 2 * nx * na)?;
        let interior = |v: &f64| *v > 0.0 && *v < 1.0;
        if !self.treat_probs.iter().all(interior) || !self.sel_probs.iter().all(interior) {
            return Err(Error::Config("treatment and selection probabilities must lie in (0, 1)".into()));
        }
        let is_law = |ps: &[f64]| ps.iter().all(interior) && (ps.iter().sum::<f64>() - 1.0).abs() < 1e-12;
        if !is_law(&self.x_probs) && !(nx == 1 && self.x_probs[0] == 1.0) {
            return Err(Error::Config("x_probs must be a probability vector with entries in (0, 1)".into()));
        }
        for row in &self.a_probs {
            if !is_law(row) && !(na == 1 && row[0] == 1.0) {
                return Err(Error::Config("each a_probs row must be a probability vector".into()));
            }
        }
        if !(self.noise_sd >= 0.0) || self.outcome_means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("noise_sd must be >= 0 and outcome means finite".into()));
        }
        Ok(())
    }
}

/// Exact long and short quantities of a [`ConfoundedDgpConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTables {
    pub x_levels: Vec<f64>,
    pub x_probs: Vec<f64>,
    pub a_levels: Vec<f64>,
    pub a_probs: Vec<Vec<f64>>,
    /// `p_1(x)`.
    pub p1: Vec<f64>,
    /// `π_0(d, x, a)`, indexed `[d][x][a]`.
    pub pi0: Vec<Vec<Vec<f64>>>,
    /// `g_0(d, x, a)`.
    pub g0: Vec<Vec<Vec<f64>>>,
    /// `π_s(d, x) = Σ_a π_0(d, x, a) P(a | x)`.
    pub pi_s: Vec<Vec<f64>>,
    /// `g_s(d, x) = E[Y | D = d, X = x, S = 1]`.
    pub g_s: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub theta0: f64,
    pub theta_s: f64,
}

/// Factors of the omitted-variable-bias decomposition, all enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasComponents {
    /// `θ_0 − θ_s`.
    pub bias: f64,
    /// `E[(g_0 − g_s)(α_0 − α_s)]`.
    pub covariance: f64,
    /// `E[S (Y − g_s)²]`.
    pub residual_var: f64,
    pub e_alpha_s2: f64,
    pub e_alpha0_2: f64,
    /// `S̃² = E[S (Y − g_s)²] · E[α_s²]`.
    pub s2: f64,
    pub cy2: f64,
    pub cs2: f64,
    pub rho: f64,
}

impl OracleTables {
    pub fn from_config(cfg: &ConfoundedDgpConfig) -> Result<Self> {
        cfg.validate()?;
        let (nx, na) = (cfg.nx(), cfg.na());
        let idx = |d: usize, x: usize, a: usize| (d * nx + x) * na + a;
        let mut pi0 = vec![vec![vec![0.0; na]; nx]; 2];
        let mut g0 = vec![vec![vec![0.0; na]; nx]; 2];
        let mut pi_s = vec![vec![0.0; nx]; 2];
        let mut g_s = vec![vec![0.0; nx]; 2];
        for d in 0..2 {
            for x in 0..nx {
                let mut num = 0.0;
                for a in 0..na {
                    pi0[d][x][a] = cfg.sel_probs[idx(d, x, a)];
                    g0[d][x][a] = cfg.outcome_means[idx(d, x, a)];
                    let w = pi0[d][x][a] * cfg.a_probs[x][a];
                    pi_s[d][x] += w;
                    num += w * g0[d][x][a];
                }
                g_s[d][x] = num / pi_s[d][x];
            }
        }
        let mut theta0 = 0.0;
        let mut theta_s = 0.0;
        for x in 0..nx {
            for a in 0..na {
                theta0 += cfg.x_probs[x] * cfg.a_probs[x][a] * (g0[1][x][a] - g0[0][x][a]);
            }
            theta_s += cfg.x_probs[x] * (g_s[1][x] - g_s[0][x]);
        }
        Ok(OracleTables {
            x_levels: cfg.x_levels.clone(),
            x_probs: cfg.x_probs.clone(),
            a_levels: cfg.a_levels.clone(),
            a_probs: cfg.a_probs.clone(),
            p1: cfg.treat_probs.clone(),
            pi0,
            g0,
            pi_s,
            g_s,
            noise_sd: cfg.noise_sd,
            theta0,
            theta_s,
        })
    }

    pub fn nx(&self) -> usize {
        self.x_levels.len()
    }

    pub fn na(&self) -> usize {
        self.a_levels.len()
    }

    pub fn p_d(&self, d: u8, x: usize) -> f64 {
        if d == 1 {
            self.p1[x]
        } else {
            1.0 - self.p1[x]
        }
    }

    /// Index of a covariate value in the support.
    pub fn x_index(&self, value: f64) -> Option<usize> {
        self.x_levels.iter().position(|&v| v == value)
    }

    /// Long representer `α_0(d, x, a, s)`.
    pub fn alpha0(&self, d: u8, x: usize, a: usize, s: u8) -> f64 {
        if s == 0 {
            return 0.0;
        }
        let w = 1.0 / (self.p_d(d, x) * self.pi0[d as usize][x][a]);
        if d == 1 {
            w
        } else {
            -w
        }
    }

    /// Short representer `α_s(d, x, s)`.
    pub fn alpha_s(&self, d: u8, x: usize, s: u8) -> f64 {
        if s == 0 {
            return 0.0;
        }
        let w = 1.0 / (self.p_d(d, x) * self.pi_s[d as usize][x]);
        if d == 1 {
            w
        } else {
            -w
        }
    }

    /// Probability of the cell `(x, a, d, s = 1)`.
    fn selected_cell_prob(&self, x: usize, a: usize, d: u8) -> f64 {
        self.x_probs[x] * self.a_probs[x][a] * self.p_d(d, x) * self.pi0[d as usize][x][a]
    }

    /// `E[f(d, x, a)]` over selected cells, i.e. `E[S · f]`.
    pub fn expect_selected(&self, f: impl Fn(u8, usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        for x in 0..self.nx() {
            for a in 0..self.na() {
                for d in 0..2u8 {
                    total += self.selected_cell_prob(x, a, d) * f(d, x, a);
                }
            }
        }
        total
    }

    /// `E[h(D, X, S)]` over the observed law.
    pub fn expect_observed(&self, h: impl Fn(u8, usize, u8) -> f64) -> f64 {
        let mut total = 0.0;
        for x in 0..self.nx() {
            for d in 0..2u8 {
                let pdx = self.x_probs[x] * self.p_d(d, x);
                let ps = self.pi_s[d as usize][x];
                total += pdx * (ps * h(d, x, 1) + (1.0 - ps) * h(d, x, 0));
            }
        }
        total
    }

    /// `E[α_s²]` in closed form: `Σ_x P(x) Σ_d 1 / (p_d(x) π_s(d, x))`.
    pub fn e_alpha_s2_closed_form(&self) -> f64 {
        (0..self.nx())
            .map(|x| self.x_probs[x] * (0..2u8).map(|d| 1.0 / (self.p_d(d, x) * self.pi_s[d as usize][x])).sum::<f64>())
            .sum()
    }

    pub fn components(&self) -> BiasComponents {
        let covariance = self.expect_selected(|d, x, a| {
            (self.g0[d as usize][x][a] - self.g_s[d as usize][x]) * (self.alpha0(d, x, a, 1) - self.alpha_s(d, x, 1))
        });
        let dg2 = self.expect_selected(|d, x, a| (self.g0[d as usize][x][a] - self.g_s[d as usize][x]).powi(2));
        let p_sel = self.expect_selected(|_, _, _| 1.0);
        let residual_var = dg2 + p_sel * self.noise_sd * self.noise_sd;
        let e_alpha_s2 = self.expect_selected(|d, x, _| self.alpha_s(d, x, 1).powi(2));
        let e_alpha0_2 = self.expect_selected(|d, x, a| self.alpha0(d, x, a, 1).powi(2));
        let da2 = self.expect_selected(|d, x, a| (self.alpha0(d, x, a, 1) - self.alpha_s(d, x, 1)).powi(2));
        let denom = (dg2 * da2).sqrt();
        let rho = if denom > 0.0 { covariance / denom } else { 0.0 };
        BiasComponents {
            bias: self.theta0 - self.theta_s,
            covariance,
            residual_var,
            e_alpha_s2,
            e_alpha0_2,
            s2: residual_var * e_alpha_s2,
            cy2: if residual_var > 0.0 { dg2 / residual_var } else { 0.0 },
            cs2: e_alpha0_2 / e_alpha_s2 - 1.0,
            rho,
        }
    }

    /// Target of AIPW run on the selected subsample as if it were the
    /// population: `E[g_s(1, X) − g_s(0, X) | S = 1]`.
    pub fn selected_sample_ate(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for x in 0..self.nx() {
            let sel = self.p1[x] * self.pi_s[1][x] + (1.0 - self.p1[x]) * self.pi_s[0][x];
            num += self.x_probs[x] * sel * (self.g_s[1][x] - self.g_s[0][x]);
            den += self.x_probs[x] * sel;
        }
        num / den
    }

    /// `P(D = 1 | X = x, S = 1)`.
    pub fn p1_selected(&self, x: usize) -> f64 {
        let a = self.p1[x] * self.pi_s[1][x];
        a / (a + (1.0 - self.p1[x]) * self.pi_s[0][x])
    }

    /// Target of AIPW on the full sample with the zero-filled outcome `S·Y`:
    /// `E[π_s(1, X) g_s(1, X) − π_s(0, X) g_s(0, X)]`.
    pub fn zero_filled_ate(&self) -> f64 {
        (0..self.nx())
            .map(|x| self.x_probs[x] * (self.pi_s[1][x] * self.g_s[1][x] - self.pi_s[0][x] * self.g_s[0][x]))
            .sum()
    }
}

/// Draw from the confounded design with the latent indices retained.
#[derive(Debug, Clone)]
pub struct ConfoundedSample {
    pub data: Dataset,
    pub oracle: OracleTables,
    pub x_index: Vec<usize>,
    pub a_index: Vec<usize>,
}

fn draw_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn gen_confounded(cfg: &ConfoundedDgpConfig) -> Result<ConfoundedSample> {
    let oracle = OracleTables::from_config(cfg)?;
    let n = cfg.n;
    let mut rx = rng::stream(cfg.seed, &[tags::COVARIATES]);
    let mut ra = rng::stream(cfg.seed, &[tags::LATENT]);
    let mut rd = rng::stream(cfg.seed, &[tags::TREATMENT]);
    let mut rs = rng::stream(cfg.seed, &[tags::SELECTION]);
    let mut ry = rng::stream(cfg.seed, &[tags::OUTCOME]);
    let mut x_index = Vec::with_capacity(n);
    let mut a_index = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = draw_categorical(&mut rx, &cfg.x_probs);
        let ai = draw_categorical(&mut ra, &cfg.a_probs[xi]);
        let di = rd.random_bool(oracle.p1[xi]) as u8;
        let si = rs.random_bool(oracle.pi0[di as usize][xi][ai]) as u8;
        let noise: f64 = ry.sample(StandardNormal);
        x_index.push(xi);
        a_index.push(ai);
        x.push(cfg.x_levels[xi]);
        d.push(di);
        s.push(si);
        y.push((si == 1).then(|| oracle.g0[di as usize][xi][ai] + cfg.noise_sd * noise));
    }
    let data = Dataset::new(y, d, s, x, vec!["x".into()])?;
    Ok(ConfoundedSample { data, oracle, x_index, a_index })
}
