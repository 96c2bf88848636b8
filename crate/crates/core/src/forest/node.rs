//! Node-level sufficient statistics and the local moment solve.
//!
//! For a node with `n` rows, `J = (1/n) Σ r rᵀ` and `M = (1/n) Σ m(W; r)`.
//! With the block layout of [`FeatureMap`], `J` is block diagonal: block `b`
//! is `(1/n) Σ_{rows in b} q̃ q̃ᵀ` and `M_b = sign_b · (1/n) Σ_all q̃`. The
//! regression head solves the ridge normal equations with the same Gram
//! matrix, so one Cholesky factor per block serves both heads.
//!
//! Statistics are kept as sums. With `A_b = G_b + nλ I`:
//! * `β_b = A_b⁻¹ M_b`, Riesz criterion `n βᵀJβ = Σ_b βᵀM_b − nλ|β_b|²`;
//! * `γ_b = A_b⁻¹ c_b` with `c_b = Σ q̃ y`, regression criterion
//!   `Σ_b γᵀc_b − nλ|γ_b|²` (explained sum of squares).

use serde::{Deserialize, Serialize};

use super::feature_map::FeatureMap;
use crate::error::{Error, Result};
use crate::linalg;

/// Borrowed training data. `x` is row-major with `p` columns; `target` is
/// the regression label, read only on rows with `s = 1`.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub x: &'a [f64],
    pub p: usize,
    pub d: &'a [u8],
    pub s: &'a [u8],
    pub target: &'a [f64],
}

impl<'a> TrainView<'a> {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.s.len() != n || self.target.len() != n {
            return Err(Error::Dimension { expected: n, got: self.s.len().min(self.target.len()) });
        }
        if self.x.len() != n * self.p {
            return Err(Error::Dimension { expected: n * self.p, got: self.x.len() });
        }
        Ok(())
    }
}

pub(crate) const NO_BLOCK: u8 = u8::MAX;

/// Per-row local vectors and block ids, computed once per forest.
pub(crate) struct Prepared<'a> {
    pub k: usize,
    pub n_blocks: usize,
    pub q: Vec<f64>,
    pub block: Vec<u8>,
    pub view: TrainView<'a>,
}

impl<'a> Prepared<'a> {
    pub fn new(view: TrainView<'a>, fmap: &FeatureMap) -> Self {
        let k = fmap.block_dim();
        let n = view.n();
        let mut q = vec![0.0; n * k];
        let mut block = vec![NO_BLOCK; n];
        for i in 0..n {
            fmap.local_into(view.row(i), &mut q[i * k..(i + 1) * k]);
            if view.s[i] == 1 {
                block[i] = fmap.arm_block(view.d[i]) as u8;
            }
        }
        Prepared { k, n_blocks: fmap.n_blocks(), q, block, view }
    }

    #[inline]
    pub fn local(&self, i: usize) -> &[f64] {
        &self.q[i * self.k..(i + 1) * self.k]
    }
}

/// Sums over a set of rows. Only the lower triangle of each Gram block is
/// maintained; the Cholesky routine never reads the upper one.
#[derive(Debug, Clone)]
pub(crate) struct Stats {
    pub n: usize,
    pub count: Vec<usize>,
    pub gram: Vec<f64>,
    pub qsum: Vec<f64>,
    pub cross: Vec<f64>,
}

impl Stats {
    pub fn zeros(n_blocks: usize, k: usize) -> Self {
        Stats {
            n: 0,
            count: vec![0; n_blocks],
            gram: vec![0.0; n_blocks * k * k],
            qsum: vec![0.0; k],
            cross: vec![0.0; n_blocks * k],
        }
    }

    pub fn reset(&mut self) {
        self.n = 0;
        self.count.iter_mut().for_each(|c| *c = 0);
        self.gram.iter_mut().for_each(|v| *v = 0.0);
        self.qsum.iter_mut().for_each(|v| *v = 0.0);
        self.cross.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    pub fn add(&mut self, prep: &Prepared, i: usize) {
        let k = prep.k;
        let q = prep.local(i);
        self.n += 1;
        for t in 0..k {
            self.qsum[t] += q[t];
        }
        let b = prep.block[i];
        if b != NO_BLOCK {
            let b = b as usize;
            self.count[b] += 1;
            let y = prep.view.target[i];
            let g = &mut self.gram[b * k * k..(b + 1) * k * k];
            for r in 0..k {
                let qr = q[r];
                let row = &mut g[r * k..r * k + r + 1];
                for (c, slot) in row.iter_mut().enumerate() {
                    *slot += qr * q[c];
                }
            }
            let c = &mut self.cross[b * k..(b + 1) * k];
            for t in 0..k {
                c[t] += q[t] * y;
            }
        }
    }

    pub fn from_rows(prep: &Prepared, rows: &[usize]) -> Self {
        let mut st = Stats::zeros(prep.n_blocks, prep.k);
        for &i in rows {
            st.add(prep, i);
        }
        st
    }

    /// `self = total − left`.
    pub fn set_difference(&mut self, total: &Stats, left: &Stats) {
        self.n = total.n - left.n;
        for (o, (a, b)) in self.count.iter_mut().zip(total.count.iter().zip(&left.count)) {
            *o = a - b;
        }
        for (o, (a, b)) in self.gram.iter_mut().zip(total.gram.iter().zip(&left.gram)) {
            *o = a - b;
        }
        for (o, (a, b)) in self.qsum.iter_mut().zip(total.qsum.iter().zip(&left.qsum)) {
            *o = a - b;
        }
        for (o, (a, b)) in self.cross.iter_mut().zip(total.cross.iter().zip(&left.cross)) {
            *o = a - b;
        }
    }

    pub fn min_count(&self) -> usize {
        self.count.iter().copied().min().unwrap_or(0)
    }

    fn trace(&self, k: usize) -> f64 {
        let nb = self.count.len();
        (0..nb).map(|b| (0..k).map(|t| self.gram[b * k * k + t * k + t]).sum::<f64>()).sum()
    }
}

/// Ridge values tried in order, on the mean (per-row) scale: the start, then
/// ten-fold increases, six at most. A zero start is replaced by `1e-6 ·
/// max(tr(J)/dim, 1)` before escalating.
pub fn ridge_schedule(start: f64, trace_per_dim: f64) -> impl Iterator<Item = f64> {
    let base = if start > 0.0 { start } else { 1e-6 * trace_per_dim.max(1.0) };
    let first = if start > 0.0 { None } else { Some(0.0) };
    first.into_iter().chain((0..=6).map(move |e| base * 10f64.powi(e)))
}

/// Result of a node evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeValue {
    /// `n βᵀJβ`.
    pub riesz: f64,
    /// Explained sum of squares of the regression head.
    pub regression: f64,
    /// Ridge on the mean scale.
    pub ridge: f64,
}

pub(crate) struct Solver {
    k: usize,
    signs: Vec<f64>,
    l: Vec<f64>,
    rhs: Vec<f64>,
}

impl Solver {
    pub fn new(fmap: &FeatureMap) -> Self {
        let k = fmap.block_dim();
        Solver { k, signs: (0..fmap.n_blocks()).map(|b| fmap.block_sign(b)).collect(), l: vec![0.0; k * k], rhs: vec![0.0; k] }
    }

    /// Relative ridge `λ = ridge_rel · tr(J) / dim` for these statistics.
    pub fn relative_start(&self, st: &Stats, ridge_rel: f64) -> f64 {
        if st.n == 0 {
            return 0.0;
        }
        let dim = (self.k * self.signs.len()) as f64;
        ridge_rel * st.trace(self.k) / st.n as f64 / dim
    }

    /// Evaluates both criteria, escalating the ridge (mean scale, starting at
    /// `start`) until every block factorizes. Fills `beta`/`gamma` if given.
    pub fn evaluate(
        &mut self,
        st: &Stats,
        start: f64,
        mut out: Option<(&mut [f64], &mut [f64])>,
    ) -> Option<NodeValue> {
        if st.n == 0 {
            return None;
        }
        let k = self.k;
        let nf = st.n as f64;
        let dim = (k * self.signs.len()) as f64;
        let trace_per_dim = st.trace(k) / nf / dim;
        'ridge: for ridge in ridge_schedule(start, trace_per_dim) {
            let nl = nf * ridge;
            let mut riesz = 0.0;
            let mut regression = 0.0;
            for b in 0..self.signs.len() {
                let g = &st.gram[b * k * k..(b + 1) * k * k];
                if !linalg::cholesky_into(g, k, nl, &mut self.l) {
                    continue 'ridge;
                }
                let sign = self.signs[b];
                if sign != 0.0 {
                    for t in 0..k {
                        self.rhs[t] = sign * st.qsum[t];
                    }
                    linalg::cholesky_solve(&self.l, k, &mut self.rhs);
                    let mut bm = 0.0;
                    let mut bb = 0.0;
                    for t in 0..k {
                        bm += self.rhs[t] * sign * st.qsum[t];
                        bb += self.rhs[t] * self.rhs[t];
                    }
                    riesz += bm - nl * bb;
                    if let Some((beta, _)) = out.as_mut() {
                        beta[b * k..(b + 1) * k].copy_from_slice(&self.rhs);
                    }
                } else if let Some((beta, _)) = out.as_mut() {
                    beta[b * k..(b + 1) * k].iter_mut().for_each(|v| *v = 0.0);
                }
                let c = &st.cross[b * k..(b + 1) * k];
                self.rhs.copy_from_slice(c);
                linalg::cholesky_solve(&self.l, k, &mut self.rhs);
                let mut gc = 0.0;
                let mut gg = 0.0;
                for t in 0..k {
                    gc += self.rhs[t] * c[t];
                    gg += self.rhs[t] * self.rhs[t];
                }
                regression += gc - nl * gg;
                if let Some((_, gamma)) = out.as_mut() {
                    gamma[b * k..(b + 1) * k].copy_from_slice(&self.rhs);
                }
            }
            return Some(NodeValue { riesz, regression, ridge });
        }
        None
    }
}

/// Combined split criterion. `w = 0` is the pure Riesz criterion and `w = 1`
/// the pure regression criterion; in between the regression part is rescaled
/// by the parent's ratio `R_parent / Q_parent` so both terms are measured
/// relative to their parent values.
#[inline]
pub(crate) fn combine(riesz: f64, regression: f64, parent: &NodeValue, w: f64) -> f64 {
    if w <= 0.0 {
        return riesz;
    }
    if w >= 1.0 {
        return regression;
    }
    let scale = if parent.riesz > 0.0 && parent.regression > 0.0 { parent.riesz / parent.regression } else { 1.0 };
    (1.0 - w) * riesz + w * scale * regression
}

/// Local moment solution at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSolution {
    /// Row-major `dim × dim` mean Jacobian.
    pub j: Vec<f64>,
    pub m: Vec<f64>,
    pub beta: Vec<f64>,
    /// Regression coefficients sharing the Jacobian factorization.
    pub gamma: Vec<f64>,
    pub count: usize,
    pub ridge_used: f64,
}

impl NodeSolution {
    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Solves `(J + ridge·I) β = M` on `rows`, escalating the ridge tenfold up to
/// six times if the system is numerically singular.
pub fn solve_node(rows: &[usize], view: &TrainView, fmap: &FeatureMap, ridge: f64) -> Result<NodeSolution> {
    if rows.is_empty() {
        return Err(Error::Train("solve_node needs at least one row".into()));
    }
    view.validate()?;
    let prep = Prepared::new(*view, fmap);
    let st = Stats::from_rows(&prep, rows);
    let mut solver = Solver::new(fmap);
    let dim = fmap.dim();
    let mut beta = vec![0.0; dim];
    let mut gamma = vec![0.0; dim];
    let value = solver.evaluate(&st, ridge.max(0.0), Some((&mut beta, &mut gamma)));
    let Some(value) = value else {
        let last = ridge_schedule(ridge.max(0.0), 1.0).last().unwrap_or(0.0);
        return Err(Error::SingularNode { ridge: last });
    };
    let (j, m) = dense_moments(&st, fmap);
    Ok(NodeSolution { j, m, beta, gamma, count: st.n, ridge_used: value.ridge })
}

/// Dense mean `J` and `M` from block statistics.
fn dense_moments(st: &Stats, fmap: &FeatureMap) -> (Vec<f64>, Vec<f64>) {
    let k = fmap.block_dim();
    let dim = fmap.dim();
    let nf = st.n as f64;
    let mut j = vec![0.0; dim * dim];
    let mut m = vec![0.0; dim];
    for b in 0..fmap.n_blocks() {
        for r in 0..k {
            for c in 0..=r {
                let v = st.gram[b * k * k + r * k + c] / nf;
                j[(b * k + r) * dim + b * k + c] = v;
                j[(b * k + c) * dim + b * k + r] = v;
            }
            m[b * k + r] = fmap.block_sign(b) * st.qsum[r] / nf;
        }
    }
    (j, m)
}

/// Split criterion for sending `x[feature] <= threshold` left, to be
/// maximized. Returns `−∞` when a child has fewer than `min_leaf` selected
/// rows in some block or a child system stays singular.
#[allow(clippy::too_many_arguments)]
pub fn split_score(
    parent_rows: &[usize],
    feature: usize,
    threshold: f64,
    view: &TrainView,
    fmap: &FeatureMap,
    ridge_rel: f64,
    multitask_weight: f64,
    min_leaf: usize,
) -> f64 {
    let prep = Prepared::new(*view, fmap);
    let (left, right): (Vec<usize>, Vec<usize>) =
        parent_rows.iter().partition(|&&i| view.x[i * view.p + feature] <= threshold);
    if left.is_empty() || right.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut solver = Solver::new(fmap);
    let parent = Stats::from_rows(&prep, parent_rows);
    let Some(pv) = solver.evaluate(&parent, solver.relative_start(&parent, ridge_rel), None) else {
        return f64::NEG_INFINITY;
    };
    let mut total = (0.0, 0.0);
    for child in [&left, &right] {
        let st = Stats::from_rows(&prep, child);
        if st.min_count() < min_leaf.max(1) {
            return f64::NEG_INFINITY;
        }
        match solver.evaluate(&st, solver.relative_start(&st, ridge_rel), None) {
            Some(v) => {
                total.0 += v.riesz;
                total.1 += v.regression;
            }
            None => return f64::NEG_INFINITY,
        }
    }
    combine(total.0, total.1, &pv, multitask_weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view<'a>(x: &'a [f64], d: &'a [u8], s: &'a [u8], y: &'a [f64]) -> TrainView<'a> {
        TrainView { x, p: 1, d, s, target: y }
    }

    #[test]
    fn intercept_oracle() {
        let (x, d, s, y) = ([0.0; 3], [1, 0, 1], [1, 1, 0], [0.0; 3]);
        let sol = solve_node(&[0, 1, 2], &view(&x, &d, &s, &y), &FeatureMap::Intercepts, 0.0).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(sol.j, vec![third, 0.0, 0.0, third]);
        assert_eq!(sol.m, vec![1.0, -1.0]);
        assert!((sol.beta[0] - 3.0).abs() < 1e-12 && (sol.beta[1] + 3.0).abs() < 1e-12);
        assert_eq!(sol.ridge_used, 0.0);
    }

    #[test]
    fn zero_jacobian_uses_the_ridge() {
        let (x, d, s, y) = ([0.0; 3], [1, 0, 1], [0, 0, 0], [0.0; 3]);
        let v = view(&x, &d, &s, &y);
        let sol = solve_node(&[0, 1, 2], &v, &FeatureMap::Intercepts, 0.25).unwrap();
        assert!((sol.beta[0] - 4.0).abs() < 1e-13 && (sol.beta[1] + 4.0).abs() < 1e-13);
        let escalated = solve_node(&[0, 1, 2], &v, &FeatureMap::Intercepts, 0.0).unwrap();
        assert!(escalated.ridge_used > 0.0);
        assert!((escalated.beta[0] - 1.0 / escalated.ridge_used).abs() < 1e-6 / escalated.ridge_used);
    }

    #[test]
    fn duplicated_rows_match_weighting() {
        let x = [0.1, 0.7, 0.3, 0.9, 0.1, 0.7, 0.3, 0.9];
        let d = [1, 0, 1, 0, 1, 0, 1, 0];
        let s = [1, 1, 1, 1, 1, 1, 1, 1];
        let y = [1.0, 2.0, 0.5, 3.0, 1.0, 2.0, 0.5, 3.0];
        let v = TrainView { x: &x, p: 1, d: &d, s: &s, target: &y };
        let fmap = FeatureMap::ArmLinear { min: vec![0.0], max: vec![1.0] };
        let once = solve_node(&[0, 1, 2, 3], &v, &fmap, 1e-9).unwrap();
        let twice = solve_node(&[0, 1, 2, 3, 4, 5, 6, 7], &v, &fmap, 1e-9).unwrap();
        for (a, b) in once.beta.iter().zip(&twice.beta) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
        let res = linalg::relative_residual(&once.j, once.dim(), once.ridge_used, &once.beta, &once.m);
        assert!(res < 1e-10, "residual {res}");
    }

    #[test]
    fn uninformative_split_preserves_parent_score() {
        // Two identical copies of four rows; the split separates the copies.
        let x = [0.0, 0.2, 0.0, 0.4, 0.0, 0.6, 0.0, 0.8, 1.0, 0.2, 1.0, 0.4, 1.0, 0.6, 1.0, 0.8];
        let d = [1, 0, 1, 0, 1, 0, 1, 0];
        let s = [1, 1, 0, 1, 1, 1, 0, 1];
        let y = [1.0, 2.0, 0.0, 3.0, 1.0, 2.0, 0.0, 3.0];
        let v = TrainView { x: &x, p: 2, d: &d, s: &s, target: &y };
        let fmap = FeatureMap::Intercepts;
        let rows: Vec<usize> = (0..8).collect();
        let prep = Prepared::new(v, &fmap);
        let mut solver = Solver::new(&fmap);
        let parent = Stats::from_rows(&prep, &rows);
        let pv = solver.evaluate(&parent, solver.relative_start(&parent, 1e-6), None).unwrap();
        let score = split_score(&rows, 0, 0.5, &v, &fmap, 1e-6, 0.0, 1);
        assert!((score - pv.riesz).abs() < 1e-9 * pv.riesz, "{score} vs {}", pv.riesz);
    }

    #[test]
    fn weight_zero_is_pure_riesz() {
        let pv = NodeValue { riesz: 2.0, regression: 5.0, ridge: 0.0 };
        assert_eq!(combine(3.0, 7.0, &pv, 0.0), 3.0);
        assert_eq!(combine(3.0, 7.0, &pv, 1.0), 7.0);
        assert!((combine(3.0, 7.0, &pv, 0.5) - (1.5 + 0.5 * 0.4 * 7.0)).abs() < 1e-15);
    }
}
