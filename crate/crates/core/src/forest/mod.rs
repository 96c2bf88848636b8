//! Local-moment random forest (ForestRiesz).
//!
//! Each leaf stores the solution `β` of `J β = M` for the Riesz moment of the
//! treatment-effect functional, together with regression coefficients `γ`
//! for the outcome head. Trees split on covariates only; treatment and
//! selection enter through the feature map.

mod feature_map;
mod node;
mod tree;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use feature_map::{FeatureMap, FeatureMapKind};
pub use node::{ridge_schedule, solve_node, split_score, NodeSolution, TrainView};
pub use tree::{Leaf, Node, Tree};

use crate::data::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use node::Prepared;

pub const FORMAT: &str = "moment-forest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Minimum selected rows per treatment arm in every leaf (per block; for
    /// the constant map, rows in the leaf).
    pub min_leaf: usize,
    pub max_depth: usize,
    /// Fraction of training rows drawn without replacement for each tree.
    pub subsample_fraction: f64,
    /// Covariates tried per split; `None` means `min(p, ⌈√p⌉ + 20)`.
    pub mtry: Option<usize>,
    /// Relative Jacobian ridge: the node ridge starts at
    /// `ridge · tr(J) / dim` and escalates tenfold while singular.
    pub ridge: f64,
    /// Grow structure on one half of each subsample, fit leaves on the other.
    pub honest: bool,
    /// Weight of the regression criterion in the split score; 0 is the pure
    /// Riesz criterion.
    pub multitask_weight: f64,
    /// Train separate single-task forests for the representer (weight 0) and
    /// the outcome regression (weight 1) instead of one shared structure.
    pub separate_heads: bool,
    /// Upper bound on candidate thresholds scanned per covariate and node.
    pub max_candidates: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            min_leaf: 25,
            max_depth: 20,
            subsample_fraction: 0.5,
            mtry: None,
            ridge: 1e-6,
            honest: false,
            multitask_weight: 0.5,
            separate_heads: false,
            max_candidates: 32,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!("subsample_fraction must be in (0, 1], got {}", self.subsample_fraction)));
        }
        if !(0.0..=1.0).contains(&self.multitask_weight) {
            return Err(Error::Config(format!("multitask_weight must be in [0, 1], got {}", self.multitask_weight)));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config(format!("ridge must be finite and >= 0, got {}", self.ridge)));
        }
        if self.mtry == Some(0) {
            return Err(Error::Config("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| ((p as f64).sqrt().ceil() as usize + 20).min(p)).clamp(1, p.max(1))
    }
}

/// Fitted forest. Immutable after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentForest {
    pub format: String,
    pub version: u32,
    pub config: ForestConfig,
    /// Split-score weight the forest was actually grown with.
    pub weight: f64,
    pub p: usize,
    pub feature_map: FeatureMap,
    pub trees: Vec<Tree>,
}

/// Ensemble prediction at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// `α̂(d, x, s)`.
    pub alpha: f64,
    /// `ĝ(1, x)`.
    pub g1: f64,
    /// `ĝ(0, x)`.
    pub g0: f64,
}

impl MomentForest {
    /// Trains on `rows` of `view`. The split score uses `weight` between the
    /// Riesz (0) and regression (1) criteria.
    pub fn train(view: &TrainView, rows: &[usize], kind: FeatureMapKind, cfg: &ForestConfig, weight: f64) -> Result<Self> {
        cfg.validate()?;
        view.validate()?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Config(format!("split weight must be in [0, 1], got {weight}")));
        }
        let fmap = FeatureMap::fit(kind, view.x, view.p, rows);
        let prep = Prepared::new(*view, &fmap);
        let mut counts = vec![0usize; fmap.n_blocks()];
        for &i in rows {
            if prep.block[i] != node::NO_BLOCK {
                counts[prep.block[i] as usize] += 1;
            }
        }
        let need = cfg.min_leaf.max(1);
        if let Some(c) = counts.iter().find(|&&c| c < need) {
            return Err(Error::Train(format!(
                "only {c} selected training rows in some treatment arm, fewer than min_leaf = {need}"
            )));
        }
        let mtry = cfg.mtry_for(view.p);
        let m = ((rows.len() as f64) * cfg.subsample_fraction).round().max(1.0) as usize;
        let trees: Vec<Tree> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(cfg.seed, &[tags::TREE, t as u64]);
                let mut pool = rows.to_vec();
                let (sample, _) = pool.partial_shuffle(&mut rng, m.min(rows.len()));
                let mut sample = sample.to_vec();
                let mut grower = tree::Grower::new(&prep, &fmap, cfg, mtry, weight);
                if cfg.honest && sample.len() >= 2 {
                    let est = sample.split_off(sample.len() / 2);
                    let mut tree = grower.grow(sample, &mut rng);
                    grower.reestimate(&mut tree, &est);
                    tree
                } else {
                    grower.grow(sample, &mut rng)
                }
            })
            .collect();
        Ok(MomentForest {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            config: cfg.clone(),
            weight,
            p: view.p,
            feature_map: fmap,
            trees,
        })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::Dimension { expected: self.p, got: x.len() });
        }
        Ok(())
    }

    /// Tree-averaged prediction; `alpha` is exactly 0 when `s = 0`.
    pub fn predict(&self, d: u8, x: &[f64], s: u8) -> Result<Prediction> {
        self.check(x)?;
        Ok(self.predict_unchecked(d, x, s))
    }

    fn predict_unchecked(&self, d: u8, x: &[f64], s: u8) -> Prediction {
        let fmap = &self.feature_map;
        let k = fmap.block_dim();
        let mut q = vec![0.0; k];
        fmap.local_into(x, &mut q);
        let (bd, b1, b0) = (fmap.arm_block(d), fmap.arm_block(1), fmap.arm_block(0));
        let dot = |v: &[f64], b: usize| -> f64 { q.iter().zip(&v[b * k..(b + 1) * k]).map(|(a, c)| a * c).sum() };
        let (mut a, mut g1, mut g0) = (0.0, 0.0, 0.0);
        for tree in &self.trees {
            let leaf = tree.leaf(x);
            if s == 1 {
                a += dot(&leaf.beta, bd);
            }
            g1 += dot(&leaf.gamma, b1);
            g0 += dot(&leaf.gamma, b0);
        }
        let t = self.trees.len() as f64;
        Prediction { alpha: if s == 1 { a / t } else { 0.0 }, g1: g1 / t, g0: g0 / t }
    }

    pub fn predict_alpha(&self, d: u8, x: &[f64], s: u8) -> Result<f64> {
        Ok(self.predict(d, x, s)?.alpha)
    }

    pub fn predict_g(&self, d: u8, x: &[f64]) -> Result<f64> {
        let pr = self.predict(d, x, 1)?;
        Ok(if d == 1 { pr.g1 } else { pr.g0 })
    }

    /// Predictions for `rows` of a row-major matrix, in row order.
    pub fn predict_rows(&self, x: &[f64], p: usize, d: &[u8], s: &[u8], rows: &[usize]) -> Result<Vec<Prediction>> {
        if p != self.p {
            return Err(Error::Dimension { expected: self.p, got: p });
        }
        Ok(rows.par_iter().map(|&i| self.predict_unchecked(d[i], &x[i * p..(i + 1) * p], s[i])).collect())
    }

    /// Splits used anywhere in the forest, as covariate indices.
    pub fn split_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let forest: MomentForest = serde_json::from_str(text)?;
        if forest.format != FORMAT || forest.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported forest format {} v{} (expected {FORMAT} v{FORMAT_VERSION})",
                forest.format, forest.version
            )));
        }
        Ok(forest)
    }
}

/// Per-fold representer and outcome heads. With a shared structure `g` is
/// `None` and both heads come from `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestPair {
    pub alpha: MomentForest,
    pub g: Option<MomentForest>,
}

impl ForestPair {
    pub fn g_forest(&self) -> &MomentForest {
        self.g.as_ref().unwrap_or(&self.alpha)
    }

    /// `(α̂(d, x, s), ĝ(1, x), ĝ(0, x))` for the given rows.
    pub fn predict_rows(&self, x: &[f64], p: usize, d: &[u8], s: &[u8], rows: &[usize]) -> Result<Vec<Prediction>> {
        let mut out = self.alpha.predict_rows(x, p, d, s, rows)?;
        if let Some(g) = &self.g {
            let gp = g.predict_rows(x, p, d, s, rows)?;
            for (o, q) in out.iter_mut().zip(gp) {
                o.g1 = q.g1;
                o.g0 = q.g0;
            }
        }
        Ok(out)
    }
}

/// Trains a forest pair for one set of training rows.
pub fn fit_pair(view: &TrainView, rows: &[usize], kind: FeatureMapKind, cfg: &ForestConfig) -> Result<ForestPair> {
    if cfg.separate_heads {
        let alpha = MomentForest::train(view, rows, kind, cfg, 0.0)?;
        let g = MomentForest::train(view, rows, kind, cfg, 1.0)?;
        Ok(ForestPair { alpha, g: Some(g) })
    } else {
        Ok(ForestPair { alpha: MomentForest::train(view, rows, kind, cfg, cfg.multitask_weight)?, g: None })
    }
}

/// Cross-fitted forests: entry `f` is trained on every row outside fold `f`.
pub fn fit(data: &Dataset, folds: &FoldPlan, kind: FeatureMapKind, cfg: &ForestConfig) -> Result<Vec<ForestPair>> {
    folds.validate_for(data)?;
    let y = data.y_filled();
    let view = TrainView { x: data.x(), p: data.p(), d: data.d(), s: data.s(), target: &y };
    (0..folds.k)
        .map(|f| {
            let fold_cfg = ForestConfig { seed: rng::derive_seed(cfg.seed, &[tags::FOLDS, f as u64]), ..cfg.clone() };
            fit_pair(&view, &folds.train_rows(f), kind, &fold_cfg)
        })
        .collect()
}
