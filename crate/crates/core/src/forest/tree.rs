use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::feature_map::FeatureMap;
use super::node::{combine, Prepared, Solver, Stats};
use super::ForestConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub count: usize,
    pub ridge_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf reached by `x`. The root is node 0.
    #[inline]
    pub fn leaf(&self, x: &[f64]) -> &Leaf {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf(leaf) => return leaf,
            }
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        while let Node::Split { feature, threshold, left, right } = &self.nodes[at] {
            at = if x[*feature] <= *threshold { *left } else { *right };
        }
        at
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf(_) => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

pub(crate) struct Grower<'a, 'p> {
    pub prep: &'a Prepared<'p>,
    pub fmap: &'a FeatureMap,
    pub cfg: &'a ForestConfig,
    pub mtry: usize,
    pub weight: f64,
    solver: Solver,
    left: Stats,
    right: Stats,
    order: Vec<usize>,
}

impl<'a, 'p> Grower<'a, 'p> {
    pub fn new(prep: &'a Prepared<'p>, fmap: &'a FeatureMap, cfg: &'a ForestConfig, mtry: usize, weight: f64) -> Self {
        Grower {
            prep,
            fmap,
            cfg,
            mtry,
            weight,
            solver: Solver::new(fmap),
            left: Stats::zeros(prep.n_blocks, prep.k),
            right: Stats::zeros(prep.n_blocks, prep.k),
            order: Vec::new(),
        }
    }

    fn min_leaf(&self) -> usize {
        self.cfg.min_leaf.max(1)
    }

    fn leaf_from_stats(&mut self, st: &Stats) -> Option<Leaf> {
        let dim = self.fmap.dim();
        let mut beta = vec![0.0; dim];
        let mut gamma = vec![0.0; dim];
        let start = self.solver.relative_start(st, self.cfg.ridge);
        let value = self.solver.evaluate(st, start, Some((&mut beta, &mut gamma)))?;
        Some(Leaf { beta, gamma, count: st.n, ridge_used: value.ridge })
    }

    /// Grows a tree on `rows`.
    pub fn grow(&mut self, rows: Vec<usize>, rng: &mut impl Rng) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        let mut stack = vec![(0usize, rows, 0usize)];
        nodes.push(Node::Leaf(Leaf { beta: vec![], gamma: vec![], count: 0, ridge_used: 0.0 }));
        while let Some((at, rows, depth)) = stack.pop() {
            let st = Stats::from_rows(self.prep, &rows);
            let split = if depth < self.cfg.max_depth && st.min_count() >= 2 * self.min_leaf() {
                self.best_split(&rows, &st, rng)
            } else {
                None
            };
            match split {
                Some(c) => {
                    let p = self.prep.view.p;
                    let x = self.prep.view.x;
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.into_iter().partition(|&i| x[i * p + c.feature] <= c.threshold);
                    let li = nodes.len();
                    nodes.push(Node::Leaf(Leaf { beta: vec![], gamma: vec![], count: 0, ridge_used: 0.0 }));
                    nodes.push(Node::Leaf(Leaf { beta: vec![], gamma: vec![], count: 0, ridge_used: 0.0 }));
                    nodes[at] = Node::Split { feature: c.feature, threshold: c.threshold, left: li, right: li + 1 };
                    // Right first so the left subtree is expanded next; the
                    // layout is deterministic either way.
                    stack.push((li + 1, r, depth + 1));
                    stack.push((li, l, depth + 1));
                }
                None => {
                    let leaf = self.leaf_from_stats(&st).unwrap_or_else(|| Leaf {
                        beta: vec![0.0; self.fmap.dim()],
                        gamma: vec![0.0; self.fmap.dim()],
                        count: st.n,
                        ridge_used: f64::NAN,
                    });
                    nodes[at] = Node::Leaf(leaf);
                }
            }
        }
        Tree { nodes }
    }

    fn best_split(&mut self, rows: &[usize], total: &Stats, rng: &mut impl Rng) -> Option<Candidate> {
        let start = self.solver.relative_start(total, self.cfg.ridge);
        let parent = self.solver.evaluate(total, start, None)?;
        let p = self.prep.view.p;
        let mut features = index::sample(rng, p, self.mtry.min(p)).into_vec();
        features.sort_unstable();
        let x = self.prep.view.x;
        let n = rows.len();
        let min_leaf = self.min_leaf();
        let mut best: Option<Candidate> = None;
        for &f in &features {
            self.order.clear();
            self.order.extend_from_slice(rows);
            self.order.sort_unstable_by(|&a, &b| x[a * p + f].total_cmp(&x[b * p + f]).then(a.cmp(&b)));
            if x[self.order[0] * p + f] == x[self.order[n - 1] * p + f] {
                continue;
            }
            // Candidate left sizes: every position for small nodes, else
            // evenly spaced ranks moved forward to the next value change.
            let n_cand = self.cfg.max_candidates.max(1).min(n - 1);
            let target = |c: usize| if n - 1 <= n_cand { c } else { (c * n) / (n_cand + 1) };
            let mut next_c = 1;
            let mut want = target(next_c).max(1);
            self.left.reset();
            for idx in 0..n - 1 {
                let i = self.order[idx];
                self.left.add(self.prep, i);
                let size = idx + 1;
                if size < want {
                    continue;
                }
                let (xl, xr) = (x[i * p + f], x[self.order[idx + 1] * p + f]);
                if xl == xr {
                    continue;
                }
                while next_c <= n_cand && target(next_c) <= size {
                    next_c += 1;
                }
                let last = next_c > n_cand;
                want = if last { usize::MAX } else { target(next_c) };
                if self.left.min_count() >= min_leaf {
                    self.right.set_difference(total, &self.left);
                    if self.right.min_count() < min_leaf {
                        // Right counts only shrink from here on.
                        break;
                    }
                    if let Some(score) = self.score_children(&parent) {
                        let better = match &best {
                            None => true,
                            Some(b) => score > b.score,
                        };
                        if better {
                            let mid = 0.5 * (xl + xr);
                            let threshold = if mid < xr { mid } else { xl };
                            best = Some(Candidate { score, feature: f, threshold });
                        }
                    }
                }
                if last {
                    break;
                }
            }
        }
        best
    }

    fn score_children(&mut self, parent: &super::node::NodeValue) -> Option<f64> {
        let ls = self.solver.relative_start(&self.left, self.cfg.ridge);
        let lv = self.solver.evaluate(&self.left, ls, None)?;
        let rs = self.solver.relative_start(&self.right, self.cfg.ridge);
        let rv = self.solver.evaluate(&self.right, rs, None)?;
        let score = combine(lv.riesz + rv.riesz, lv.regression + rv.regression, parent, self.weight);
        score.is_finite().then_some(score)
    }

    /// Replaces leaf coefficients with solutions on `est_rows`. Leaves whose
    /// estimation rows miss a block, or whose system stays singular, keep
    /// the structure-sample solution.
    pub fn reestimate(&mut self, tree: &mut Tree, est_rows: &[usize]) {
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
        for &i in est_rows {
            buckets[tree.leaf_index(self.prep.view.row(i))].push(i);
        }
        for (at, rows) in buckets.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let st = Stats::from_rows(self.prep, rows);
            if st.min_count() == 0 {
                continue;
            }
            if let Some(leaf) = self.leaf_from_stats(&st) {
                tree.nodes[at] = Node::Leaf(leaf);
            }
        }
    }
}
