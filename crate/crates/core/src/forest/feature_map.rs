use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which feature map a forest should use; bounds for scaling are taken from
/// the training rows when the forest is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMapKind {
    /// `q = [1]`, no treatment structure. Used for plain regression and
    /// probability forests; its moment vector is zero.
    Constant,
    /// `q = [d, 1 − d]`.
    Intercepts,
    /// `q = [d, 1 − d, d·x̃, (1 − d)·x̃]` with min-max scaled `x̃`.
    #[default]
    ArmLinear,
}

/// Local feature map `r(d, x, s) = s · q(d, x)`.
///
/// Every map used here places a row's features in exactly one block (the
/// row's treatment arm, or the single block of [`FeatureMapKind::Constant`])
/// and the block-local vector `q̃(x)` is the same for every block. The
/// Jacobian is therefore block diagonal, which the node solver exploits.
/// The full vector is laid out block after block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    Constant,
    Intercepts,
    ArmLinear { min: Vec<f64>, max: Vec<f64> },
}

impl FeatureMap {
    /// Builds the map for `kind`, scaling on the given rows of the
    /// row-major matrix `x`.
    pub fn fit(kind: FeatureMapKind, x: &[f64], p: usize, rows: &[usize]) -> Self {
        match kind {
            FeatureMapKind::Constant => FeatureMap::Constant,
            FeatureMapKind::Intercepts => FeatureMap::Intercepts,
            FeatureMapKind::ArmLinear => {
                let mut min = vec![f64::INFINITY; p];
                let mut max = vec![f64::NEG_INFINITY; p];
                for &i in rows {
                    for j in 0..p {
                        let v = x[i * p + j];
                        min[j] = min[j].min(v);
                        max[j] = max[j].max(v);
                    }
                }
                for j in 0..p {
                    if !min[j].is_finite() {
                        min[j] = 0.0;
                        max[j] = 0.0;
                    }
                }
                FeatureMap::ArmLinear { min, max }
            }
        }
    }

    pub fn kind(&self) -> FeatureMapKind {
        match self {
            FeatureMap::Constant => FeatureMapKind::Constant,
            FeatureMap::Intercepts => FeatureMapKind::Intercepts,
            FeatureMap::ArmLinear { .. } => FeatureMapKind::ArmLinear,
        }
    }

    pub fn n_blocks(&self) -> usize {
        match self {
            FeatureMap::Constant => 1,
            _ => 2,
        }
    }

    /// Length of the block-local vector `q̃(x)`.
    pub fn block_dim(&self) -> usize {
        match self {
            FeatureMap::Constant | FeatureMap::Intercepts => 1,
            FeatureMap::ArmLinear { min, .. } => 1 + min.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_blocks() * self.block_dim()
    }

    /// Covariate dimension the map expects, if it constrains it.
    pub fn expected_p(&self) -> Option<usize> {
        match self {
            FeatureMap::ArmLinear { min, .. } => Some(min.len()),
            _ => None,
        }
    }

    /// Coefficient of the block in the moment vector: `+1` for the treated
    /// arm, `−1` for control, `0` for the constant map.
    pub fn block_sign(&self, block: usize) -> f64 {
        match self {
            FeatureMap::Constant => 0.0,
            _ => {
                if block == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Block that carries `q(d, x)`, ignoring selection.
    #[inline]
    pub fn arm_block(&self, d: u8) -> usize {
        match self {
            FeatureMap::Constant => 0,
            _ => {
                if d == 1 {
                    0
                } else {
                    1
                }
            }
        }
    }

    /// Writes `q̃(x)` into `out` (length `block_dim`).
    #[inline]
    pub fn local_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        if let FeatureMap::ArmLinear { min, max } = self {
            for j in 0..min.len() {
                let range = max[j] - min[j];
                out[j + 1] = if range > 0.0 { ((x[j] - min[j]) / range).clamp(0.0, 1.0) } else { 0.0 };
            }
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.expected_p() {
            Some(p) if p != x.len() => Err(Error::Dimension { expected: p, got: x.len() }),
            _ => Ok(()),
        }
    }

    /// Full vector `r(d, x, s)`.
    pub fn eval(&self, d: u8, x: &[f64], s: u8) -> Vec<f64> {
        let k = self.block_dim();
        let mut out = vec![0.0; self.dim()];
        if s == 1 {
            let b = self.arm_block(d);
            self.local_into(x, &mut out[b * k..(b + 1) * k]);
        }
        out
    }

    /// `r(1, x, 1) − r(0, x, 1)`.
    pub fn moment_eval(&self, x: &[f64]) -> Vec<f64> {
        let k = self.block_dim();
        let mut local = vec![0.0; k];
        self.local_into(x, &mut local);
        let mut out = vec![0.0; self.dim()];
        for b in 0..self.n_blocks() {
            let sign = self.block_sign(b);
            for t in 0..k {
                out[b * k + t] = sign * local[t];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps() -> Vec<FeatureMap> {
        let x = [0.0, 10.0, 1.0, -10.0, 0.5, 0.0];
        vec![
            FeatureMap::Constant,
            FeatureMap::Intercepts,
            FeatureMap::fit(FeatureMapKind::ArmLinear, &x, 2, &[0, 1, 2]),
        ]
    }

    #[test]
    fn vanishes_off_selection_and_moment_is_difference() {
        for map in maps() {
            for x in [[0.2, 3.0], [5.0, -20.0]] {
                for d in 0..2 {
                    assert!(map.eval(d, &x, 0).iter().all(|&v| v == 0.0));
                }
                let diff: Vec<f64> =
                    map.eval(1, &x, 1).iter().zip(map.eval(0, &x, 1)).map(|(a, b)| a - b).collect();
                assert_eq!(map.moment_eval(&x), diff);
            }
        }
    }

    #[test]
    fn arm_linear_layout() {
        let map = &maps()[2];
        assert_eq!(map.dim(), 6);
        assert_eq!(map.eval(1, &[0.5, 0.0], 1), vec![1.0, 0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(map.eval(0, &[0.5, 0.0], 1), vec![0.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        assert!(map.check_dim(&[1.0]).is_err());
    }
}
