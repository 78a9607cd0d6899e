//! Binary-split trees grown by weighted sum-of-squares reduction.
//!
//! For 0/1 targets the reduction equals half the Gini decrease, so the same
//! grower serves classification trees (leaf = positive share) and the
//! residual trees of gradient boosting (leaf = Newton step).

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::check_xy;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// CART classification tree on all features, Gini splits, leaves hold
    /// the positive share.
    pub fn fit_classifier(x: &[Vec<f64>], y: &[u8], max_depth: usize) -> Result<Self> {
        check_xy(x, y)?;
        if max_depth < 1 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        let cols = Columns::new(x);
        let target: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let weight = vec![1.0; y.len()];
        Ok(grow(&cols, &target, &weight, &|m: &[usize]| share(&target, &weight, m), max_depth, None))
    }
}

pub(crate) fn share(target: &[f64], weight: &[f64], members: &[usize]) -> f64 {
    let (s, w) = members.iter().fold((0.0, 0.0), |(s, w), &i| (s + weight[i] * target[i], w + weight[i]));
    s / w
}

/// Column-major copy with each column's row order presorted.
pub(crate) struct Columns {
    values: Vec<Vec<f64>>,
    order: Vec<Vec<usize>>,
}

impl Columns {
    pub(crate) fn new(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let values: Vec<Vec<f64>> = (0..d).map(|f| x.iter().map(|r| r[f]).collect()).collect();
        let order = values
            .iter()
            .map(|col| {
                let mut idx: Vec<usize> = (0..col.len()).collect();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { values, order }
    }

    pub(crate) fn width(&self) -> usize {
        self.values.len()
    }
}

struct Grower<'a, L> {
    cols: &'a Columns,
    target: &'a [f64],
    weight: &'a [f64],
    leaf: &'a L,
    max_depth: usize,
    features: Option<(usize, &'a mut StreamRng)>,
    nodes: Vec<TreeNode>,
    in_node: Vec<bool>,
}

const MIN_GAIN: f64 = 1e-12;

impl<L: Fn(&[usize]) -> f64> Grower<'_, L> {
    /// Drawn candidates first, then the remaining features as a fallback
    /// when no drawn feature separates the node.
    fn candidate_features(&mut self) -> (Vec<usize>, Vec<usize>) {
        let d = self.cols.width();
        match &mut self.features {
            Some((k, rng)) if *k < d => {
                let mut drawn = sample(*rng, d, *k).into_vec();
                drawn.sort_unstable();
                let rest = (0..d).filter(|f| drawn.binary_search(f).is_err()).collect();
                (drawn, rest)
            }
            _ => ((0..d).collect(), Vec::new()),
        }
    }

    /// Best `(gain, feature, threshold)`; ties keep the lowest feature, then
    /// the lowest threshold.
    fn best_split(&mut self, members: &[usize]) -> Option<(f64, usize, f64)> {
        let (mut s, mut w) = (0.0, 0.0);
        for &i in members {
            s += self.weight[i] * self.target[i];
            w += self.weight[i];
        }
        let parent = s * s / w;
        let (drawn, rest) = self.candidate_features();
        let best = self.scan(&drawn, s, w, parent);
        if best.is_some() {
            return best;
        }
        self.scan(&rest, s, w, parent)
    }

    fn scan(&self, features: &[usize], s: f64, w: f64, parent: f64) -> Option<(f64, usize, f64)> {
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in features {
            let col = &self.cols.values[f];
            let (mut sl, mut wl) = (0.0, 0.0);
            let mut prev: Option<f64> = None;
            for &i in &self.cols.order[f] {
                if !self.in_node[i] {
                    continue;
                }
                let v = col[i];
                if let Some(p) = prev {
                    if v > p && wl > 0.0 && w - wl > 0.0 {
                        let sr = s - sl;
                        let gain = sl * sl / wl + sr * sr / (w - wl) - parent;
                        if gain > MIN_GAIN && best.is_none_or(|b| gain > b.0) {
                            let mid = 0.5 * (p + v);
                            best = Some((gain, f, if mid < v { mid } else { p }));
                        }
                    }
                }
                sl += self.weight[i] * self.target[i];
                wl += self.weight[i];
                prev = Some(v);
            }
        }
        best
    }

    fn build(&mut self, members: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: (self.leaf)(&members) });
        let first = self.target[members[0]];
        if depth >= self.max_depth || members.iter().all(|&i| self.target[i] == first) {
            return id;
        }
        members.iter().for_each(|&i| self.in_node[i] = true);
        let split = self.best_split(&members);
        members.iter().for_each(|&i| self.in_node[i] = false);
        let Some((_, feature, threshold)) = split else { return id };
        let (l, r): (Vec<usize>, Vec<usize>) =
            members.into_iter().partition(|&i| self.cols.values[feature][i] <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature, threshold, left, right };
        id
    }
}

/// Grows a tree over rows with positive weight. `features` draws that many
/// candidate features per node from the rng; `None` scans all of them.
pub(crate) fn grow<L: Fn(&[usize]) -> f64>(
    cols: &Columns,
    target: &[f64],
    weight: &[f64],
    leaf: &L,
    max_depth: usize,
    features: Option<(usize, &mut StreamRng)>,
) -> DecisionTree {
    let members: Vec<usize> = (0..target.len()).filter(|&i| weight[i] > 0.0).collect();
    let mut g = Grower {
        cols,
        target,
        weight,
        leaf,
        max_depth,
        features,
        nodes: Vec::new(),
        in_node: vec![false; target.len()],
    };
    g.build(members, 0);
    DecisionTree { nodes: g.nodes }
}
