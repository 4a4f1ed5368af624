//! Bagged regression trees with per-split feature subsampling.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `0` means `ceil(p / 3)`.
    pub features_per_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { trees: 100, min_leaf: 5, features_per_split: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    /// feature, threshold, left child, right child; `x <= threshold` goes left.
    Split(usize, f64, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split(f, t, l, r) => i = if x[f] <= t { l } else { r },
            }
        }
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], rng: &mut crate::Rng) -> usize {
        let id = self.nodes.len();
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf(mean));
        if n < 2 * self.min_leaf {
            return id;
        }
        let p = self.x[0].len();
        let base_sse: f64 = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        if base_sse <= 1e-12 * (1.0 + mean * mean) * n as f64 {
            return id;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<usize> = idx.to_vec();
        for f in sample(rng, p, self.mtry.min(p)).into_iter() {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let total: f64 = sorted.iter().map(|&i| self.y[i]).sum();
            let total_sq: f64 = sorted.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut s, mut sq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let v = self.y[sorted[k]];
                s += v;
                sq += v * v;
                let left = k + 1;
                if left < self.min_leaf || n - left < self.min_leaf {
                    continue;
                }
                let (a, b) = (self.x[sorted[k]][f], self.x[sorted[k + 1]][f]);
                if a == b {
                    continue;
                }
                let sse = (sq - s * s / left as f64) + ((total_sq - sq) - (total - s).powi(2) / (n - left) as f64);
                if best.is_none_or(|(bs, _, _)| sse < bs) {
                    best = Some((sse, f, 0.5 * (a + b)));
                }
            }
        }
        let Some((sse, f, t)) = best else { return id };
        if sse >= base_sse {
            return id;
        }
        let mut split = 0;
        for k in 0..n {
            if self.x[idx[k]][f] <= t {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l_idx, r_idx) = idx.split_at_mut(split);
        let l = self.build(l_idx, rng);
        let r = self.build(r_idx, rng);
        self.nodes[id] = Node::Split(f, t, l, r);
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, rng: &mut crate::Rng) -> Self {
        let p = x[0].len();
        let mtry = if cfg.features_per_split == 0 { p.div_ceil(3) } else { cfg.features_per_split }.max(1);
        let n = x.len();
        let trees = (0..cfg.trees.max(1))
            .map(|_| {
                let mut idx: Vec<usize> = (0..n).map(|_| crate::index(rng, n)).collect();
                let mut b = Builder { x, y, min_leaf: cfg.min_leaf.max(1), mtry, nodes: Vec::new() };
                b.build(&mut idx, rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Forest { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}
