//! CART classification trees with Gini impurity, bagged into a random forest.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, tag, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Candidate columns per split; `None` means `floor(sqrt(columns))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 30,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// Row-major training view with class indices.
pub(crate) struct Samples<'a> {
    pub x: &'a [f64],
    pub y: &'a [usize],
    pub cols: usize,
    pub classes: usize,
}

impl Samples<'_> {
    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.x[row * self.cols + col]
    }
}

struct Builder<'a, 'b> {
    data: &'a Samples<'b>,
    params: &'a ForestParams,
    max_features: usize,
    rng: SplitMix64,
    nodes: Vec<Node>,
}

fn majority(counts: &[usize]) -> usize {
    // first maximum, i.e. lowest class index on ties
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_, '_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let mut counts = vec![0; self.data.classes];
        for &r in rows.iter() {
            counts[self.data.y[r]] += 1;
        }
        let id = self.nodes.len();
        let leaf = Node::Leaf {
            class: majority(&counts),
        };
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || rows.len() < self.params.min_samples_split {
            self.nodes.push(leaf);
            return id;
        }
        let Some(best) = self.best_split(rows) else {
            self.nodes.push(leaf);
            return id;
        };
        self.nodes.push(leaf);
        let mid = partition(rows, |r| self.data.at(r, best.feature) <= best.threshold);
        let (l, r) = rows.split_at_mut(mid);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Visits columns in random order until `max_features` non-constant ones
    /// have been scored, keeping the lowest weighted child impurity.
    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let mut features: Vec<usize> = (0..self.data.cols).collect();
        features.shuffle(&mut self.rng);
        let mut visited = 0;
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        let n = rows.len();
        for &f in &features {
            if visited == self.max_features {
                break;
            }
            order.clear();
            order.extend(rows.iter().map(|&r| (self.data.at(r, f), self.data.y[r])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            visited += 1;
            let mut left = vec![0; self.data.classes];
            let mut right = vec![0; self.data.classes];
            for &(_, y) in &order {
                right[y] += 1;
            }
            for i in 0..n - 1 {
                let y = order[i].1;
                left[y] += 1;
                right[y] -= 1;
                let (a, b) = (order[i].0, order[i + 1].0);
                if a == b {
                    continue;
                }
                let nl = i + 1;
                let impurity = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl))
                    / n as f64;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }
}

fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

pub(crate) fn fit_tree(data: &Samples<'_>, params: &ForestParams, max_features: usize, mut rng: SplitMix64) -> Tree {
    let n = data.y.len();
    let mut rows: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut builder = Builder {
        data,
        params,
        max_features,
        rng,
        nodes: Vec::new(),
    };
    builder.build(&mut rows, 0);
    Tree {
        nodes: builder.nodes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub classes: usize,
}

impl Forest {
    /// Trees are fitted in parallel; tree `i` draws from stream `i` of the
    /// seed, so the result does not depend on scheduling.
    pub(crate) fn fit(data: &Samples<'_>, params: &ForestParams, seed: u64) -> Forest {
        let max_features = params
            .features_per_split
            .unwrap_or_else(|| (data.cols as f64).sqrt().floor() as usize)
            .clamp(1, data.cols.max(1));
        let base = rng::derive(seed, tag::FOREST);
        let trees = (0..params.trees)
            .into_par_iter()
            .map(|i| fit_tree(data, params, max_features, rng::stream(base, i as u64)))
            .collect();
        Forest {
            trees,
            classes: data.classes,
        }
    }

    /// Majority vote; ties go to the lowest class index.
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0; self.classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        majority(&votes)
    }
}
