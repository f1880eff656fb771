//! Regression forest: bootstrap-aggregated CART trees grown to purity.
//!
//! Split search runs over feature orderings that are sorted once per forest
//! and partitioned (stably) down each tree, so a node costs O(d · size).

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_squared_error, Hyperparams, TrainReport};
use crate::error::{Error, Result};
use crate::rng;

const LEAF: u32 = u32::MAX;

/// Flat tree; node 0 is the root. Leaves have `feature == u32::MAX`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<u32>,
    #[serde(with = "crate::codec::vec")]
    pub threshold: Vec<f64>,
    #[serde(with = "crate::codec::vec")]
    pub value: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
}

impl Tree {
    fn with_capacity(c: usize) -> Self {
        Self {
            feature: Vec::with_capacity(c),
            threshold: Vec::with_capacity(c),
            value: Vec::with_capacity(c),
            left: Vec::with_capacity(c),
            right: Vec::with_capacity(c),
        }
    }

    fn push_leaf(&mut self) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.value.push(0.0);
        self.left.push(LEAF);
        self.right.push(LEAF);
        self.feature.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut node = 0;
        loop {
            let f = self.feature[node];
            if f == LEAF {
                return self.value[node];
            }
            node = if x[f as usize] <= self.threshold[node] {
                self.left[node]
            } else {
                self.right[node]
            } as usize;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

/// Data shared by every tree of one forest.
struct Presorted<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    /// Per feature, row indices sorted by value (ties by row index).
    order: Vec<Vec<u32>>,
}

impl Forest {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<(Self, TrainReport)> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if n > u32::MAX as usize / 2 {
            return Err(Error::invalid("too many rows for a forest"));
        }
        if hyper.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        let order = (0..x.ncols())
            .map(|j| {
                let col = x.column(j);
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let shared = Presorted { x, y, order };
        let min_split = hyper.min_samples_split.max(2);

        let trees: Vec<Tree> = (0..hyper.n_trees)
            .into_par_iter()
            .map(|t| {
                let tree_seed = rng::derive_seed(seed, &["rf/tree", &t.to_string()]);
                let mut stream = rng::stream(tree_seed, "rf/bootstrap");
                let boot: Vec<u32> = (0..n).map(|_| stream.random_range(0..n as u32)).collect();
                grow(&shared, &boot, min_split)
            })
            .collect();
        let forest = Self { trees };
        let loss = mean_squared_error(&forest.predict(x), y);
        Ok((
            forest,
            TrainReport {
                final_loss: loss,
                epochs: 0,
                converged: true,
            },
        ))
    }

    /// Per-tree predictions (trees × rows).
    pub fn tree_predictions(&self, x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
        self.trees
            .iter()
            .map(|t| x.axis_iter(Axis(0)).map(|r| t.predict_row(r)).collect())
            .collect()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let k = self.trees.len() as f64;
        x.axis_iter(Axis(0))
            .map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / k)
            .collect()
    }
}

/// Grows one tree on the bootstrap sample `boot` (row indices, with repeats).
fn grow(data: &Presorted<'_>, boot: &[u32], min_split: usize) -> Tree {
    let n = boot.len();
    let d = data.x.ncols();

    // Bootstrap positions grouped by source row, via counting sort.
    let rows = data.x.nrows();
    let mut start = vec![0u32; rows + 1];
    for &r in boot {
        start[r as usize + 1] += 1;
    }
    for r in 0..rows {
        start[r + 1] += start[r];
    }
    let mut fill = start.clone();
    let mut by_row = vec![0u32; n];
    for (pos, &r) in boot.iter().enumerate() {
        by_row[fill[r as usize] as usize] = pos as u32;
        fill[r as usize] += 1;
    }

    // Per-feature position orderings derived from the global row orderings.
    let mut sorted: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|ord| {
            let mut v = Vec::with_capacity(n);
            for &r in ord {
                let (a, b) = (start[r as usize] as usize, start[r as usize + 1] as usize);
                v.extend_from_slice(&by_row[a..b]);
            }
            v
        })
        .collect();

    let ys: Vec<f64> = boot.iter().map(|&r| data.y[r as usize]).collect();
    let xs: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let col = data.x.column(j);
            boot.iter().map(|&r| col[r as usize]).collect()
        })
        .collect();

    let mut tree = Tree::with_capacity(2 * n / min_split.max(1) + 1);
    let mut goes_left = vec![false; n];
    let mut buffer: Vec<u32> = Vec::with_capacity(n);
    let root = tree.push_leaf();
    let mut stack = vec![(root, 0usize, n)];

    while let Some((node, lo, hi)) = stack.pop() {
        let count = hi - lo;
        let members = &sorted[0][lo..hi];
        let total: f64 = members.iter().map(|&p| ys[p as usize]).sum();
        tree.value[node] = total / count as f64;
        if count < min_split {
            continue;
        }
        let y0 = ys[members[0] as usize];
        if members.iter().all(|&p| ys[p as usize] == y0) {
            continue;
        }
        let Some((feature, threshold)) = best_split(&sorted, &xs, &ys, lo, hi, total) else {
            continue;
        };

        let col = &xs[feature];
        let mut n_left = 0;
        for &p in &sorted[0][lo..hi] {
            let left = col[p as usize] <= threshold;
            goes_left[p as usize] = left;
            n_left += usize::from(left);
        }
        for s in sorted.iter_mut() {
            stable_partition(&mut s[lo..hi], &goes_left, &mut buffer);
        }

        let l = tree.push_leaf();
        let r = tree.push_leaf();
        tree.feature[node] = feature as u32;
        tree.threshold[node] = threshold;
        tree.left[node] = l as u32;
        tree.right[node] = r as u32;
        stack.push((r, lo + n_left, hi));
        stack.push((l, lo, lo + n_left));
    }
    tree
}

/// Variance-reduction split over all features. Among equal scores the lowest
/// feature index, then the lowest threshold, wins.
fn best_split(
    sorted: &[Vec<u32>],
    xs: &[Vec<f64>],
    ys: &[f64],
    lo: usize,
    hi: usize,
    total: f64,
) -> Option<(usize, f64)> {
    let count = (hi - lo) as f64;
    // Maximizing sum_l²/n_l + sum_r²/n_r is equivalent to minimizing the
    // children's summed squared error.
    let mut best: Option<(f64, usize, f64)> = None;
    for (j, (order, col)) in sorted.iter().zip(xs).enumerate() {
        let seg = &order[lo..hi];
        let mut left_sum = 0.0;
        for k in 0..seg.len() - 1 {
            let p = seg[k] as usize;
            left_sum += ys[p];
            let (a, b) = (col[p], col[seg[k + 1] as usize]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = count - nl;
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
            if best.is_none_or(|(s, _, _)| score > s) {
                let mut t = a + (b - a) / 2.0;
                if t >= b {
                    // Adjacent floats: the midpoint rounds up onto `b`.
                    t = a;
                }
                best = Some((score, j, t));
            }
        }
    }
    best.map(|(_, j, t)| (j, t))
}

fn stable_partition(seg: &mut [u32], goes_left: &[bool], buffer: &mut Vec<u32>) {
    buffer.clear();
    let mut w = 0;
    for i in 0..seg.len() {
        let p = seg[i];
        if goes_left[p as usize] {
            seg[w] = p;
            w += 1;
        } else {
            buffer.push(p);
        }
    }
    seg[w..].copy_from_slice(buffer);
}
