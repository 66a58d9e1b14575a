//! Array-encoded CART classification tree with weighted Gini splits.

use rand::seq::SliceRandom;

use crate::nn::Rng64;

pub const LEAF: u32 = u32::MAX;

/// One node; leaves have `feature == LEAF` and a class distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub feature: u32,
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
    /// Leaf class distribution rounded to f32 precision; empty for internal nodes.
    pub dist: Vec<f64>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Training inputs shared by every tree.
pub(crate) struct TreeData<'a> {
    /// Row-major `n × d`.
    pub x: &'a [f32],
    pub d: usize,
    pub labels: &'a [usize],
    pub n_classes: usize,
    pub class_weight: &'a [f64],
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_split: usize,
    pub max_features: usize,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

struct Split {
    feature: usize,
    threshold: f32,
    decrease: f64,
}

pub(crate) struct Builder<'a, 'b> {
    data: &'b TreeData<'a>,
    params: &'b TreeParams,
    /// Per-row sample weight (bootstrap multiplicity times class weight).
    weight: Vec<f64>,
    nodes: Vec<Node>,
    /// Weighted impurity decrease accumulated per feature.
    pub importance: Vec<f64>,
    scratch: Vec<(f32, usize)>,
}

impl<'a, 'b> Builder<'a, 'b> {
    pub fn new(data: &'b TreeData<'a>, params: &'b TreeParams, multiplicity: &[u32]) -> Self {
        let weight = multiplicity
            .iter()
            .zip(data.labels)
            .map(|(&m, &y)| f64::from(m) * data.class_weight[y])
            .collect();
        Self {
            data,
            params,
            weight,
            nodes: Vec::new(),
            importance: vec![0.0; data.d],
            scratch: Vec::new(),
        }
    }

    pub fn build(mut self, rows: Vec<usize>, rng: &mut Rng64) -> (Tree, Vec<f64>) {
        self.grow(rows, 0, rng);
        (Tree { nodes: self.nodes }, self.importance)
    }

    fn class_counts(&self, rows: &[usize]) -> (Vec<f64>, f64, usize) {
        let mut counts = vec![0.0; self.data.n_classes];
        let mut samples = 0usize;
        for &r in rows {
            counts[self.data.labels[r]] += self.weight[r];
            samples += usize::from(self.weight[r] > 0.0);
        }
        let total = counts.iter().sum();
        (counts, total, samples)
    }

    fn push_leaf(&mut self, counts: &[f64], total: f64) -> u32 {
        let dist = counts
            .iter()
            .map(|&c| {
                if total > 0.0 {
                    f64::from((c / total) as f32)
                } else {
                    0.0
                }
            })
            .collect();
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            dist,
        });
        (self.nodes.len() - 1) as u32
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut Rng64) -> u32 {
        let (counts, total, samples) = self.class_counts(&rows);
        let impurity = gini(&counts, total);
        if depth >= self.params.max_depth || samples < self.params.min_split || impurity <= 0.0 {
            return self.push_leaf(&counts, total);
        }
        let Some(split) = self.best_split(&rows, &counts, total, impurity, rng) else {
            return self.push_leaf(&counts, total);
        };
        self.importance[split.feature] += split.decrease;
        let d = self.data.d;
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.data.x[r * d + split.feature] <= split.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: LEAF,
            right: LEAF,
            dist: Vec::new(),
        });
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id].left = l;
        self.nodes[id].right = r;
        id as u32
    }

    /// Examines random features until `max_features` non-constant ones were scanned.
    fn best_split(
        &mut self,
        rows: &[usize],
        counts: &[f64],
        total: f64,
        impurity: f64,
        rng: &mut Rng64,
    ) -> Option<Split> {
        let d = self.data.d;
        let k = self.data.n_classes;
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut best: Option<Split> = None;
        let mut scanned = 0;
        let mut left = vec![0.0; k];
        for f in features {
            if scanned >= self.params.max_features {
                break;
            }
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&r| (self.data.x[r * d + f], r)));
            self.scratch
                .sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if self.scratch[0].0 == self.scratch[self.scratch.len() - 1].0 {
                continue;
            }
            scanned += 1;
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut w_left = 0.0;
            for i in 0..self.scratch.len() - 1 {
                let (v, r) = self.scratch[i];
                let w = self.weight[r];
                left[self.data.labels[r]] += w;
                w_left += w;
                let next = self.scratch[i + 1].0;
                if next == v {
                    continue;
                }
                let w_right = total - w_left;
                if w_left <= 0.0 || w_right <= 0.0 {
                    continue;
                }
                let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let decrease = total * impurity - w_left * gini(&left, w_left) - w_right * gini(&right, w_right);
                if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    let mid = ((f64::from(v) + f64::from(next)) / 2.0) as f32;
                    let threshold = if mid >= v && mid < next { mid } else { v };
                    best = Some(Split {
                        feature: f,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best
    }
}

impl Tree {
    pub fn leaf(&self, row: &[f32]) -> &Node {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n;
            }
            i = if row[n.feature as usize] <= n.threshold {
                n.left
            } else {
                n.right
            } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }
}
