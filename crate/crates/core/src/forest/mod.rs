//! Random forest over hard-mode anchors, family importances and the "TCRF" file format.

mod features;
mod tree;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, write_atomic, Record};
use crate::error::{Error, Result};
use crate::nn::seeded;
use crate::tensor::Tensor;
use crate::train::argmax;
pub use features::{extract_rf_features, rf_column_families, RfFeatureConfig, RF_FAMILIES};
use tree::{Builder, TreeData, TreeParams};
pub use tree::{Node, Tree, LEAF};

pub const MAGIC: &[u8; 4] = b"TCRF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_split: usize,
    /// Inverse-frequency class weights.
    pub balanced: bool,
    pub bootstrap: bool,
    /// Features examined per split; `None` means `⌊√D⌋`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 20,
            min_split: 2,
            balanced: true,
            bootstrap: true,
            max_features: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_split < 2 {
            return Err(Error::Config(
                "n_trees and max_depth must be >= 1, min_split >= 2".into(),
            ));
        }
        if self.max_features == Some(0) {
            return Err(Error::Config("max_features must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    config: ForestConfig,
    n_features: usize,
    n_classes: usize,
    oob_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    /// Mean decrease in impurity per feature, normalised to sum to 1.
    pub importances: Vec<f64>,
    /// Accuracy on rows left out of at least one bootstrap sample.
    pub oob_accuracy: Option<f64>,
}

fn tree_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn to_f32(x: &Tensor) -> Result<(Vec<f32>, usize, usize)> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::Invalid(format!("features must be a matrix, got {s:?}")));
    }
    Ok((x.data().iter().map(|&v| v as f32).collect(), s[0], s[1]))
}

impl Forest {
    /// Balanced weights `n / (k · n_c)` computed over the whole training set.
    pub fn fit(features: &Tensor, labels: &[usize], n_classes: usize, config: &ForestConfig) -> Result<Self> {
        config.validate()?;
        let (x, n, d) = to_f32(features)?;
        if n != labels.len() || n == 0 {
            return Err(Error::Invalid(format!("{n} feature rows for {} labels", labels.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forest features".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Invalid(format!("label {y} outside [0, {n_classes})")));
        }
        let mut present = vec![0usize; n_classes];
        for &y in labels {
            present[y] += 1;
        }
        if present.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::Invalid("forest needs at least 2 classes in the labels".into()));
        }
        let class_weight: Vec<f64> = if config.balanced {
            crate::train::balanced_class_weights(labels, n_classes)
        } else {
            vec![1.0; n_classes]
        };
        let data = TreeData {
            x: &x,
            d,
            labels,
            n_classes,
            class_weight: &class_weight,
        };
        let params = TreeParams {
            max_depth: config.max_depth,
            min_split: config.min_split,
            max_features: config
                .max_features
                .unwrap_or(((d as f64).sqrt().floor() as usize).max(1))
                .min(d),
        };
        let mut trees = Vec::with_capacity(config.n_trees);
        let mut importances = vec![0.0; d];
        let mut oob_votes = vec![vec![0.0; n_classes]; n];
        for t in 0..config.n_trees {
            let mut rng = seeded(tree_seed(config.seed, t));
            let mut mult = vec![0u32; n];
            if config.bootstrap {
                for _ in 0..n {
                    mult[rng.random_range(0..n)] += 1;
                }
            } else {
                mult.fill(1);
            }
            let rows: Vec<usize> = (0..n).filter(|&r| mult[r] > 0).collect();
            let (tree, imp) = Builder::new(&data, &params, &mult).build(rows, &mut rng);
            let total: f64 = imp.iter().sum();
            if total > 0.0 {
                for (a, b) in importances.iter_mut().zip(&imp) {
                    *a += b / total;
                }
            }
            for r in (0..n).filter(|&r| mult[r] == 0) {
                for (v, p) in oob_votes[r].iter_mut().zip(&tree.leaf(&x[r * d..(r + 1) * d]).dist) {
                    *v += p;
                }
            }
            trees.push(tree);
        }
        let total: f64 = importances.iter().sum();
        if total > 0.0 {
            importances.iter_mut().for_each(|v| *v /= total);
        }
        let voted: Vec<usize> = (0..n).filter(|&r| oob_votes[r].iter().sum::<f64>() > 0.0).collect();
        let oob_accuracy = (!voted.is_empty())
            .then(|| voted.iter().filter(|&&r| argmax(&oob_votes[r]) == labels[r]).count() as f64 / voted.len() as f64);
        Ok(Self {
            config: config.clone(),
            n_features: d,
            n_classes,
            trees,
            importances,
            oob_accuracy,
        })
    }

    /// Mean leaf distributions, renormalised; `n × K`.
    pub fn predict_proba(&self, features: &Tensor) -> Result<Tensor> {
        let (x, n, d) = to_f32(features)?;
        if d != self.n_features {
            return Err(Error::Shape {
                kind: "predict_forest",
                lhs: vec![self.n_features],
                rhs: vec![d],
            });
        }
        let k = self.n_classes;
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            let acc = &mut out[r * k..(r + 1) * k];
            for t in &self.trees {
                for (a, p) in acc.iter_mut().zip(&t.leaf(&x[r * d..(r + 1) * d]).dist) {
                    *a += p;
                }
            }
            let s: f64 = acc.iter().sum();
            acc.iter_mut().for_each(|v| *v /= s);
        }
        Tensor::new(vec![n, k], out)
    }

    /// Argmax of [`Forest::predict_proba`], ties to the lowest class.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(features)?;
        Ok(p.data().chunks(self.n_classes).map(argmax).collect())
    }

    /// Importance summed within each family; `column_family[j]` names the family of column `j`.
    pub fn family_importance(&self, column_family: &[usize], n_families: usize) -> Result<Vec<f64>> {
        if column_family.len() != self.n_features {
            return Err(Error::Shape {
                kind: "family_importance",
                lhs: vec![self.n_features],
                rhs: vec![column_family.len()],
            });
        }
        let mut out = vec![0.0; n_families];
        for (&f, &v) in column_family.iter().zip(&self.importances) {
            out[f] += v;
        }
        let s: f64 = out.iter().sum();
        if s > 0.0 {
            out.iter_mut().for_each(|v| *v /= s);
        } else {
            out.fill(1.0 / n_families as f64);
        }
        Ok(out)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_string(&Meta {
            config: self.config.clone(),
            n_features: self.n_features,
            n_classes: self.n_classes,
            oob_accuracy: self.oob_accuracy,
        })?;
        let mut records = vec![Record {
            name: "importance".into(),
            shape: vec![self.n_features],
            values: self.importances.iter().map(|&v| v as f32).collect(),
        }];
        let k = self.n_classes;
        for (i, t) in self.trees.iter().enumerate() {
            let n = t.nodes.len();
            let col = |name: &str, f: &dyn Fn(&Node) -> f32| Record {
                name: format!("tree.{i}.{name}"),
                shape: vec![n],
                values: t.nodes.iter().map(f).collect(),
            };
            let idx = |v: u32| if v == LEAF { -1.0 } else { v as f32 };
            records.push(col("feature", &|nd| idx(nd.feature)));
            records.push(col("threshold", &|nd| nd.threshold));
            records.push(col("left", &|nd| idx(nd.left)));
            records.push(col("right", &|nd| idx(nd.right)));
            let mut dist = Vec::with_capacity(n * k);
            for nd in &t.nodes {
                if nd.is_leaf() {
                    dist.extend(nd.dist.iter().map(|&v| v as f32));
                } else {
                    dist.extend(std::iter::repeat_n(0.0, k));
                }
            }
            records.push(Record {
                name: format!("tree.{i}.dist"),
                shape: vec![n, k],
                values: dist,
            });
        }
        Ok(container::encode(MAGIC, VERSION, &meta, &records))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (meta, records) = container::decode(bytes, MAGIC, VERSION)?;
        let meta: Meta = serde_json::from_str(&meta).map_err(|e| Error::Format(format!("forest metadata: {e}")))?;
        let (d, k) = (meta.n_features, meta.n_classes);
        let mut it = records.into_iter();
        let bad = |m: &str| Error::Format(format!("forest records: {m}"));
        let imp = it
            .next()
            .filter(|r| r.name == "importance" && r.values.len() == d)
            .ok_or_else(|| bad("importance"))?;
        let mut trees = Vec::with_capacity(meta.config.n_trees);
        for i in 0..meta.config.n_trees {
            let mut next = |name: &str| {
                it.next()
                    .filter(|r| r.name == format!("tree.{i}.{name}"))
                    .ok_or_else(|| bad(&format!("tree {i} {name}")))
            };
            let (feat, thr, left, right, dist) = (
                next("feature")?,
                next("threshold")?,
                next("left")?,
                next("right")?,
                next("dist")?,
            );
            let n = feat.values.len();
            if [thr.values.len(), left.values.len(), right.values.len()]
                .iter()
                .any(|&v| v != n)
                || dist.values.len() != n * k
            {
                return Err(bad(&format!("tree {i} arrays disagree")));
            }
            let idx = |v: f32, bound: usize| -> Result<u32> {
                if v == -1.0 {
                    Ok(LEAF)
                } else if v >= 0.0 && (v as usize) < bound && v.fract() == 0.0 {
                    Ok(v as u32)
                } else {
                    Err(bad(&format!("tree {i} index {v} out of range")))
                }
            };
            let mut nodes = Vec::with_capacity(n);
            for j in 0..n {
                let feature = idx(feat.values[j], d)?;
                let leaf = feature == LEAF;
                nodes.push(Node {
                    feature,
                    threshold: thr.values[j],
                    left: idx(left.values[j], n)?,
                    right: idx(right.values[j], n)?,
                    dist: if leaf {
                        dist.values[j * k..(j + 1) * k].iter().map(|&v| f64::from(v)).collect()
                    } else {
                        Vec::new()
                    },
                });
                if !leaf && (nodes[j].left == LEAF || nodes[j].right == LEAF) {
                    return Err(bad(&format!("tree {i} internal node {j} lacks children")));
                }
            }
            if nodes.is_empty() {
                return Err(bad(&format!("tree {i} is empty")));
            }
            trees.push(Tree { nodes });
        }
        if it.next().is_some() {
            return Err(bad("unexpected trailing records"));
        }
        Ok(Self {
            config: meta.config,
            n_features: d,
            n_classes: k,
            trees,
            importances: imp.values.iter().map(|&v| f64::from(v)).collect(),
            oob_accuracy: meta.oob_accuracy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn threshold_data() -> (Tensor, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let cls = i % 2;
            x.push(if cls == 0 {
                -1.0 - i as f64 * 0.01
            } else {
                1.5 + i as f64 * 0.01
            });
            x.push((i as f64 * 1.7).sin());
            y.push(cls);
        }
        (Tensor::new(vec![40, 2], x).unwrap(), y)
    }

    #[test]
    fn separable_threshold_fits_exactly() {
        let (x, y) = threshold_data();
        let f = Forest::fit(
            &x,
            &y,
            2,
            &ForestConfig {
                n_trees: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(f.predict(&x).unwrap(), y);
        assert!(f.trees.iter().all(|t| t.depth() <= 20));
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = threshold_data();
        assert!(Forest::fit(&x, &[0; 40], 2, &ForestConfig::default()).is_err());
    }

    #[test]
    fn two_opposite_leaves_tie_to_class_zero() {
        let leaf = |d: Vec<f64>| Tree {
            nodes: vec![Node {
                feature: LEAF,
                threshold: 0.0,
                left: LEAF,
                right: LEAF,
                dist: d,
            }],
        };
        let f = Forest {
            config: ForestConfig {
                n_trees: 2,
                ..Default::default()
            },
            n_features: 1,
            n_classes: 2,
            trees: vec![leaf(vec![1.0, 0.0]), leaf(vec![0.0, 1.0])],
            importances: vec![0.0],
            oob_accuracy: None,
        };
        let x = Tensor::new(vec![1, 1], vec![0.3]).unwrap();
        assert_eq!(f.predict_proba(&x).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(f.predict(&x).unwrap(), vec![0]);
    }

    #[test]
    fn width_mismatch_rejected() {
        let (x, y) = threshold_data();
        let f = Forest::fit(
            &x,
            &y,
            2,
            &ForestConfig {
                n_trees: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.predict(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let (x, y) = threshold_data();
        let f = Forest::fit(
            &x,
            &y,
            2,
            &ForestConfig {
                n_trees: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let bytes = f.encode().unwrap();
        let g = Forest::decode(&bytes).unwrap();
        assert_eq!(g.trees, f.trees);
        assert_eq!(g.encode().unwrap(), bytes);
        assert!(Forest::decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
