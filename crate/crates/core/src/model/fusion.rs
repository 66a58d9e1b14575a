//! Family-wise projection, attention over views/sensor groups/blocks, and
//! the multi-scale classifier.

use crate::error::{Error, Result};
use crate::nn::{Binding, Linear, ParamStore, Rng64};
use crate::tensor::{Graph, Var};
use crate::tsf::FamilyLayout;

/// Per-family output widths: `⌊d_proj / families⌋` each, remainder to the last.
pub fn family_widths(d_proj: usize, families: usize) -> Vec<usize> {
    let base = d_proj / families;
    let mut w = vec![base; families];
    if let Some(last) = w.last_mut() {
        *last += d_proj - base * families;
    }
    w
}

/// Independent linear map per family, outputs concatenated to `d_proj`.
#[derive(Clone, Debug)]
pub struct GroupProjection {
    pub parts: Vec<(std::ops::Range<usize>, Linear)>,
    pub d_in: usize,
}

impl GroupProjection {
    pub fn new(store: &mut ParamStore, name: &str, layout: &FamilyLayout, d_proj: usize, rng: &mut Rng64) -> Self {
        let widths = family_widths(d_proj, layout.len());
        let parts = layout
            .families()
            .zip(widths)
            .map(|((fam, range), w)| {
                let lin = Linear::new(store, &format!("{name}.{}", fam.name()), range.len(), w, rng);
                (range, lin)
            })
            .collect();
        Self {
            parts,
            d_in: layout.width(),
        }
    }

    /// `[..., D] -> [..., d_proj]`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, z: Var) -> Result<Var> {
        let shape = g.shape(z).to_vec();
        let axis = shape.len() - 1;
        if shape[axis] != self.d_in {
            return Err(Error::Shape {
                kind: "group_project",
                lhs: vec![self.d_in],
                rhs: shape,
            });
        }
        let mut outs = Vec::with_capacity(self.parts.len());
        for (range, lin) in &self.parts {
            let cols = g.slice(z, axis, range.start, range.end)?;
            outs.push(lin.forward(g, p, cols)?);
        }
        g.concat(&outs, axis)
    }
}

/// Softmax-weighted sum along `axis` of `h` with scalar scores `w·v + b`.
/// Returns `(pooled, weights)`; `weights` keeps a trailing extent-1 axis.
fn score_pool(g: &mut Graph, p: &Binding, scorer: &Linear, h: Var, axis: usize) -> Result<(Var, Var)> {
    let scores = scorer.forward(g, p, h)?;
    let weights = g.softmax(scores, axis)?;
    let weighted = g.mul(h, weights)?;
    Ok((g.sum(weighted, axis, false)?, weights))
}

/// Attention weights produced by one scale's fusion.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    /// Per sensor group, `B×N×K×1`.
    pub views: Vec<Var>,
    /// `B×N×G×1`.
    pub groups: Var,
    /// `B×N×1`.
    pub blocks: Var,
}

/// Attention over views within each sensor group, then over groups.
#[derive(Clone, Debug)]
pub struct ViewGroupAttention {
    pub view_score: Linear,
    pub group_score: Linear,
}

impl ViewGroupAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut Rng64) -> Self {
        Self {
            view_score: Linear::new(store, &format!("{name}.view"), d, 1, rng),
            group_score: Linear::new(store, &format!("{name}.group"), d, 1, rng),
        }
    }

    /// `h: B×N×(K·C)×P -> (B×N×P, view weights, group weights)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Binding,
        h: Var,
        groups: &[Vec<usize>],
        k_views: usize,
    ) -> Result<(Var, Vec<Var>, Var)> {
        let s = g.shape(h).to_vec();
        let (b, n, kc, d) = (s[0], s[1], s[2], s[3]);
        if kc % k_views != 0 {
            return Err(Error::Shape {
                kind: "attend_views_groups",
                lhs: vec![k_views],
                rhs: s,
            });
        }
        let c = kc / k_views;
        let h5 = g.reshape(h, &[b, n, k_views, c, d])?;
        let mut group_vecs = Vec::with_capacity(groups.len());
        let mut view_weights = Vec::with_capacity(groups.len());
        for grp in groups {
            let members: Vec<Var> = grp
                .iter()
                .map(|&ch| g.slice(h5, 3, ch, ch + 1))
                .collect::<Result<_>>()?;
            let cat = if members.len() == 1 {
                members[0]
            } else {
                g.concat(&members, 3)?
            };
            let avg = g.mean(cat, 3, false)?;
            let (pooled, w) = score_pool(g, p, &self.view_score, avg, 2)?;
            view_weights.push(w);
            group_vecs.push(g.reshape(pooled, &[b, n, 1, d])?);
        }
        let stacked = if group_vecs.len() == 1 {
            group_vecs[0]
        } else {
            g.concat(&group_vecs, 2)?
        };
        let (out, gw) = score_pool(g, p, &self.group_score, stacked, 2)?;
        Ok((out, view_weights, gw))
    }
}

/// Softmax attention over temporal blocks: `B×N×P -> B×P`.
#[derive(Clone, Debug)]
pub struct BlockPool {
    pub score: Linear,
}

impl BlockPool {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut Rng64) -> Self {
        Self {
            score: Linear::new(store, &format!("{name}.score"), d, 1, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, h: Var) -> Result<(Var, Var)> {
        score_pool(g, p, &self.score, h, 1)
    }
}

/// Concatenated scale vectors → φ → two residual tanh blocks → logits.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub phi: Linear,
    pub blocks: Vec<Linear>,
    pub out: Linear,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d: usize, n_classes: usize, rng: &mut Rng64) -> Self {
        Self {
            phi: Linear::new(store, &format!("{name}.phi"), d_in, d, rng),
            blocks: (0..2)
                .map(|i| Linear::new(store, &format!("{name}.res{i}"), d, d, rng))
                .collect(),
            out: Linear::new(store, &format!("{name}.out"), d, n_classes, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, scales: &[Var]) -> Result<Var> {
        let h = if scales.len() == 1 {
            scales[0]
        } else {
            g.concat(scales, 1)?
        };
        let mut h = self.phi.forward(g, p, h)?;
        for blk in &self.blocks {
            let u = blk.forward(g, p, h)?;
            let u = g.tanh(u);
            h = g.add(h, u)?;
        }
        self.out.forward(g, p, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_widths_put_remainder_last() {
        assert_eq!(family_widths(128, 7), vec![18, 18, 18, 18, 18, 18, 20]);
        assert_eq!(family_widths(32, 7), vec![4, 4, 4, 4, 4, 4, 8]);
        assert_eq!(family_widths(128, 7).iter().sum::<usize>(), 128);
    }
}
