//! Context-conditioned correction of raw anchors into multiple views.
//!
//! Each corrected view `k ≥ 1` predicts per-(channel, family) scale, bias and
//! gate logits from the global and block context, applies a bounded affine
//! transform to the raw anchors, and blends it back with a gated residual.
//! View 0 is always the raw anchor tensor itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Binding, Linear, Mlp2, ParamId, ParamStore, Rng64};
use crate::tensor::{Graph, Tensor, Var};
use crate::tsf::{Family, FamilyLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    /// Total number of views including the identity view.
    pub k_views: usize,
    pub s_max: f64,
    pub b_max: f64,
    pub alpha_init: f64,
    /// Width of the block context vector.
    pub d_block: usize,
    /// Hidden width of the correction trunk.
    pub hidden: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            k_views: 4,
            s_max: 0.5,
            b_max: 0.5,
            alpha_init: -2.0,
            d_block: 32,
            hidden: 128,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_views == 0 {
            return Err(Error::Config("at least one view is required".into()));
        }
        if !(self.s_max > 0.0 && self.b_max > 0.0) {
            return Err(Error::Config("correction bounds must be positive".into()));
        }
        Ok(())
    }
}

/// Channel-averaged anchors through a two-layer MLP: `B×N×C×D -> B×N×d_b`.
#[derive(Clone, Debug)]
pub struct BlockContext {
    pub mlp: Mlp2,
}

impl BlockContext {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, d_block: usize, rng: &mut Rng64) -> Self {
        Self {
            mlp: Mlp2::new(store, name, d, d_block, d_block, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, z_raw: Var) -> Result<Var> {
        let pooled = g.mean(z_raw, 2, false)?;
        self.mlp.forward(g, p, pooled)
    }

    /// Mean within each sensor group first, then over groups.
    pub fn forward_grouped(&self, g: &mut Graph, p: &Binding, z_raw: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let mut means = Vec::with_capacity(groups.len());
        for grp in groups {
            let members: Vec<Var> = grp
                .iter()
                .map(|&c| g.slice(z_raw, 2, c, c + 1))
                .collect::<Result<_>>()?;
            let cat = g.concat(&members, 2)?;
            means.push(g.mean(cat, 2, true)?);
        }
        let cat = g.concat(&means, 2)?;
        let pooled = g.mean(cat, 2, false)?;
        self.mlp.forward(g, p, pooled)
    }
}

/// Raw (unbounded) correction outputs, each `B×N×C×F`.
#[derive(Clone, Copy, Debug)]
pub struct CorrectionLogits {
    pub s_hat: Var,
    pub b_hat: Var,
    pub l_hat: Var,
}

/// One corrected view: a shared tanh trunk and a joint output layer.
#[derive(Clone, Debug)]
pub struct CorrectionHead {
    pub trunk: Linear,
    pub out: Linear,
    pub alpha: ParamId,
    pub channels: usize,
    pub families: usize,
}

impl CorrectionHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_ctx: usize,
        hidden: usize,
        channels: usize,
        families: usize,
        alpha_init: f64,
        rng: &mut Rng64,
    ) -> Self {
        Self {
            trunk: Linear::new(store, &format!("{name}.trunk"), d_ctx, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, 3 * channels * families, rng),
            alpha: store.add(format!("{name}.alpha"), Tensor::vector(vec![alpha_init])),
            channels,
            families,
        }
    }

    /// `h_ctx: B×N×d_ctx` to `(ŝ, b̂, λ̂)`.
    pub fn predict(&self, g: &mut Graph, p: &Binding, h_ctx: Var) -> Result<CorrectionLogits> {
        let s = g.shape(h_ctx).to_vec();
        let h = self.trunk.forward(g, p, h_ctx)?;
        let h = g.tanh(h);
        let o = self.out.forward(g, p, h)?;
        let (c, f) = (self.channels, self.families);
        let o = g.reshape(o, &[s[0], s[1], 3, c, f])?;
        let mut part = |i: usize| -> Result<Var> {
            let v = g.slice(o, 2, i, i + 1)?;
            g.reshape(v, &[s[0], s[1], c, f])
        };
        Ok(CorrectionLogits {
            s_hat: part(0)?,
            b_hat: part(1)?,
            l_hat: part(2)?,
        })
    }
}

/// Output of one corrected view.
#[derive(Clone, Copy, Debug)]
pub struct CorrectedView {
    pub z: Var,
    pub lambda: Var,
    pub delta: Var,
}

/// `Z̃ = Z⊙(1 + s_max·tanh ŝ) + b_max·tanh b̂`, `λ = σ(α)·σ(λ̂)`,
/// `Z_k = Z + λ⊙(Z̃ − Z)`. Family-level inputs `B×N×C×F` are broadcast to
/// the feature columns through `column_family`.
#[allow(clippy::too_many_arguments)]
pub fn apply_correction(
    g: &mut Graph,
    z_raw: Var,
    logits: &CorrectionLogits,
    alpha: Var,
    s_max: f64,
    b_max: f64,
    column_family: &[usize],
) -> Result<CorrectedView> {
    let s = g.gather_last(logits.s_hat, column_family)?;
    let b = g.gather_last(logits.b_hat, column_family)?;
    let l = g.gather_last(logits.l_hat, column_family)?;
    if g.shape(s) != g.shape(z_raw) {
        return Err(Error::Shape {
            kind: "apply_correction",
            lhs: g.shape(z_raw).to_vec(),
            rhs: g.shape(s).to_vec(),
        });
    }
    let ts = g.tanh(s);
    let ts = g.scale(ts, s_max);
    let factor = g.offset(ts, 1.0);
    let scaled = g.mul(z_raw, factor)?;
    let tb = g.tanh(b);
    let tb = g.scale(tb, b_max);
    let z_tilde = g.add(scaled, tb)?;
    let ga = g.sigmoid(alpha);
    let gl = g.sigmoid(l);
    let lambda = g.mul(gl, ga)?;
    let gap = g.sub(z_tilde, z_raw)?;
    let delta = g.mul(lambda, gap)?;
    let z = g.add(z_raw, delta)?;
    Ok(CorrectedView { z, lambda, delta })
}

/// Multi-view anchors plus per-view diagnostics.
#[derive(Clone, Debug)]
pub struct CorrectionBundle {
    pub z_raw: Var,
    /// `B×N×(K·C)×D`, identity view first.
    pub z_multi: Var,
    pub lambdas: Vec<Var>,
    pub deltas: Vec<Var>,
}

impl CorrectionBundle {
    pub fn k_views(&self) -> usize {
        self.deltas.len() + 1
    }
}

/// Concatenates the raw anchors and every corrected view along the channel axis.
pub fn assemble_views(g: &mut Graph, z_raw: Var, views: &[CorrectedView]) -> Result<CorrectionBundle> {
    let z_multi = if views.is_empty() {
        z_raw
    } else {
        let mut all = vec![z_raw];
        all.extend(views.iter().map(|v| v.z));
        g.concat(&all, 2)?
    };
    Ok(CorrectionBundle {
        z_raw,
        z_multi,
        lambdas: views.iter().map(|v| v.lambda).collect(),
        deltas: views.iter().map(|v| v.delta).collect(),
    })
}

/// `(L_delta, L_tv)`: L1 size of every correction and L1 change of the
/// correction between adjacent blocks, as plain sums.
pub fn correction_regularizers(g: &mut Graph, bundle: &CorrectionBundle) -> Result<(Var, Var)> {
    let mut l_delta = g.constant(Tensor::scalar(0.0));
    let mut l_tv = g.constant(Tensor::scalar(0.0));
    for &d in &bundle.deltas {
        let a = g.abs(d);
        let s = g.sum_all(a)?;
        l_delta = g.add(l_delta, s)?;
        let n = g.shape(d)[1];
        if n >= 2 {
            let later = g.slice(d, 1, 1, n)?;
            let earlier = g.slice(d, 1, 0, n - 1)?;
            let step = g.sub(later, earlier)?;
            let a = g.abs(step);
            let s = g.sum_all(a)?;
            l_tv = g.add(l_tv, s)?;
        }
    }
    Ok((l_delta, l_tv))
}

/// Per-family mean of `|Δ| / (|Z_raw| + ε)` over every element of every view.
pub fn relative_delta_by_family(
    z_raw: &Tensor,
    deltas: &[Tensor],
    layout: &FamilyLayout,
    eps: f64,
) -> Vec<(Family, f64)> {
    let d = layout.width();
    layout
        .families()
        .map(|(fam, range)| {
            let (mut sum, mut count) = (0.0, 0usize);
            for delta in deltas {
                for (zr, dr) in z_raw.data().chunks(d).zip(delta.data().chunks(d)) {
                    for j in range.clone() {
                        sum += dr[j].abs() / (zr[j].abs() + eps);
                        count += 1;
                    }
                }
            }
            (fam, if count == 0 { 0.0 } else { sum / count as f64 })
        })
        .collect()
}
