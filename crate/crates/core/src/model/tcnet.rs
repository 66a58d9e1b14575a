use super::branches::{FreqBranch, TimeBranch};
use super::config::ModelConfig;
use super::fusion::{AttentionWeights, BlockPool, Classifier, GroupProjection, ViewGroupAttention};
use crate::correction::{
    apply_correction, assemble_views, correction_regularizers, relative_delta_by_family, BlockContext,
    CorrectionBundle, CorrectionHead,
};
use crate::error::{Error, Result};
use crate::nn::{seeded, Binding, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::tsf::{extract_all, Family, FamilyLayout, Mode, TsfParams, TsfVars};

/// Number of blocks of size `m` with stride `s` in a window of length `l`.
pub fn n_blocks(l: usize, m: usize, s: usize) -> Result<usize> {
    if m == 0 || s == 0 {
        return Err(Error::Config("block size and stride must be >= 1".into()));
    }
    if m > l {
        return Err(Error::Invalid(format!("block size {m} exceeds window length {l}")));
    }
    Ok((l - m) / s + 1)
}

/// `x: B×C×L -> B×N×m×C`, block `n` covering samples `[n·s, n·s + m)`.
pub fn unfold_blocks(g: &mut Graph, x: Var, m: usize, s: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::Invalid(format!("expected B×C×L input, got {shape:?}")));
    }
    n_blocks(shape[2], m, s)?;
    let f = g.frames(x, m, s)?;
    g.permute(f, &[0, 2, 3, 1])
}

/// Parameter handles of the shared anchor extractor.
#[derive(Clone, Copy, Debug)]
pub struct TsfIds {
    pub u_low: ParamId,
    pub u_high: ParamId,
    pub log_sigma: ParamId,
}

impl TsfIds {
    pub fn register(store: &mut ParamStore, name: &str, init: TsfParams) -> Self {
        Self {
            u_low: store.add(format!("{name}.u_low"), init.u_low),
            u_high: store.add(format!("{name}.u_high"), init.u_high),
            log_sigma: store.add(format!("{name}.log_sigma"), init.log_sigma),
        }
    }

    pub fn vars(&self, p: &Binding) -> TsfVars {
        TsfVars {
            u_low: p.var(self.u_low),
            u_high: p.var(self.u_high),
            log_sigma: p.var(self.log_sigma),
        }
    }

    pub fn params(&self, store: &ParamStore) -> TsfParams {
        TsfParams {
            u_low: store.get(self.u_low).clone(),
            u_high: store.get(self.u_high).clone(),
            log_sigma: store.get(self.log_sigma).clone(),
        }
    }
}

/// Modules owned by one block scale.
#[derive(Clone, Debug)]
pub struct ScaleModule {
    pub block: usize,
    pub stride: usize,
    pub layout: FamilyLayout,
    pub column_family: Vec<usize>,
    pub context: BlockContext,
    pub heads: Vec<CorrectionHead>,
    pub projection: GroupProjection,
    pub attention: ViewGroupAttention,
    pub pool: BlockPool,
}

/// Per-scale intermediate results.
#[derive(Clone, Debug)]
pub struct ScaleOutput {
    pub bundle: CorrectionBundle,
    pub attention: AttentionWeights,
    pub h: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub h_global: Var,
    pub scales: Vec<ScaleOutput>,
}

impl ForwardOutput {
    /// `(L_delta, L_tv)` summed over scales.
    pub fn regularizers(&self, g: &mut Graph) -> Result<(Var, Var)> {
        let mut ld = g.constant(Tensor::scalar(0.0));
        let mut lt = g.constant(Tensor::scalar(0.0));
        for s in &self.scales {
            let (a, b) = correction_regularizers(g, &s.bundle)?;
            ld = g.add(ld, a)?;
            lt = g.add(lt, b)?;
        }
        Ok((ld, lt))
    }
}

/// Multi-scale anchor-corrected classifier.
#[derive(Clone, Debug)]
pub struct TcNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub time: TimeBranch,
    pub freq: FreqBranch,
    pub tsf: TsfIds,
    pub scales: Vec<ScaleModule>,
    pub classifier: Classifier,
}

impl TcNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let mut store = ParamStore::new();
        let c = &config;
        let time = TimeBranch::new(
            &mut store,
            "time",
            c.channels,
            &c.time_kernels,
            c.time_channels,
            c.d_ctx,
            &mut rng,
        );
        let freq = FreqBranch::new(
            &mut store,
            "freq",
            c.channels,
            c.length,
            &c.active_fft_sizes(),
            c.freq_channels,
            c.mixer_width,
            c.d_ctx,
            &mut rng,
        );
        let tsf = TsfIds::register(&mut store, "tsf", TsfParams::init(&c.tsf));
        let d_block = c.correction.d_block;
        let mut scales = Vec::with_capacity(c.scales.len());
        for (i, &m) in c.scales.iter().enumerate() {
            let tag = format!("scale{i}");
            let layout = c.tsf.layout(m)?;
            let d = layout.width();
            let context = BlockContext::new(&mut store, &format!("{tag}.context"), d, d_block, &mut rng);
            let heads = (1..c.correction.k_views)
                .map(|k| {
                    CorrectionHead::new(
                        &mut store,
                        &format!("{tag}.head{k}"),
                        2 * c.d_ctx + d_block,
                        c.correction.hidden,
                        c.channels,
                        layout.len(),
                        c.correction.alpha_init,
                        &mut rng,
                    )
                })
                .collect();
            let projection = GroupProjection::new(&mut store, &format!("{tag}.proj"), &layout, c.d_proj, &mut rng);
            let attention = ViewGroupAttention::new(&mut store, &format!("{tag}.attn"), c.d_proj, &mut rng);
            let pool = BlockPool::new(&mut store, &format!("{tag}.pool"), c.d_proj, &mut rng);
            scales.push(ScaleModule {
                block: m,
                stride: c.stride(i),
                column_family: layout.column_family_index(),
                layout,
                context,
                heads,
                projection,
                attention,
                pool,
            });
        }
        let classifier = Classifier::new(
            &mut store,
            "classifier",
            c.d_proj * c.scales.len(),
            c.d_proj,
            c.n_classes,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            time,
            freq,
            tsf,
            scales,
            classifier,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// `[h_time; h_freq]`, with zeros for disabled branches.
    pub fn global_context(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let d = self.config.d_ctx;
        let ht = if self.config.disable_time {
            g.constant(Tensor::zeros(&[b, d]))
        } else {
            self.time.forward(g, p, x)?
        };
        let hf = if self.config.disable_freq {
            g.constant(Tensor::zeros(&[b, d]))
        } else {
            self.freq.forward(g, p, x)?
        };
        g.concat(&[ht, hf], 1)
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var, mode: Mode) -> Result<ForwardOutput> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.channels || shape[2] != self.config.length {
            return Err(Error::Shape {
                kind: "tcnet",
                lhs: vec![self.config.channels, self.config.length],
                rhs: shape,
            });
        }
        let b = shape[0];
        let h_global = self.global_context(g, p, x)?;
        let dg = g.shape(h_global)[1];
        let hg = g.reshape(h_global, &[b, 1, dg])?;
        let tsf = self.tsf.vars(p);
        let k_views = self.config.effective_views();
        let mut outs = Vec::with_capacity(self.scales.len());
        let mut pooled = Vec::with_capacity(self.scales.len());
        for sm in &self.scales {
            let blocks = unfold_blocks(g, x, sm.block, sm.stride)?;
            let n = g.shape(blocks)[1];
            let z_raw = extract_all(g, blocks, &tsf, &self.config.tsf, mode)?;
            let mut views = Vec::with_capacity(k_views - 1);
            if k_views > 1 {
                let h_blk = if self.config.group_block_context {
                    sm.context.forward_grouped(g, p, z_raw, &self.config.sensor_groups)?
                } else {
                    sm.context.forward(g, p, z_raw)?
                };
                let zeros = g.constant(Tensor::zeros(&[n, 1]));
                let hg_n = g.add(hg, zeros)?;
                let h_ctx = g.concat(&[hg_n, h_blk], 2)?;
                for head in &sm.heads[..k_views - 1] {
                    let logits = head.predict(g, p, h_ctx)?;
                    let cfg = &self.config.correction;
                    views.push(apply_correction(
                        g,
                        z_raw,
                        &logits,
                        p.var(head.alpha),
                        cfg.s_max,
                        cfg.b_max,
                        &sm.column_family,
                    )?);
                }
            }
            let bundle = assemble_views(g, z_raw, &views)?;
            let h_proj = sm.projection.forward(g, p, bundle.z_multi)?;
            let (h_blk, view_w, group_w) = sm
                .attention
                .forward(g, p, h_proj, &self.config.sensor_groups, k_views)?;
            let (h, block_w) = sm.pool.forward(g, p, h_blk)?;
            pooled.push(h);
            outs.push(ScaleOutput {
                bundle,
                attention: AttentionWeights {
                    views: view_w,
                    groups: group_w,
                    blocks: block_w,
                },
                h,
            });
        }
        let logits = self.classifier.forward(g, p, &pooled)?;
        Ok(ForwardOutput {
            logits,
            h_global,
            scales: outs,
        })
    }

    /// Inference-only logits for a batch `B×C×L`.
    pub fn predict_logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, mode)?;
        Ok(g.value(out.logits).clone())
    }

    /// Classifier input: pooled scale representations `B×(M·D_proj)`.
    pub fn embed(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, mode)?;
        let hs: Vec<Var> = out.scales.iter().map(|s| s.h).collect();
        let h = g.concat(&hs, 1)?;
        Ok(g.value(h).clone())
    }

    /// Per scale, per-family mean `|Δ| / (|Z_raw| + ε)` over the batch.
    pub fn relative_deltas(&self, x: &Tensor, mode: Mode) -> Result<Vec<Vec<(Family, f64)>>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, mode)?;
        Ok(out
            .scales
            .iter()
            .zip(&self.scales)
            .map(|(so, sm)| {
                let z = g.value(so.bundle.z_raw);
                let deltas: Vec<Tensor> = so.bundle.deltas.iter().map(|&d| g.value(d).clone()).collect();
                relative_delta_by_family(z, &deltas, &sm.layout, self.config.tsf.eps)
            })
            .collect())
    }
}
