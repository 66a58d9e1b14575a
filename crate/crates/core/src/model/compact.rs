//! Small single-stream encoder for self-supervised pretraining on tri-axial
//! windows. Produces a 256-wide representation: a 128-wide content
//! embedding followed by the 128-wide projection of the pooled corrected anchors.

use serde::{Deserialize, Serialize};

use super::branches::{Conv, SpectralMixer};
use super::tcnet::{unfold_blocks, TsfIds};
use crate::correction::{apply_correction, assemble_views, BlockContext, CorrectionBundle, CorrectionHead};
use crate::error::{Error, Result};
use crate::nn::{seeded, Binding, Linear, Mlp2, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::tsf::{extract_all, Mode, TsfConfig, TsfParams};

/// Prefix of parameters that belong to pretraining heads, not the encoder.
pub const HEAD_PREFIX: &str = "ssl.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactConfig {
    pub length: usize,
    pub block: usize,
    pub kernel: usize,
    pub d_time: usize,
    pub n_fft: usize,
    pub d_freq: usize,
    pub freq_channels: usize,
    pub d_block: usize,
    pub hidden: usize,
    pub content: usize,
    pub s_max: f64,
    pub b_max: f64,
    pub alpha_init: f64,
    pub tsf: TsfConfig,
    pub seed: u64,
}

impl CompactConfig {
    pub fn new(length: usize, block: usize) -> Self {
        Self {
            length,
            block,
            kernel: 7,
            d_time: 64,
            n_fft: 64,
            d_freq: 64,
            freq_channels: 8,
            d_block: 16,
            hidden: 128,
            content: 128,
            s_max: 0.5,
            b_max: 0.5,
            alpha_init: -2.0,
            tsf: TsfConfig::default(),
            seed: 0,
        }
    }

    pub fn output_width(&self) -> usize {
        2 * self.content
    }

    pub fn validate(&self) -> Result<()> {
        if self.block > self.length {
            return Err(Error::Config(format!(
                "block {} exceeds window length {}",
                self.block, self.length
            )));
        }
        if self.n_fft > self.length || self.n_fft < 2 {
            return Err(Error::Config(format!(
                "FFT size {} does not fit length {}",
                self.n_fft, self.length
            )));
        }
        self.tsf.validate(self.block)
    }
}

#[derive(Clone, Debug)]
pub struct CompactOutput {
    /// `B×256`.
    pub rep: Var,
    pub bundle: CorrectionBundle,
}

#[derive(Clone, Debug)]
pub struct CompactTcNet {
    pub config: CompactConfig,
    pub store: ParamStore,
    pub conv1: Conv,
    pub conv2: Conv,
    pub freq: SpectralMixer,
    pub tsf: TsfIds,
    pub context: BlockContext,
    pub head: CorrectionHead,
    pub tsf_proj: Linear,
    pub content: Mlp2,
}

pub const CHANNELS: usize = 3;

impl CompactTcNet {
    pub fn new(config: CompactConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = seeded(c.seed);
        let mut store = ParamStore::new();
        let conv1 = Conv::new(&mut store, "time.conv0", CHANNELS, c.d_time, c.kernel, &mut rng);
        let conv2 = Conv::new(&mut store, "time.conv1", c.d_time, c.d_time, c.kernel, &mut rng);
        let freq = SpectralMixer::new(
            &mut store,
            "freq",
            CHANNELS,
            c.length,
            c.n_fft,
            c.freq_channels,
            c.d_freq,
            &mut rng,
        );
        let tsf = TsfIds::register(&mut store, "tsf", TsfParams::init(&c.tsf));
        let layout = c.tsf.layout(c.block)?;
        let d = layout.width();
        let context = BlockContext::new(&mut store, "context", d, c.d_block, &mut rng);
        let head = CorrectionHead::new(
            &mut store,
            "head1",
            c.d_time + c.d_freq + c.d_block,
            c.hidden,
            CHANNELS,
            layout.len(),
            c.alpha_init,
            &mut rng,
        );
        let tsf_proj = Linear::new(&mut store, "tsf_proj", d, c.content, &mut rng);
        let content = Mlp2::new(
            &mut store,
            "content",
            c.d_time + c.d_freq + c.content,
            c.content,
            c.content,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            conv1,
            conv2,
            freq,
            tsf,
            context,
            head,
            tsf_proj,
            content,
        })
    }

    /// Encoder parameters, excluding any registered pretraining heads.
    pub fn encoder_params(&self) -> usize {
        self.store.num_scalars() - self.store.num_scalars_with_prefix(HEAD_PREFIX)
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var, mode: Mode) -> Result<CompactOutput> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != CHANNELS {
            return Err(Error::Invalid(format!(
                "compact encoder takes tri-axial B×3×L input, got {shape:?}"
            )));
        }
        if shape[2] != self.config.length {
            return Err(Error::Shape {
                kind: "forward_compact",
                lhs: vec![CHANNELS, self.config.length],
                rhs: shape,
            });
        }
        let b = shape[0];
        let h = self.conv1.forward(g, p, x)?;
        let h = g.tanh(h);
        let h = self.conv2.forward(g, p, h)?;
        let h = g.tanh(h);
        let h_time = g.mean(h, 2, false)?;
        let h_freq = self.freq.forward(g, p, x)?;
        let h_global = g.concat(&[h_time, h_freq], 1)?;

        let blocks = unfold_blocks(g, x, self.config.block, self.config.block)?;
        let n = g.shape(blocks)[1];
        let tsf = self.tsf.vars(p);
        let z_raw = extract_all(g, blocks, &tsf, &self.config.tsf, mode)?;
        let h_blk = self.context.forward(g, p, z_raw)?;
        let dg = g.shape(h_global)[1];
        let hg = g.reshape(h_global, &[b, 1, dg])?;
        let zeros = g.constant(Tensor::zeros(&[n, 1]));
        let hg = g.add(hg, zeros)?;
        let h_ctx = g.concat(&[hg, h_blk], 2)?;
        let logits = self.head.predict(g, p, h_ctx)?;
        let layout = self.config.tsf.layout(self.config.block)?;
        let view = apply_correction(
            g,
            z_raw,
            &logits,
            p.var(self.head.alpha),
            self.config.s_max,
            self.config.b_max,
            &layout.column_family_index(),
        )?;
        let bundle = assemble_views(g, z_raw, &[view])?;
        let pooled = g.mean(view.z, 1, false)?;
        let pooled = g.mean(pooled, 1, false)?;
        let tsf_vec = self.tsf_proj.forward(g, p, pooled)?;
        let content_in = g.concat(&[h_global, tsf_vec], 1)?;
        let content = self.content.forward(g, p, content_in)?;
        let rep = g.concat(&[content, tsf_vec], 1)?;
        Ok(CompactOutput { rep, bundle })
    }

    /// Representations for a batch `B×3×L` without gradients.
    pub fn embed(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, mode)?;
        Ok(g.value(out.rep).clone())
    }
}
