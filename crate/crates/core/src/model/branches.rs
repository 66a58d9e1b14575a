//! Global context branches operating on whole windows `x: B×C×L`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::{uniform_init, Binding, Linear, Mlp2, ParamId, ParamStore, Rng64};
use crate::tensor::{dft_matrices, Graph, Tensor, Var};

/// A bias-carrying 1-D convolution with "same"-style padding of `k/2`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize, rng: &mut Rng64) -> Self {
        let fan_in = c_in * kernel;
        Self {
            w: store.add(format!("{name}.w"), uniform_init(rng, &[c_out, c_in, kernel], fan_in)),
            b: store.add(format!("{name}.b"), uniform_init(rng, &[c_out, 1], fan_in)),
            kernel,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let y = g.conv1d(x, p.var(self.w), 1, self.kernel / 2, 1)?;
        g.add(y, p.var(self.b))
    }
}

/// Parallel convolutions of different widths, each tanh-activated and
/// globally average pooled, concatenated and mapped by a two-layer MLP.
#[derive(Clone, Debug)]
pub struct TimeBranch {
    pub convs: Vec<Conv>,
    pub mlp: Mlp2,
}

impl TimeBranch {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        kernels: &[usize],
        width: usize,
        d_out: usize,
        rng: &mut Rng64,
    ) -> Self {
        let convs = kernels
            .iter()
            .map(|&k| Conv::new(store, &format!("{name}.conv{k}"), channels, width, k, rng))
            .collect();
        let mlp = Mlp2::new(store, &format!("{name}.mlp"), width * kernels.len(), d_out, d_out, rng);
        Self { convs, mlp }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let len = g.shape(x)[2];
        if let Some(k) = self.convs.iter().map(|c| c.kernel).max() {
            if len < k {
                return Err(Error::Invalid(format!(
                    "window length {len} is shorter than time kernel {k}"
                )));
            }
        }
        let mut pooled = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let y = conv.forward(g, p, x)?;
            let y = g.tanh(y);
            pooled.push(g.mean(y, 2, false)?);
        }
        let h = g.concat(&pooled, 1)?;
        self.mlp.forward(g, p, h)
    }
}

/// `log(1 + |STFT|²)` with a periodic Hann window and hop `n_fft/2`:
/// `B×C×L -> B×C×T×(n_fft/2+1)`. Trailing partial frames are dropped.
pub fn log_spectrogram(g: &mut Graph, x: Var, n_fft: usize) -> Result<Var> {
    let len = g.shape(x)[2];
    if len < n_fft {
        return Err(Error::Invalid(format!(
            "window length {len} is shorter than FFT size {n_fft}"
        )));
    }
    let frames = g.frames(x, n_fft, (n_fft / 2).max(1))?;
    let hann = Tensor::vector(
        (0..n_fft)
            .map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / n_fft as f64).cos())
            .collect(),
    );
    let hann = g.constant(hann);
    let xw = g.mul(frames, hann)?;
    let (c, s) = dft_matrices(n_fft);
    let (c, s) = (g.constant(c), g.constant(s));
    let re = g.matmul(xw, c)?;
    let im = g.matmul(xw, s)?;
    let re2 = g.square(re);
    let im2 = g.square(im);
    let power = g.add(re2, im2)?;
    Ok(g.log1p(power))
}

/// Spectrogram columns as tokens through one token-mixing and one
/// channel-mixing residual MLP, then averaged over tokens.
#[derive(Clone, Debug)]
pub struct SpectralMixer {
    pub n_fft: usize,
    pub mix_w: ParamId,
    pub mix_b: ParamId,
    pub embed: Linear,
    pub token_mlp: Mlp2,
    pub channel_mlp: Mlp2,
    pub tokens: usize,
    pub width: usize,
}

impl SpectralMixer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        length: usize,
        n_fft: usize,
        freq_channels: usize,
        width: usize,
        rng: &mut Rng64,
    ) -> Self {
        let bins = n_fft / 2 + 1;
        let hop = (n_fft / 2).max(1);
        let tokens = (length - n_fft) / hop + 1;
        Self {
            n_fft,
            mix_w: store.add(
                format!("{name}.mix.w"),
                uniform_init(rng, &[channels, freq_channels], channels),
            ),
            mix_b: store.add(format!("{name}.mix.b"), uniform_init(rng, &[freq_channels], channels)),
            embed: Linear::new(store, &format!("{name}.embed"), bins * freq_channels, width, rng),
            token_mlp: Mlp2::new(store, &format!("{name}.token"), tokens, width, tokens, rng),
            channel_mlp: Mlp2::new(store, &format!("{name}.channel"), width, width, width, rng),
            tokens,
            width,
        }
    }

    /// `x: B×C×L -> B×width`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let s = log_spectrogram(g, x, self.n_fft)?;
        let sh = g.shape(s).to_vec();
        let (b, t, bins) = (sh[0], sh[2], sh[3]);
        if t != self.tokens {
            return Err(Error::Shape {
                kind: "freq_branch",
                lhs: vec![self.tokens],
                rhs: vec![t],
            });
        }
        let s = g.permute(s, &[0, 2, 3, 1])?;
        let mixed = g.matmul(s, p.var(self.mix_w))?;
        let mixed = g.add(mixed, p.var(self.mix_b))?;
        let cf = g.shape(mixed)[3];
        let tok = g.reshape(mixed, &[b, t, bins * cf])?;
        let h = self.embed.forward(g, p, tok)?;
        let ht = g.transpose(h)?;
        let u = self.token_mlp.forward(g, p, ht)?;
        let u = g.transpose(u)?;
        let h = g.add(h, u)?;
        let v = self.channel_mlp.forward(g, p, h)?;
        let h = g.add(h, v)?;
        g.mean(h, 1, false)
    }
}

/// Per-FFT-size mixers, each followed by an MLP to `d_out`, averaged.
#[derive(Clone, Debug)]
pub struct FreqBranch {
    pub mixers: Vec<SpectralMixer>,
    pub heads: Vec<Mlp2>,
}

impl FreqBranch {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        length: usize,
        fft_sizes: &[usize],
        freq_channels: usize,
        width: usize,
        d_out: usize,
        rng: &mut Rng64,
    ) -> Self {
        let mut mixers = Vec::new();
        let mut heads = Vec::new();
        for &n in fft_sizes {
            let tag = format!("{name}.fft{n}");
            mixers.push(SpectralMixer::new(
                store,
                &tag,
                channels,
                length,
                n,
                freq_channels,
                width,
                rng,
            ));
            heads.push(Mlp2::new(store, &format!("{tag}.head"), width, d_out, d_out, rng));
        }
        Self { mixers, heads }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.mixers.len());
        for (mixer, head) in self.mixers.iter().zip(&self.heads) {
            let h = mixer.forward(g, p, x)?;
            let h = head.forward(g, p, h)?;
            let s = g.shape(h).to_vec();
            outs.push(g.reshape(h, &[s[0], 1, s[1]])?);
        }
        let all = g.concat(&outs, 1)?;
        g.mean(all, 1, false)
    }
}
