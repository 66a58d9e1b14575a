use super::{TsfConfig, TsfVars};
use crate::error::Result;
use crate::tensor::{dft_matrices, Graph, Tensor, Var};

/// Gaussian-windowed framed spectrum summaries: `[R, m] -> [R, frame/2 + 5]`.
///
/// Columns are the frame-averaged `log(1 + |X_k|²)` per bin, then spectral
/// centroid, bandwidth, entropy of the frame-averaged power distribution, and
/// the mean absolute wrapped phase difference between consecutive frames.
pub fn spectral_rows(g: &mut Graph, rows: Var, vars: &TsfVars, cfg: &TsfConfig) -> Result<Var> {
    let (r, m) = (g.shape(rows)[0], g.shape(rows)[1]);
    let frame = cfg.frame_len(m);
    let hop = (frame / 2).max(1);
    let bins = frame / 2 + 1;
    let frames = g.frames(rows, frame, hop)?;
    let n_frames = g.shape(frames)[1];

    // w(t) = exp(-t² / (2σ²)) around the frame centre, σ = exp(log_sigma)
    let centre = (frame as f64 - 1.0) / 2.0;
    let t2 = g.constant(Tensor::vector(
        (0..frame).map(|j| (j as f64 - centre).powi(2)).collect(),
    ));
    let two_ls = g.scale(vars.log_sigma, 2.0);
    let sigma2 = g.exp(two_ls);
    let ratio = g.div(t2, sigma2)?;
    let arg = g.scale(ratio, -0.5);
    let window = g.exp(arg);

    let xw = g.mul(frames, window)?;
    let (c, s) = dft_matrices(frame);
    let (c, s) = (g.constant(c), g.constant(s));
    let re = g.matmul(xw, c)?;
    let im = g.matmul(xw, s)?;
    let re2 = g.square(re);
    let im2 = g.square(im);
    let power = g.add(re2, im2)?;

    let logp = g.log1p(power);
    let log_mag = g.mean(logp, 1, false)?;

    let pbar = g.mean(power, 1, false)?;
    let total = g.sum(pbar, 1, true)?;
    let total = g.offset(total, cfg.eps);
    let p = g.div(pbar, total)?;
    let freqs = g.constant(Tensor::vector(
        (0..bins).map(|k| k as f64 * cfg.sampling_rate / frame as f64).collect(),
    ));
    let pf = g.mul(p, freqs)?;
    let centroid = g.sum(pf, 1, true)?;
    let dev = g.sub(freqs, centroid)?;
    let dev2 = g.square(dev);
    let pd = g.mul(p, dev2)?;
    let spread = g.sum(pd, 1, true)?;
    let spread = g.offset(spread, cfg.eps);
    let bandwidth = g.sqrt(spread);
    let pe = g.offset(p, cfg.eps);
    let lp = g.log(pe);
    let plp = g.mul(p, lp)?;
    let neg_entropy = g.sum(plp, 1, true)?;
    let entropy = g.neg(neg_entropy);

    let phase_diff = if n_frames >= 2 {
        let phase = g.atan2(im, re)?;
        let later = g.slice(phase, 1, 1, n_frames)?;
        let earlier = g.slice(phase, 1, 0, n_frames - 1)?;
        let d = g.sub(later, earlier)?;
        let d = g.wrap_phase(d);
        let d = g.abs(d);
        let d = g.reshape(d, &[r, (n_frames - 1) * bins])?;
        g.mean(d, 1, true)?
    } else {
        g.constant(Tensor::zeros(&[r, 1]))
    };
    g.concat(&[log_mag, centroid, bandwidth, entropy, phase_diff], 1)
}
