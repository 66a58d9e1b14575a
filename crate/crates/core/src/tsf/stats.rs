use super::{Mode, TsfConfig};
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// `[mean, min, max, RMS, std]` per row. Soft mode uses the log-sum-exp
/// min/max with temperature `tau_stat`; hard mode uses exact extrema.
pub fn statistics_rows(g: &mut Graph, rows: Var, cfg: &TsfConfig, mode: Mode) -> Result<Var> {
    let m = g.shape(rows)[1] as f64;
    let mean = g.mean(rows, 1, true)?;
    let (min, max) = match mode {
        Mode::Hard => (g.min(rows, 1, true)?, g.max(rows, 1, true)?),
        Mode::Soft => {
            let tau = cfg.tau_stat;
            let shift = tau * m.ln();
            let neg = g.scale(rows, -1.0 / tau);
            let lse = g.logsumexp(neg, 1, true)?;
            let soft_min = g.scale(lse, -tau);
            let soft_min = g.offset(soft_min, shift);
            let pos = g.scale(rows, 1.0 / tau);
            let lse = g.logsumexp(pos, 1, true)?;
            let soft_max = g.scale(lse, tau);
            let soft_max = g.offset(soft_max, -shift);
            (soft_min, soft_max)
        }
    };
    let sq = g.square(rows);
    let ms = g.mean(sq, 1, true)?;
    let rms = g.sqrt(ms);
    let xc = g.sub(rows, mean)?;
    let xc2 = g.square(xc);
    let var = g.mean(xc2, 1, true)?;
    let var = g.offset(var, cfg.eps);
    let std = g.sqrt(var);
    g.concat(&[mean, min, max, rms, std], 1)
}

/// `[skewness, excess kurtosis]` from population central moments with `ε`
/// added to the second moment.
pub fn shape_rows(g: &mut Graph, rows: Var, cfg: &TsfConfig) -> Result<Var> {
    let mean = g.mean(rows, 1, true)?;
    let xc = g.sub(rows, mean)?;
    let xc2 = g.square(xc);
    let m2 = g.mean(xc2, 1, true)?;
    let xc3 = g.mul(xc2, xc)?;
    let m3 = g.mean(xc3, 1, true)?;
    let xc4 = g.square(xc2);
    let m4 = g.mean(xc4, 1, true)?;
    let m2e = g.offset(m2, cfg.eps);
    let d3 = g.powf(m2e, 1.5);
    let skew = g.div(m3, d3)?;
    let d4 = g.square(m2e);
    let kurt = g.div(m4, d4)?;
    let kurt = g.offset(kurt, -3.0);
    g.concat(&[skew, kurt], 1)
}
