use super::{TsfConfig, TsfParams, TsfVars};
use crate::error::Result;
use crate::tensor::{ops::sigmoid, Graph, Var};

/// `(f_low, f_high)` per filter in cycles/sample.
pub fn band_edges(params: &TsfParams) -> Vec<(f64, f64)> {
    params
        .u_low
        .data()
        .iter()
        .zip(params.u_high.data())
        .map(|(&ul, &uh)| {
            let hi = 0.5 * sigmoid(uh);
            (hi * sigmoid(ul), hi)
        })
        .collect()
}

/// Mean squared response of each sinc band-pass filter: `[R, m] -> [R, F]`.
///
/// The convolution is zero-padded to keep `m` output samples per row.
pub fn filterbank_rows(g: &mut Graph, rows: Var, vars: &TsfVars, cfg: &TsfConfig) -> Result<Var> {
    let (r, m) = (g.shape(rows)[0], g.shape(rows)[1]);
    let s_hi = g.sigmoid(vars.u_high);
    let f_hi = g.scale(s_hi, 0.5);
    let s_lo = g.sigmoid(vars.u_low);
    let f_lo = g.mul(f_hi, s_lo)?;
    let kernels = g.sinc_kernels(f_lo, f_hi, cfg.kernel_len)?;
    let f = g.shape(kernels)[0];
    let w = g.reshape(kernels, &[f, 1, cfg.kernel_len])?;
    let x = g.reshape(rows, &[r, 1, m])?;
    let y = g.conv1d(x, w, 1, cfg.kernel_len / 2, 1)?;
    let y2 = g.square(y);
    g.mean(y2, 2, false)
}
