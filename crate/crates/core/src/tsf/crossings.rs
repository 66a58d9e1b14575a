use super::{Mode, TsfConfig};
use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Mean over consecutive pairs `(a, b)` of the crossing indicator:
/// `σ(−a·b/τ)` in soft mode, `[a·b < 0]` in hard mode. `[R, n] -> [R, 1]`.
fn crossing_rate(g: &mut Graph, x: Var, tau: f64, mode: Mode) -> Result<Var> {
    let n = g.shape(x)[1];
    match mode {
        Mode::Soft => {
            let a = g.slice(x, 1, 0, n - 1)?;
            let b = g.slice(x, 1, 1, n)?;
            let ab = g.mul(a, b)?;
            let arg = g.scale(ab, -1.0 / tau);
            let ind = g.sigmoid(arg);
            g.mean(ind, 1, true)
        }
        Mode::Hard => {
            let rows = g.shape(x)[0];
            let v = g.value(x).data();
            let rates = (0..rows)
                .map(|r| {
                    let row = &v[r * n..(r + 1) * n];
                    let c = row.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
                    c as f64 / (n - 1) as f64
                })
                .collect();
            Ok(g.constant(Tensor::new(vec![rows, 1], rates)?))
        }
    }
}

/// Lag-1 autocorrelation with the same ε convention as the autocorr family.
fn lag1(g: &mut Graph, s: Var, eps: f64) -> Result<Var> {
    super::autocorr_rows(g, s, &[1], eps)
}

/// `[zcr, mean-crossing rate, zcr of first difference, regularity, extrema rate]`.
///
/// Regularity is the lag-1 autocorrelation of `tanh(x/τ)` (exact signs in
/// hard mode). The extrema rate counts slope sign changes over `m − 2` pairs,
/// which makes it the same quantity as the first-difference crossing rate.
pub fn crossings_rows(g: &mut Graph, rows: Var, cfg: &TsfConfig, mode: Mode) -> Result<Var> {
    let m = g.shape(rows)[1];
    let tau = cfg.tau_cross;
    let zcr = crossing_rate(g, rows, tau, mode)?;
    let mean = g.mean(rows, 1, true)?;
    let centred = g.sub(rows, mean)?;
    let mcr = crossing_rate(g, centred, tau, mode)?;
    let head = g.slice(rows, 1, 0, m - 1)?;
    let tail = g.slice(rows, 1, 1, m)?;
    let diff = g.sub(tail, head)?;
    let dzcr = crossing_rate(g, diff, tau, mode)?;
    let signs = match mode {
        Mode::Soft => {
            let z = g.scale(rows, 1.0 / tau);
            g.tanh(z)
        }
        Mode::Hard => {
            let s = g.value(rows).map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            g.constant(s)
        }
    };
    let regularity = lag1(g, signs, cfg.eps)?;
    let extrema = crossing_rate(g, diff, tau, mode)?;
    g.concat(&[zcr, mcr, dzcr, regularity, extrema], 1)
}
