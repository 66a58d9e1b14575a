use crate::error::Result;
use crate::tensor::{Graph, Var};

/// `r_k = Σ_t (x_t−μ)(x_{t+k}−μ) / (Σ_t (x_t−μ)² + ε)` per lag: `[R, m] -> [R, |lags|]`.
pub fn autocorr_rows(g: &mut Graph, rows: Var, lags: &[usize], eps: f64) -> Result<Var> {
    let m = g.shape(rows)[1];
    let mu = g.mean(rows, 1, true)?;
    let xc = g.sub(rows, mu)?;
    let sq = g.square(xc);
    let energy = g.sum(sq, 1, true)?;
    let denom = g.offset(energy, eps);
    let mut cols = Vec::with_capacity(lags.len());
    for &k in lags {
        let head = g.slice(xc, 1, 0, m - k)?;
        let tail = g.slice(xc, 1, k, m)?;
        let prod = g.mul(head, tail)?;
        cols.push(g.sum(prod, 1, true)?);
    }
    let num = g.concat(&cols, 1)?;
    g.div(num, denom)
}
