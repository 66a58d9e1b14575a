//! Raw numeric kernels shared by the forward and backward passes.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Right-aligned broadcast of two shapes; extents must match or be 1.
pub(crate) fn broadcast_shape(kind: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape {
                    kind,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` expressed in the index space of `out` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast output.
pub(crate) fn for_each_broadcast(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == out && b == out {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    if a == out && out.ends_with(b) {
        for i in 0..n {
            f(i, i, i % nb);
        }
        return;
    }
    if b == out && out.ends_with(a) {
        for i in 0..n {
            f(i, i % na, i);
        }
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m,n] = a[m,k] @ b[k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |(i, o): (usize, &mut [f64])| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    };
    if m * k * n > PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `out[m,k] = g[m,n] @ b[k,n]^T`.
pub(crate) fn matmul_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    let row = |(i, o): (usize, &mut [f64])| {
        let gr = &g[i * n..(i + 1) * n];
        for (p, ov) in o.iter_mut().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            *ov = gr.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    };
    if m * k * n > PAR_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        out.chunks_mut(k).enumerate().for_each(row);
    }
    out
}

/// `out[k,n] = a[m,k]^T @ g[m,n]`, reduced over fixed row chunks so the
/// summation order does not depend on the thread count.
pub(crate) fn matmul_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    const CHUNK: usize = 256;
    let partial = |rows: std::ops::Range<usize>| {
        let mut acc = vec![0.0; k * n];
        for i in rows {
            let ar = &a[i * k..(i + 1) * k];
            let gr = &g[i * n..(i + 1) * n];
            for (p, &av) in ar.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let o = &mut acc[p * n..(p + 1) * n];
                for (ov, &gv) in o.iter_mut().zip(gr) {
                    *ov += av * gv;
                }
            }
        }
        acc
    };
    let chunks: Vec<_> = (0..m.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(m))
        .collect();
    let parts: Vec<Vec<f64>> = if m * k * n > PAR_THRESHOLD {
        chunks.into_par_iter().map(partial).collect()
    } else {
        chunks.into_iter().map(partial).collect()
    };
    let mut out = vec![0.0; k * n];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Geometry of a grouped 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub len_out: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }
    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }
}

impl ConvGeom {
    /// Output positions `t` whose tap `j` lands inside the input.
    fn valid(&self, j: usize) -> std::ops::Range<usize> {
        let lo = self.padding.saturating_sub(j).div_ceil(self.stride);
        let hi = if self.len + self.padding > j {
            ((self.len + self.padding - j - 1) / self.stride + 1).min(self.len_out)
        } else {
            0
        };
        lo..hi.max(lo)
    }
}

pub(crate) fn conv1d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.c_out * g.len_out];
    let per = g.c_out * g.len_out;
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let ranges: Vec<_> = (0..g.kernel).map(|j| g.valid(j)).collect();
    let body = |(b, o): (usize, &mut [f64])| {
        let xb = &x[b * g.c_in * g.len..(b + 1) * g.c_in * g.len];
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let orow = &mut o[co * g.len_out..(co + 1) * g.len_out];
            for ci in 0..cin_g {
                let xr = &xb[(grp * cin_g + ci) * g.len..(grp * cin_g + ci + 1) * g.len];
                let wr = &w[(co * cin_g + ci) * g.kernel..(co * cin_g + ci + 1) * g.kernel];
                for (j, &wv) in wr.iter().enumerate() {
                    let r = ranges[j].clone();
                    if r.is_empty() {
                        continue;
                    }
                    let first = r.start * g.stride + j - g.padding;
                    if g.stride == 1 {
                        let xs = &xr[first..first + r.len()];
                        for (ov, &xv) in orow[r].iter_mut().zip(xs) {
                            *ov += wv * xv;
                        }
                    } else {
                        for (k, ov) in orow[r].iter_mut().enumerate() {
                            *ov += wv * xr[first + k * g.stride];
                        }
                    }
                }
            }
        }
    };
    if g.batch * per * g.kernel * cin_g > PAR_THRESHOLD {
        out.par_chunks_mut(per).enumerate().for_each(body);
    } else {
        out.chunks_mut(per).enumerate().for_each(body);
    }
    out
}

/// Returns (dx, dw) for a grouped 1-D convolution.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let per_x = g.c_in * g.len;
    let per_o = g.c_out * g.len_out;
    let ranges: Vec<_> = (0..g.kernel).map(|j| g.valid(j)).collect();
    let item = |b: usize| {
        let xb = &x[b * per_x..(b + 1) * per_x];
        let gb = &gout[b * per_o..(b + 1) * per_o];
        let mut dx = if need_dx { vec![0.0; per_x] } else { Vec::new() };
        let mut dw = if need_dw { vec![0.0; w.len()] } else { Vec::new() };
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let grow = &gb[co * g.len_out..(co + 1) * g.len_out];
            for ci in 0..cin_g {
                let xi = grp * cin_g + ci;
                let woff = (co * cin_g + ci) * g.kernel;
                for j in 0..g.kernel {
                    let r = ranges[j].clone();
                    if r.is_empty() {
                        continue;
                    }
                    let first = xi * g.len + r.start * g.stride + j - g.padding;
                    let gs = &grow[r];
                    if need_dx {
                        let wv = w[woff + j];
                        if g.stride == 1 {
                            for (d, &gv) in dx[first..first + gs.len()].iter_mut().zip(gs) {
                                *d += gv * wv;
                            }
                        } else {
                            for (k, &gv) in gs.iter().enumerate() {
                                dx[first + k * g.stride] += gv * wv;
                            }
                        }
                    }
                    if need_dw {
                        dw[woff + j] += if g.stride == 1 {
                            dot(gs, &xb[first..first + gs.len()])
                        } else {
                            gs.iter()
                                .enumerate()
                                .map(|(k, &gv)| gv * xb[first + k * g.stride])
                                .sum()
                        };
                    }
                }
            }
        }
        (dx, dw)
    };
    let parts: Vec<(Vec<f64>, Vec<f64>)> = if g.batch * per_o * g.kernel * cin_g > PAR_THRESHOLD {
        (0..g.batch).into_par_iter().map(item).collect()
    } else {
        (0..g.batch).map(item).collect()
    };
    let mut dx = if need_dx {
        Vec::with_capacity(g.batch * per_x)
    } else {
        Vec::new()
    };
    let mut dw = if need_dw { vec![0.0; w.len()] } else { Vec::new() };
    for (px, pw) in parts {
        if need_dx {
            dx.extend(px);
        }
        if need_dw {
            for (a, b) in dw.iter_mut().zip(pw) {
                *a += b;
            }
        }
    }
    (dx, dw)
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Numerically safe logistic function; saturates to exactly 0 or 1.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Wraps an angle into (-π, π].
pub(crate) fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("add", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("add", &[2, 1], &[2, 4]).unwrap(), vec![2, 4]);
        assert!(broadcast_shape("add", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn general_broadcast_indices() {
        let mut seen = Vec::new();
        for_each_broadcast(&[2, 1], &[1, 3], &[2, 3], |o, a, b| seen.push((o, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]
        );
    }

    #[test]
    fn sigmoid_saturates_exactly() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn wrap_range() {
        use std::f64::consts::PI;
        for x in [-7.0, -PI, 0.0, PI, 3.5, 10.0] {
            let y = wrap_phase(x);
            assert!(y > -PI && y <= PI, "{x} -> {y}");
            assert!(((x - y) / (2.0 * PI)).fract().abs() < 1e-12 || ((x - y) / (2.0 * PI)).fract().abs() > 1.0 - 1e-12);
        }
    }
}
