//! Real-input discrete Fourier transform.
//!
//! The differentiable path multiplies by explicit cosine/sine matrices, which
//! keeps gradients on the ordinary matmul rule. [`fft_radix2`] is a fast
//! alternative for power-of-two lengths, used for cross-checking and for
//! non-differentiable spectra.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `(cos, -sin)` matrices of shape `[n, n/2+1]` so that `x @ cos` and
/// `x @ sin` are the real and imaginary parts of the one-sided spectrum.
pub fn dft_matrices(n: usize) -> (Tensor, Tensor) {
    let bins = n / 2 + 1;
    let mut c = Vec::with_capacity(n * bins);
    let mut s = Vec::with_capacity(n * bins);
    for t in 0..n {
        for k in 0..bins {
            // reduce k·t mod n first so large products keep full precision
            let angle = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
            c.push(angle.cos());
            s.push(0.0 - angle.sin());
        }
    }
    (
        Tensor::from_parts(vec![n, bins], c),
        Tensor::from_parts(vec![n, bins], s),
    )
}

/// Squared magnitudes `|X_k|²` of the last axis `[..., n] -> [..., n/2+1]`,
/// optionally multiplying by `window[n]` first.
pub fn dft_power(g: &mut Graph, signal: Var, window: Option<Var>) -> Result<Var> {
    let n = *g
        .shape(signal)
        .last()
        .ok_or_else(|| Error::Invalid("dft of a scalar".into()))?;
    if n < 2 {
        return Err(Error::Invalid(format!("dft needs at least 2 samples, got {n}")));
    }
    let x = match window {
        Some(w) => {
            if g.shape(w) != [n] {
                return Err(Error::Shape {
                    kind: "dft_magnitude",
                    lhs: g.shape(signal).to_vec(),
                    rhs: g.shape(w).to_vec(),
                });
            }
            g.mul(signal, w)?
        }
        None => signal,
    };
    let (c, s) = dft_matrices(n);
    let (c, s) = (g.constant(c), g.constant(s));
    let re = g.matmul(x, c)?;
    let im = g.matmul(x, s)?;
    let re2 = g.square(re);
    let im2 = g.square(im);
    g.add(re2, im2)
}

/// One-sided magnitude spectrum of `signal ⊙ window`; differentiable in both.
pub fn dft_magnitude(g: &mut Graph, signal: Var, window: Option<Var>) -> Result<Var> {
    let p = dft_power(g, signal, window)?;
    Ok(g.sqrt(p))
}

/// Full complex spectrum by direct summation.
pub fn dft_direct(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                let angle = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc + Complex64::new(v * angle.cos(), -v * angle.sin())
            })
        })
        .collect()
}

/// Full complex spectrum for power-of-two lengths.
pub fn fft_radix2(x: &[f64]) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Invalid(format!(
            "radix-2 transform needs a power-of-two length, got {n}"
        )));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf)
}

/// `(Σ x², (1/n)·Σ |X_k|²)` over the full direct spectrum; equal by Parseval.
pub fn parseval_energy(x: &[f64]) -> (f64, f64) {
    let time: f64 = x.iter().map(|v| v * v).sum();
    let freq: f64 = dft_direct(x).iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
    (time, freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn magnitudes(x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(x.to_vec()));
        let m = dft_magnitude(&mut g, v, None).unwrap();
        g.value(m).data().to_vec()
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let mags = magnitudes(&[-1.5; 16]);
        assert_eq!(mags.len(), 9);
        assert!((mags[0] - 24.0).abs() < 1e-12);
        assert!(mags[1..].iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn cosine_peaks_at_its_bin() {
        let x: Vec<f64> = (0..32).map(|t| (2.0 * PI * 4.0 * t as f64 / 32.0).cos()).collect();
        let mags = magnitudes(&x);
        let peak = (0..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        assert_eq!(peak, 4);
    }

    #[test]
    fn radix2_rejects_odd_lengths() {
        assert!(fft_radix2(&[1.0, 2.0, 3.0]).is_err());
    }
}
