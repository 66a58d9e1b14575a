//! Independent plain-Rust oracles shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use tcnet::nn::{seeded, Rng64};
use tcnet::Tensor;

pub fn rng(seed: u64) -> Rng64 {
    seeded(seed)
}

pub fn normal(rng: &mut Rng64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z
        })
        .collect()
}

pub fn uniform(rng: &mut Rng64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rows(data: &[Vec<f64>]) -> Tensor {
    let m = data[0].len();
    Tensor::new(vec![data.len(), m], data.concat()).unwrap()
}

pub fn row(t: &Tensor, r: usize) -> &[f64] {
    let w = t.shape()[1];
    &t.data()[r * w..(r + 1) * w]
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn range(x: &[f64]) -> f64 {
    x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// `[mean, min, max, rms, std]` with ε inside the variance root.
pub fn statistics(x: &[f64], eps: f64) -> [f64; 5] {
    let mu = mean(x);
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64;
    [mu, min, max, rms, (var + eps).sqrt()]
}

/// `[skew, excess kurtosis]` from population moments.
pub fn shape(x: &[f64], eps: f64) -> [f64; 2] {
    let mu = mean(x);
    let n = x.len() as f64;
    let m = |k: i32| x.iter().map(|v| (v - mu).powi(k)).sum::<f64>() / n;
    let m2 = m(2) + eps;
    [m(3) / m2.powf(1.5), m(4) / (m2 * m2) - 3.0]
}

pub fn sign_changes(x: &[f64]) -> usize {
    x.windows(2).filter(|w| w[0] * w[1] < 0.0).count()
}

/// Hard crossing family by counting sign changes.
pub fn crossings(x: &[f64], eps: f64) -> [f64; 5] {
    let m = x.len();
    let mu = mean(x);
    let centred: Vec<f64> = x.iter().map(|v| v - mu).collect();
    let diff: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let signs: Vec<f64> = x
        .iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let dz = sign_changes(&diff) as f64 / (m - 2) as f64;
    [
        sign_changes(x) as f64 / (m - 1) as f64,
        sign_changes(&centred) as f64 / (m - 1) as f64,
        dz,
        autocorr(&signs, &[1], eps)[0],
        dz,
    ]
}

/// Sorted-order quantile at position `p·m − 0.5`, linearly interpolated.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (p * s.len() as f64 - 0.5).clamp(0.0, (s.len() - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

pub fn autocorr(x: &[f64], lags: &[usize], eps: f64) -> Vec<f64> {
    let mu = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - mu).collect();
    let energy: f64 = c.iter().map(|v| v * v).sum();
    lags.iter()
        .map(|&k| (0..x.len() - k).map(|t| c[t] * c[t + k]).sum::<f64>() / (energy + eps))
        .collect()
}

/// `(re, im)` of the direct DFT for bins `0..=n/2`.
pub fn dft_half(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = 2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            (re, im)
        })
        .collect()
}

fn wrap(d: f64) -> f64 {
    let mut d = d % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Spectral family of one row: per-bin frame-mean `log(1 + power)`, then
/// centroid, bandwidth, entropy and mean |wrapped phase step|.
pub fn spectral(x: &[f64], frame: usize, sigma: f64, fs: f64, eps: f64) -> Vec<f64> {
    let hop = (frame / 2).max(1);
    let bins = frame / 2 + 1;
    let centre = (frame as f64 - 1.0) / 2.0;
    let win: Vec<f64> = (0..frame)
        .map(|t| (-(t as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut spectra = Vec::new();
    let mut start = 0;
    while start + frame <= x.len() {
        let seg: Vec<f64> = (0..frame).map(|t| x[start + t] * win[t]).collect();
        spectra.push(dft_half(&seg));
        start += hop;
    }
    let nf = spectra.len() as f64;
    let mut out = vec![0.0; bins];
    let mut pbar = vec![0.0; bins];
    for s in &spectra {
        for (k, &(re, im)) in s.iter().enumerate() {
            let p = re * re + im * im;
            out[k] += p.ln_1p() / nf;
            pbar[k] += p / nf;
        }
    }
    let total: f64 = pbar.iter().sum::<f64>() + eps;
    let p: Vec<f64> = pbar.iter().map(|v| v / total).collect();
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * fs / frame as f64).collect();
    let centroid: f64 = p.iter().zip(&freqs).map(|(a, f)| a * f).sum();
    let spread: f64 = p.iter().zip(&freqs).map(|(a, f)| a * (f - centroid).powi(2)).sum();
    let entropy: f64 = -p.iter().map(|a| a * (a + eps).ln()).sum::<f64>();
    let mut phase = 0.0;
    if spectra.len() >= 2 {
        for w in spectra.windows(2) {
            for (&(r0, i0), &(r1, i1)) in w[0].iter().zip(&w[1]) {
                phase += wrap(i1.atan2(r1) - i0.atan2(r0)).abs();
            }
        }
        phase /= ((spectra.len() - 1) * bins) as f64;
    }
    out.extend([centroid, (spread + eps).sqrt(), entropy, phase]);
    out
}

/// Hamming-windowed sinc band-pass taps centred on the middle tap.
pub fn bandpass(lo: f64, hi: f64, taps: usize) -> Vec<f64> {
    let lp = |f: f64, t: f64| {
        if t == 0.0 {
            2.0 * f
        } else {
            (2.0 * PI * f * t).sin() / (PI * t)
        }
    };
    (0..taps)
        .map(|j| {
            let t = j as f64 - (taps / 2) as f64;
            let w = 0.54 - 0.46 * (2.0 * PI * j as f64 / (taps - 1) as f64).cos();
            (lp(hi, t) - lp(lo, t)) * w
        })
        .collect()
}

/// Mean squared "same"-length zero-padded response of `x` to `h`.
pub fn band_energy(x: &[f64], h: &[f64]) -> f64 {
    let half = h.len() / 2;
    let m = x.len();
    (0..m)
        .map(|n| {
            let y: f64 = h
                .iter()
                .enumerate()
                .filter_map(|(j, &w)| (n + j).checked_sub(half).filter(|&i| i < m).map(|i| w * x[i]))
                .sum();
            y * y
        })
        .sum::<f64>()
        / m as f64
}

pub fn majority_mf1(labels: &[usize], n_classes: usize) -> f64 {
    let mut counts = vec![0usize; n_classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let top = (0..n_classes).max_by_key(|&k| (counts[k], usize::MAX - k)).unwrap();
    let prec = counts[top] as f64 / labels.len() as f64;
    2.0 * prec / (prec + 1.0) / n_classes as f64
}
