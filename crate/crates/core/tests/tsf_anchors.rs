mod common;

use std::f64::consts::PI;

use common::*;
use proptest::prelude::*;
use tcnet::tsf::{
    autocorr_rows, band_edges, crossings_rows, extract_rows_tensor, shape_rows, statistics_rows, Family, Mode,
    TsfConfig, TsfParams,
};
use tcnet::{Graph, Tensor};

fn anchors(data: &[Vec<f64>], cfg: &TsfConfig, params: &TsfParams, mode: Mode) -> Tensor {
    extract_rows_tensor(&rows(data), params, cfg, mode).unwrap()
}

fn family(z: &Tensor, r: usize, cfg: &TsfConfig, m: usize, fam: Family) -> Vec<f64> {
    let range = cfg.layout(m).unwrap().range(fam).unwrap();
    row(z, r)[range].to_vec()
}

/// Runs a row-level family function on plain rows.
fn apply(data: &[Vec<f64>], f: impl Fn(&mut Graph, tcnet::Var) -> tcnet::Result<tcnet::Var>) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(rows(data));
    let y = f(&mut g, x).unwrap();
    g.value(y).clone()
}

fn sine(m: usize, cycles_per_sample: f64, phase: f64) -> Vec<f64> {
    (0..m)
        .map(|t| (2.0 * PI * cycles_per_sample * t as f64 + phase).sin())
        .collect()
}

#[test]
fn layout_width_is_51_for_defaults() {
    assert_eq!(
        TsfConfig::default().layout(32).unwrap().width(),
        8 + 21 + 5 + 2 + 5 + 5 + 5
    );
}

#[test]
fn zero_signal_anchors() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let z = anchors(&[vec![0.0; 32]], &cfg, &params, Mode::Hard);
    assert!(family(&z, 0, &cfg, 32, Family::Filterbank).iter().all(|&v| v == 0.0));
    let stats = family(&z, 0, &cfg, 32, Family::Statistics);
    assert_eq!(&stats[..4], &[0.0; 4]);
    assert!((stats[4] - cfg.eps.sqrt()).abs() < 1e-15);
    assert!(family(&z, 0, &cfg, 32, Family::Crossing).iter().all(|&v| v == 0.0));
}

#[test]
fn filterbank_matches_direct_convolution() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let mut r = rng(1);
    let data: Vec<Vec<f64>> = (0..4).map(|_| normal(&mut r, 64)).collect();
    let z = anchors(&data, &cfg, &params, Mode::Hard);
    for (i, x) in data.iter().enumerate() {
        let got = family(&z, i, &cfg, 64, Family::Filterbank);
        for (f, &(lo, hi)) in band_edges(&params).iter().enumerate() {
            let want = band_energy(x, &bandpass(lo, hi, cfg.kernel_len));
            assert!(rel_err(got[f], want) < 1e-9, "band {f}: {} vs {want}", got[f]);
        }
    }
}

#[test]
fn sinusoid_peaks_in_its_band() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let edges = band_edges(&params);
    let m = 256;
    for (f, &(lo, hi)) in edges.iter().enumerate() {
        // bands narrower than the kernel's frequency resolution cannot isolate a tone
        if hi - lo < 1.0 / cfg.kernel_len as f64 {
            continue;
        }
        let f0 = 0.5 * (lo + hi);
        let z = anchors(&[sine(m, f0, 0.3)], &cfg, &params, Mode::Hard);
        let bands = family(&z, 0, &cfg, m, Family::Filterbank);
        let best = (0..bands.len()).max_by(|&a, &b| bands[a].total_cmp(&bands[b])).unwrap();
        assert_eq!(best, f, "tone at {f0} peaked in band {best}: {bands:?}");
    }
}

#[test]
fn white_noise_excites_every_band() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let mut r = rng(2);
    let data: Vec<Vec<f64>> = (0..100).map(|_| normal(&mut r, 64)).collect();
    let z = anchors(&data, &cfg, &params, Mode::Hard);
    for i in 0..100 {
        assert!(family(&z, i, &cfg, 64, Family::Filterbank).iter().all(|&v| v > 0.0));
    }
}

#[test]
fn spectral_matches_direct_dft_oracle() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let mut r = rng(3);
    for m in [32, 64, 96] {
        let data: Vec<Vec<f64>> = (0..5).map(|_| normal(&mut r, m)).collect();
        let z = anchors(&data, &cfg, &params, Mode::Soft);
        for (i, x) in data.iter().enumerate() {
            let got = family(&z, i, &cfg, m, Family::Spectral);
            let want = spectral(x, cfg.frame_len(m), cfg.sigma_w, cfg.sampling_rate, cfg.eps);
            for (a, b) in got.iter().zip(&want) {
                assert!(rel_err(*a, *b) < 1e-9, "m={m}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn constant_signal_spectrum_is_dc_only_with_flat_window() {
    let cfg = TsfConfig::default();
    let mut params = TsfParams::init(&cfg);
    params.log_sigma = Tensor::vector(vec![1e6f64.ln()]);
    let z = anchors(&[vec![1.7; 64]], &cfg, &params, Mode::Soft);
    let s = family(&z, 0, &cfg, 64, Family::Spectral);
    let bins = 17;
    assert!(s[bins].abs() < 1e-9, "centroid {}", s[bins]);
    // −p·ln(p + ε) with p ≈ 1 leaves an O(ε) residue
    assert!(s[bins + 2].abs() < 2.0 * cfg.eps, "entropy {}", s[bins + 2]);
}

#[test]
fn white_noise_spectral_entropy_near_uniform() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let mut r = rng(4);
    let m = 256;
    let data: Vec<Vec<f64>> = (0..100).map(|_| normal(&mut r, m)).collect();
    let z = anchors(&data, &cfg, &params, Mode::Soft);
    let bins = cfg.frame_len(m) / 2 + 1;
    let mean_h = (0..100)
        .map(|i| family(&z, i, &cfg, m, Family::Spectral)[bins + 2])
        .sum::<f64>()
        / 100.0;
    let target = (bins as f64).ln();
    assert!((mean_h - target).abs() < 0.1 * target, "{mean_h} vs {target}");
}

#[test]
fn sinusoid_centroid_within_one_bin() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let frame = 32;
    for k in 1..frame / 2 {
        let z = anchors(&[sine(128, k as f64 / frame as f64, 0.2)], &cfg, &params, Mode::Soft);
        let centroid = family(&z, 0, &cfg, 128, Family::Spectral)[frame / 2 + 1];
        let want = k as f64 * cfg.sampling_rate / frame as f64;
        assert!(
            (centroid - want).abs() <= cfg.sampling_rate / frame as f64,
            "bin {k}: {centroid}"
        );
    }
}

#[test]
fn statistics_hand_values() {
    let cfg = TsfConfig::default();
    let z = apply(&[vec![-1.0, 1.0]], |g, x| statistics_rows(g, x, &cfg, Mode::Hard));
    let want = [0.0, -1.0, 1.0, 1.0, 1.0];
    for (a, b) in z.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    let z = apply(&[vec![-2.5; 8]], |g, x| statistics_rows(g, x, &cfg, Mode::Hard));
    assert_eq!(&z.data()[..4], &[-2.5, -2.5, -2.5, 2.5]);
    assert!((z.data()[4] - cfg.eps.sqrt()).abs() < 1e-15);
}

#[test]
fn hard_families_match_oracles() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let mut r = rng(5);
    let m = 48;
    let data: Vec<Vec<f64>> = (0..20).map(|_| normal(&mut r, m)).collect();
    let z = anchors(&data, &cfg, &params, Mode::Hard);
    for (i, x) in data.iter().enumerate() {
        let close = |got: Vec<f64>, want: &[f64], what: &str| {
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{what}: {a} vs {b}");
            }
        };
        close(
            family(&z, i, &cfg, m, Family::Statistics),
            &statistics(x, cfg.eps),
            "statistics",
        );
        close(family(&z, i, &cfg, m, Family::Shape), &shape(x, cfg.eps), "shape");
        close(
            family(&z, i, &cfg, m, Family::Crossing),
            &crossings(x, cfg.eps),
            "crossing",
        );
        let q: Vec<f64> = cfg.quantile_levels.iter().map(|&p| quantile(x, p)).collect();
        close(family(&z, i, &cfg, m, Family::Quantiles), &q, "quantiles");
        close(
            family(&z, i, &cfg, m, Family::Autocorr),
            &autocorr(x, &cfg.autocorr_lags, cfg.eps),
            "autocorr",
        );
    }
}

#[test]
fn autocorr_matches_direct_sum_to_1e9() {
    let lags = [1, 2, 3, 7, 15];
    let mut r = rng(6);
    let data: Vec<Vec<f64>> = (0..10).map(|_| normal(&mut r, 64)).collect();
    let z = apply(&data, |g, x| autocorr_rows(g, x, &lags, 1e-8));
    for (i, x) in data.iter().enumerate() {
        for (a, b) in row(&z, i).iter().zip(autocorr(x, &lags, 1e-8)) {
            assert!(rel_err(*a, b) < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn shape_examples() {
    let cfg = TsfConfig::default();
    let mut r = rng(7);
    let x = normal(&mut r, 64);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let z = apply(&[x, neg], |g, x| shape_rows(g, x, &cfg));
    assert!((z.data()[0] + z.data()[2]).abs() < 1e-12);
    let z = apply(&[vec![3.0; 16]], |g, x| shape_rows(g, x, &cfg));
    assert_eq!(z.data(), &[0.0, -3.0]);
    let big = normal(&mut r, 10_000);
    let z = apply(&[big], |g, x| shape_rows(g, x, &cfg));
    assert!(z.data()[0].abs() < 0.1 && z.data()[1].abs() < 0.2, "{:?}", z.data());
}

#[test]
fn crossing_examples() {
    let cfg = TsfConfig::default();
    let m = 64;
    let positive: Vec<f64> = (0..m).map(|t| 1.0 + (t as f64 * 0.3).sin().abs()).collect();
    let alternating: Vec<f64> = (0..m).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let z = apply(&[positive, alternating], |g, x| crossings_rows(g, x, &cfg, Mode::Hard));
    assert_eq!(z.data()[0], 0.0);
    assert_eq!(z.data()[5], 1.0);
    assert_eq!(z.data()[9] * (m - 2) as f64, (m - 2) as f64);
    for k in 1..10 {
        let x: Vec<f64> = (0..m)
            .map(|t| (2.0 * PI * k as f64 * t as f64 / m as f64).sin())
            .collect();
        let z = apply(&[x], |g, x| crossings_rows(g, x, &cfg, Mode::Hard));
        let crossings = z.data()[0] * (m - 1) as f64;
        assert!((crossings - 2.0 * k as f64).abs() <= 1.0 + 1e-9, "k={k}: {crossings}");
    }
}

#[test]
fn quantile_examples() {
    let levels = [0.1, 0.5, 0.9];
    let mut g = Graph::new();
    let x = g.constant(rows(&[(1..=100).map(f64::from).collect(), vec![4.25; 100]]));
    let hard = g.hard_quantile(x, &levels).unwrap();
    let soft = g.soft_quantile(x, &levels, 0.1).unwrap();
    assert_eq!(g.value(hard).data()[1], 50.5);
    assert_eq!(&g.value(hard).data()[3..], &[4.25; 3]);
    assert_eq!(&g.value(soft).data()[3..], &[4.25; 3]);
}

#[test]
fn autocorr_examples() {
    let cfg = TsfConfig::default();
    let z = apply(&[vec![2.0; 40]], |g, x| {
        autocorr_rows(g, x, &cfg.autocorr_lags, cfg.eps)
    });
    assert!(z.data().iter().all(|&v| v == 0.0));
    // the lag-T sum has m − T terms, so r_T ≈ (m − T)/m for a pure tone
    for t in [4, 8, 16] {
        let x = sine(4 * t, 1.0 / t as f64, 0.4);
        let z = apply(&[x], |g, x| autocorr_rows(g, x, &[t], cfg.eps));
        assert!((z.data()[0] - 0.75).abs() < 0.02, "period {t}: {}", z.data()[0]);
        let x = sine(32 * t, 1.0 / t as f64, 0.4);
        let z = apply(&[x], |g, x| autocorr_rows(g, x, &[t], cfg.eps));
        assert!(z.data()[0] > 0.95, "period {t}: {}", z.data()[0]);
    }
    let mut r = rng(8);
    let data: Vec<Vec<f64>> = (0..100).map(|_| normal(&mut r, 256)).collect();
    let z = apply(&data, |g, x| autocorr_rows(g, x, &cfg.autocorr_lags, cfg.eps));
    for k in 0..cfg.autocorr_lags.len() {
        let mean_abs = (0..100).map(|i| row(&z, i)[k].abs()).sum::<f64>() / 100.0;
        assert!(mean_abs < 0.2, "lag {}: {mean_abs}", cfg.autocorr_lags[k]);
    }
}

#[test]
fn bias_invariant_families() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let mut r = rng(9);
    let m = 64;
    let x = normal(&mut r, m);
    let shifted: Vec<f64> = x.iter().map(|v| v + 2.5).collect();
    let z = anchors(&[x, shifted], &cfg, &params, Mode::Soft);
    let pair = |fam| (family(&z, 0, &cfg, m, fam), family(&z, 1, &cfg, m, fam));
    let (s0, s1) = pair(Family::Statistics);
    assert!((s1[4] - s0[4]).abs() < 1e-9, "std");
    let (h0, h1) = pair(Family::Shape);
    for (a, b) in h0.iter().zip(&h1) {
        assert!((a - b).abs() < 1e-9, "shape");
    }
    let (c0, c1) = pair(Family::Crossing);
    assert!((c0[1] - c1[1]).abs() < 1e-9, "mean-crossing rate");
    let (a0, a1) = pair(Family::Autocorr);
    for (a, b) in a0.iter().zip(&a1) {
        assert!((a - b).abs() < 1e-9, "autocorr");
    }
}

#[test]
fn extract_all_gradient_check() {
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let mut r = rng(10);
    let x = Tensor::new(vec![1, 32], normal(&mut r, 32)).unwrap();
    let weights = Tensor::new(vec![51, 1], normal(&mut r, 51)).unwrap();
    let err = tcnet::tensor::grad_check(
        |g, x| {
            let vars = params.bind(g, false);
            let blocks = g.reshape(x, &[1, 1, 32, 1])?;
            let z = tcnet::tsf::extract_all(g, blocks, &vars, &cfg, Mode::Soft)?;
            let z = g.reshape(z, &[1, 51])?;
            let w = g.constant(weights.clone());
            let y = g.matmul(z, w)?;
            g.sum_all(y)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mean_shifts_exactly_with_bias(ints in prop::collection::vec(-400i32..400, 32), c in -50i32..50) {
        let cfg = TsfConfig::default();
        let x: Vec<f64> = ints.iter().map(|&v| f64::from(v) / 8.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v + f64::from(c)).collect();
        let z = apply(&[x, y], |g, x| statistics_rows(g, x, &cfg, Mode::Soft));
        prop_assert_eq!(row(&z, 1)[0], row(&z, 0)[0] + f64::from(c));
    }

    #[test]
    fn soft_quantiles_are_monotone(x in prop::collection::vec(-5.0f64..5.0, 8..64), tau in 0.01f64..1.0) {
        let levels = [0.05, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 0.95];
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![1, x.len()], x.clone()).unwrap());
        let q = g.soft_quantile(v, &levels, tau).unwrap();
        let q = g.value(q).data().to_vec();
        for w in q.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6, "{:?}", q);
        }
    }

    #[test]
    fn quantiles_and_extrema_scale_linearly(x in prop::collection::vec(-5.0f64..5.0, 8..64), a in 0.1f64..10.0) {
        prop_assume!(range(&x) > 1e-3);
        let levels = [0.1, 0.5, 0.9];
        let tau = 0.05 * range(&x);
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![1, x.len()], x.clone()).unwrap());
        let av = g.constant(Tensor::new(vec![1, x.len()], ax).unwrap());
        let q = g.soft_quantile(v, &levels, tau).unwrap();
        let aq = g.soft_quantile(av, &levels, a * tau).unwrap();
        for (p, ap) in g.value(q).data().iter().zip(g.value(aq).data()) {
            prop_assert!((ap - a * p).abs() <= 1e-6 * (a * p).abs().max(a * range(&x)), "{} vs {}", ap, a * p);
        }
        let cfg = TsfConfig { tau_stat: tau, ..TsfConfig::default() };
        let acfg = TsfConfig { tau_stat: a * tau, ..TsfConfig::default() };
        let s = apply(std::slice::from_ref(&x), |g, x| statistics_rows(g, x, &cfg, Mode::Soft));
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let sa = apply(&[ax], |g, x| statistics_rows(g, x, &acfg, Mode::Soft));
        for k in [1, 2] {
            prop_assert!((sa.data()[k] - a * s.data()[k]).abs() <= 1e-6 * (a * s.data()[k]).abs().max(1e-12));
        }
    }

    #[test]
    fn autocorr_bounded(x in prop::collection::vec(-5.0f64..5.0, 16..64)) {
        let z = apply(&[x], |g, x| autocorr_rows(g, x, &[1, 2, 3, 5, 8], 1e-8));
        for &r in z.data() {
            prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&r));
        }
    }
}
