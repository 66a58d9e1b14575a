//! Blocking acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Positional arguments select
//! criteria by substring of their label, e.g. `cargo test --test acceptance -- criterion_4`.

mod common;

use std::env;
use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;
use tcnet::correction::{apply_correction, assemble_views, correction_regularizers, CorrectionLogits};
use tcnet::data::{noise_generate, synth_generate, WindowedDataset};
use tcnet::forest::{extract_rf_features, rf_column_families, Forest, ForestConfig, RfFeatureConfig};
use tcnet::model::{n_blocks, preset, unfold_blocks, CompactConfig, CompactTcNet, TcNet};
use tcnet::probe::{ridge_probe, TargetGroup};
use tcnet::sensitivity::{periodic_windows, sensitivity_scan, PerturbationKind, PerturbationSpec};
use tcnet::train::ssl::ssl_head_accuracy;
use tcnet::train::{
    cross_entropy, evaluate, freeze_embed, metrics, ssl_pretrain, stratified_split, total_loss, train, SslConfig,
    TrainConfig,
};
use tcnet::tsf::{
    autocorr_rows, crossings_rows, extract_rows_tensor, statistics_rows, Family, Mode, TsfConfig, TsfParams,
};
use tcnet::verify::{run_suite, SuiteModule, TOLERANCE};
use tcnet::{Graph, Tensor, Var};

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    label: &'static str,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 9] = [
    Criterion {
        id: 1,
        label: "gradient_oracle",
        run: gradient_oracle,
    },
    Criterion {
        id: 2,
        label: "soft_hard_convergence",
        run: soft_hard_convergence,
    },
    Criterion {
        id: 3,
        label: "anchor_invariants",
        run: anchor_invariants,
    },
    Criterion {
        id: 4,
        label: "formula_conformance",
        run: formula_conformance,
    },
    Criterion {
        id: 5,
        label: "end_to_end_learning",
        run: end_to_end_learning,
    },
    Criterion {
        id: 6,
        label: "rf_baseline",
        run: rf_baseline,
    },
    Criterion {
        id: 7,
        label: "probe_machinery",
        run: probe_machinery,
    },
    Criterion {
        id: 8,
        label: "ssl_protocol",
        run: ssl_protocol,
    },
    Criterion {
        id: 9,
        label: "sensitivity_tool",
        run: sensitivity_tool,
    },
];

/// Dataset file for the informative real-data check.
const HAR_ENV: &str = "TCNET_UCI_HAR_DATA";

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn selected(filters: &[String], label: &str) -> bool {
    filters.is_empty() || filters.iter().any(|f| label.contains(f.as_str()))
}

fn main() -> ExitCode {
    let filters: Vec<String> = env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for c in &CRITERIA {
        let label = format!("criterion_{}_{}", c.id, c.label);
        if !selected(&filters, &label) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(c.run).unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(p))));
        let secs = start.elapsed().as_secs_f64();
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("criterion {:>2} {:<22} {verdict} {secs:>7.1}s  {detail}", c.id, c.label);
        if outcome.is_err() {
            failed.push(c.id);
        }
    }
    if selected(&filters, "criterion_10_har_rf_informative") {
        let line = match env::var_os(HAR_ENV) {
            Some(path) => har_informative(PathBuf::from(path)).unwrap_or_else(|e| format!("error: {e}")),
            None => format!("SKIP (set {HAR_ENV} to an imported 9-channel dataset)"),
        };
        println!("criterion 10 {:<22} INFO  {line}", "har_rf_informative");
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- criterion 1

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let results = run_suite(&SuiteModule::ALL, 20, 0).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let detail = format!("{} operations, worst rel err {worst:.2e}, {secs:.1}s", results.len());
    let bad: Vec<String> = results
        .iter()
        .filter(|r| !r.passed || r.max_rel_error >= TOLERANCE || r.inputs < 20)
        .map(|r| {
            format!(
                "{}/{} ({:.2e}, {} inputs)",
                r.module.name(),
                r.op,
                r.max_rel_error,
                r.inputs
            )
        })
        .collect();
    ensure(bad.is_empty(), || format!("{detail}; failing: {}", bad.join(", ")))?;
    let required = Family::ALL.iter().map(|f| ("tsf", f.name())).chain([
        ("correction", "apply_correction"),
        ("model", "branches"),
        ("model", "fusion"),
        ("model", "classifier"),
        ("loss", "total_loss"),
    ]);
    for (module, op) in required {
        ensure(
            results
                .iter()
                .any(|r| r.module.name() == module && r.op.starts_with(op)),
            || format!("{detail}; no check covers {module}/{op}"),
        )?;
    }
    ensure(results.iter().any(|r| r.module.name() == "tensor"), || {
        format!("{detail}; no tensor checks")
    })?;
    ensure(secs < 300.0, || format!("{detail}; slower than 300s"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 2

const GRID: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];

/// Normal rows rescaled to unit range, so temperature `t·range` is `t`.
fn unit_range_rows(seed: u64, count: usize, m: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let x = normal(&mut r, m);
            let span = range(&x);
            x.iter().map(|v| v / span).collect()
        })
        .collect()
}

fn eval_rows(data: &[Vec<f64>], f: impl Fn(&mut Graph, Var) -> tcnet::Result<Var>) -> Result<(Tensor, usize), String> {
    let mut g = Graph::new();
    let x = g.constant(rows(data));
    let y = f(&mut g, x).map_err(err)?;
    Ok((g.value(y).clone(), g.quantile_fallbacks()))
}

struct Sweep {
    family: &'static str,
    /// Max deviation per temperature, in tolerance units (pass means < 1).
    scaled: [f64; 4],
    fallbacks: usize,
}

impl Sweep {
    fn monotone(&self) -> bool {
        self.scaled.windows(2).all(|w| w[1] <= w[0])
    }

    fn passed(&self) -> bool {
        self.monotone() && self.scaled[3] < 1.0
    }

    fn describe(&self, m: usize) -> String {
        let s: Vec<String> = self.scaled.iter().map(|v| format!("{v:.3}")).collect();
        format!(
            "{}@m={m} [{}]{}{}",
            self.family,
            s.join(" "),
            if self.monotone() { "" } else { " non-monotone" },
            if self.fallbacks > 0 {
                format!(" ({} fallbacks)", self.fallbacks)
            } else {
                String::new()
            }
        )
    }
}

/// Statistics: max |soft − hard| over all columns, tolerance 1e-3.
fn sweep_statistics(data: &[Vec<f64>]) -> Result<Sweep, String> {
    let mut scaled = [0.0; 4];
    let base = TsfConfig::default();
    let (hard, _) = eval_rows(data, |g, x| statistics_rows(g, x, &base, Mode::Hard))?;
    for (i, &t) in GRID.iter().enumerate() {
        let cfg = TsfConfig {
            tau_stat: t,
            ..base.clone()
        };
        let (soft, _) = eval_rows(data, |g, x| statistics_rows(g, x, &cfg, Mode::Soft))?;
        scaled[i] = soft.max_abs_diff(&hard) / 1e-3;
    }
    Ok(Sweep {
        family: "statistics",
        scaled,
        fallbacks: 0,
    })
}

/// Crossings: max |soft − hard| in units of one crossing, `1/(m−1)`.
fn sweep_crossings(data: &[Vec<f64>]) -> Result<Sweep, String> {
    let m = data[0].len();
    let mut scaled = [0.0; 4];
    let base = TsfConfig::default();
    let (hard, _) = eval_rows(data, |g, x| crossings_rows(g, x, &base, Mode::Hard))?;
    for (i, &t) in GRID.iter().enumerate() {
        let cfg = TsfConfig {
            tau_cross: t,
            ..base.clone()
        };
        let (soft, _) = eval_rows(data, |g, x| crossings_rows(g, x, &cfg, Mode::Soft))?;
        scaled[i] = soft.max_abs_diff(&hard) * (m - 1) as f64;
    }
    Ok(Sweep {
        family: "crossing",
        scaled,
        fallbacks: 0,
    })
}

/// Quantiles: max |soft − hard| / IQR per row, tolerance 1e-2.
fn sweep_quantiles(data: &[Vec<f64>]) -> Result<Sweep, String> {
    let levels = TsfConfig::default().quantile_levels;
    let mut scaled = [0.0; 4];
    let mut fallbacks = 0;
    let (hard, _) = eval_rows(data, |g, x| g.hard_quantile(x, &levels))?;
    for (i, &t) in GRID.iter().enumerate() {
        let (soft, fb) = eval_rows(data, |g, x| g.soft_quantile(x, &levels, t))?;
        fallbacks += fb;
        for (r, x) in data.iter().enumerate() {
            let iqr = quantile(x, 0.75) - quantile(x, 0.25);
            for (a, b) in row(&soft, r).iter().zip(row(&hard, r)) {
                scaled[i] = f64::max(scaled[i], (a - b).abs() / iqr / 1e-2);
            }
        }
    }
    Ok(Sweep {
        family: "quantiles",
        scaled,
        fallbacks,
    })
}

fn oracle_match(data: &[Vec<f64>]) -> Result<f64, String> {
    let m = data[0].len();
    let cfg = TsfConfig::default();
    let params = TsfParams::init(&cfg);
    let z = extract_rows_tensor(&rows(data), &params, &cfg, Mode::Soft).map_err(err)?;
    let layout = cfg.layout(m).map_err(err)?;
    let (ac_cols, sp_cols) = (
        layout.range(Family::Autocorr).unwrap(),
        layout.range(Family::Spectral).unwrap(),
    );
    let (direct, _) = eval_rows(data, |g, x| autocorr_rows(g, x, &cfg.autocorr_lags, cfg.eps))?;
    let mut worst: f64 = 0.0;
    for (i, x) in data.iter().enumerate() {
        let ac = autocorr(x, &cfg.autocorr_lags, cfg.eps);
        let sp = spectral(x, cfg.frame_len(m), cfg.sigma_w, cfg.sampling_rate, cfg.eps);
        for (a, b) in row(&z, i)[ac_cols.clone()].iter().zip(&ac) {
            worst = worst.max(rel_err(*a, *b));
        }
        for (a, b) in row(&direct, i).iter().zip(&ac) {
            worst = worst.max(rel_err(*a, *b));
        }
        for (a, b) in row(&z, i)[sp_cols.clone()].iter().zip(&sp) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    Ok(worst)
}

fn soft_hard_convergence() -> Outcome {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for m in [32, 128] {
        let data = unit_range_rows(m as u64, 50, m);
        for sweep in [
            sweep_statistics(&data)?,
            sweep_crossings(&data)?,
            sweep_quantiles(&data)?,
        ] {
            let text = sweep.describe(m);
            if !sweep.passed() {
                failures.push(text.clone());
            }
            notes.push(text);
        }
        let worst = oracle_match(&data)?;
        let text = format!("autocorr+spectral@m={m} rel {worst:.1e}");
        if worst >= 1e-9 {
            failures.push(text.clone());
        }
        notes.push(text);
    }
    let detail = format!("deviation/tolerance over tau grid: {}", notes.join("; "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} | failing: {}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------- criterion 3

fn uniform_tensor(r: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// `[b, n, c, d]` channel slice `k·c..(k+1)·c` of a `[b, n, K·c, d]` tensor.
fn view_slice(t: &Tensor, k: usize, c: usize) -> Vec<f64> {
    let s = t.shape();
    let (kc, d) = (s[2], s[3]);
    let mut out = Vec::new();
    for outer in 0..s[0] * s[1] {
        let base = outer * kc * d + k * c * d;
        out.extend_from_slice(&t.data()[base..base + c * d]);
    }
    out
}

struct Case {
    shape: [usize; 4],
    families: usize,
    views: usize,
    seed: u64,
}

fn invariant_case(case: &Case) -> Result<(), String> {
    let mut r = rng(case.seed);
    let [b, n, c, d] = case.shape;
    let f = case.families;
    let column_family: Vec<usize> = (0..d).map(|j| if j < f { j } else { r.random_range(0..f) }).collect();
    let z_raw = uniform_tensor(&mut r, &case.shape, -100.0, 100.0);
    let s_max = r.random_range(0.01..1.0);
    let b_max = r.random_range(0.01..2.0);
    let logits: Vec<[Tensor; 3]> = (0..case.views)
        .map(|_| [0; 3].map(|_| uniform_tensor(&mut r, &[b, n, c, f], -15.0, 15.0)))
        .collect();
    let alphas: Vec<f64> = (0..case.views).map(|_| r.random_range(-15.0..15.0)).collect();

    // open gates
    let mut g = Graph::new();
    let zv = g.constant(z_raw.clone());
    let mut views = Vec::new();
    for (lg, &a) in logits.iter().zip(&alphas) {
        let cl = CorrectionLogits {
            s_hat: g.constant(lg[0].clone()),
            b_hat: g.constant(lg[1].clone()),
            l_hat: g.constant(lg[2].clone()),
        };
        let alpha = g.constant(Tensor::vector(vec![a]));
        views.push(apply_correction(&mut g, zv, &cl, alpha, s_max, b_max, &column_family).map_err(err)?);
    }
    let bundle = assemble_views(&mut g, zv, &views).map_err(err)?;
    let multi = g.value(bundle.z_multi).clone();
    let v0 = view_slice(&multi, 0, c);
    ensure(
        v0.iter().zip(z_raw.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "view 0 differs from Z_raw".into(),
    )?;
    for (k, view) in views.iter().enumerate() {
        let lam = g.value(view.lambda).data();
        let zk = view_slice(&multi, k + 1, c);
        for (j, ((&l, &z), &y)) in lam.iter().zip(z_raw.data()).zip(&zk).enumerate() {
            ensure(l > 0.0 && l < 1.0, || {
                format!("lambda {l} outside (0,1) at view {k}, element {j}")
            })?;
            let bound = l * (s_max * z.abs() + b_max);
            let slack = 4.0 * f64::EPSILON * (z.abs() + bound);
            ensure((y - z).abs() <= bound + slack, || {
                format!(
                    "|Z_k - Z| = {} exceeds bound {bound} at view {k}, element {j}",
                    (y - z).abs()
                )
            })?;
        }
    }

    // closed gates
    let mut g = Graph::new();
    let zv = g.constant(z_raw.clone());
    let mut views = Vec::new();
    for lg in &logits {
        let cl = CorrectionLogits {
            s_hat: g.constant(lg[0].clone()),
            b_hat: g.constant(lg[1].clone()),
            l_hat: g.constant(lg[2].clone()),
        };
        let alpha = g.constant(Tensor::vector(vec![-1000.0]));
        views.push(apply_correction(&mut g, zv, &cl, alpha, s_max, b_max, &column_family).map_err(err)?);
    }
    let bundle = assemble_views(&mut g, zv, &views).map_err(err)?;
    let (ld, lt) = correction_regularizers(&mut g, &bundle).map_err(err)?;
    let class_logits = g.constant(uniform_tensor(&mut r, &[b, 3], -5.0, 5.0));
    let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..3)).collect();
    let l_cls = cross_entropy(&mut g, class_logits, &labels, None).map_err(err)?;
    let (wa, wb) = (r.random_range(1e-6..10.0), r.random_range(1e-6..10.0));
    let terms = total_loss(&mut g, l_cls, ld, lt, wa, wb).map_err(err)?;
    let (vd, vt) = (g.value(ld).item(), g.value(lt).item());
    ensure(vd == 0.0 && vt == 0.0, || {
        format!("closed gates give L_delta {vd}, L_tv {vt}")
    })?;
    let (total, cls) = (g.value(terms.total).item(), g.value(terms.l_cls).item());
    ensure(total.to_bits() == cls.to_bits(), || {
        format!("closed gates give total {total} != L_cls {cls}")
    })?;
    Ok(())
}

fn anchor_invariants() -> Outcome {
    let config = ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    let mut runner = TestRunner::new_with_rng(config.clone(), TestRng::deterministic_rng(config.rng_algorithm));
    let strategy = (
        1usize..4,
        1usize..5,
        1usize..4,
        1usize..5,
        0usize..6,
        1usize..4,
        any::<u64>(),
    );
    let cases = std::cell::Cell::new(0usize);
    runner
        .run(&strategy, |(b, n, c, f, extra, views, seed)| {
            cases.set(cases.get() + 1);
            let case = Case {
                shape: [b, n, c, f + extra],
                families: f,
                views,
                seed,
            };
            invariant_case(&case).map_err(TestCaseError::fail)
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{} random cases: view 0 bit-exact, lambda in (0,1), bound holds, closed gates exact",
        cases.get()
    ))
}

// ---------------------------------------------------------------- criterion 4

fn enumerate_blocks(l: usize, m: usize, s: usize) -> usize {
    (0..).take_while(|n| n * s + m <= l).count()
}

/// Sums of `t` along `axis`, one per remaining index.
fn axis_sums(t: &Tensor, axis: usize) -> Vec<f64> {
    let s = t.shape();
    let inner: usize = s[axis + 1..].iter().product();
    let outer: usize = s[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            out.push((0..s[axis]).map(|a| t.data()[(o * s[axis] + a) * inner + i]).sum());
        }
    }
    out
}

fn attention_biases(model: &TcNet) -> Vec<tcnet::nn::ParamId> {
    model
        .scales
        .iter()
        .flat_map(|s| [s.attention.view_score.b, s.attention.group_score.b, s.pool.score.b])
        .collect()
}

fn formula_conformance() -> Outcome {
    let mut r = rng(4);
    for _ in 0..1000 {
        let l = r.random_range(1..=512);
        let m = r.random_range(1..=l);
        let s = r.random_range(1..=l);
        let got = n_blocks(l, m, s).map_err(err)?;
        ensure(got == enumerate_blocks(l, m, s), || {
            format!("n_blocks({l},{m},{s}) = {got}")
        })?;
    }
    for _ in 0..50 {
        let l = r.random_range(4..=96);
        let m = r.random_range(1..=l);
        let s = r.random_range(1..=l);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, l]));
        let blocks = unfold_blocks(&mut g, x, m, s).map_err(err)?;
        ensure(g.shape(blocks)[1] == enumerate_blocks(l, m, s), || {
            format!("unfold ({l},{m},{s})")
        })?;
    }

    let mut cfg = preset("tiny").map_err(err)?.model;
    cfg.channels = 6;
    cfg.sensor_groups = tcnet::model::default_sensor_groups(6);
    cfg.correction.k_views = 4;
    let model = TcNet::new(cfg.clone()).map_err(err)?;
    let x = Tensor::new(vec![4, 6, cfg.length], normal(&mut r, 4 * 6 * cfg.length)).map_err(err)?;
    let mut g = Graph::new();
    let p = model.store.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = model.forward(&mut g, &p, xv, Mode::Soft).map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut vectors = 0usize;
    for s in &out.scales {
        let mut check = |v: Var, axis: usize| {
            for total in axis_sums(g.value(v), axis) {
                worst = worst.max((total - 1.0).abs());
                vectors += 1;
            }
        };
        for &v in &s.attention.views {
            check(v, 2);
        }
        check(s.attention.groups, 2);
        check(s.attention.blocks, 1);
    }
    ensure(worst <= 1e-9, || format!("attention weights sum off by {worst:.2e}"))?;
    ensure(out.scales[0].bundle.k_views() == 4, || "expected 4 views".into())?;

    let z = Tensor::new(vec![16, 9], normal(&mut r, 144)).map_err(err)?;
    let softmax = |t: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let y = g.softmax(v, 1).unwrap();
        g.value(y).clone()
    };
    let base = softmax(&z);
    let mut shift_err: f64 = 0.0;
    for c in [-700.0, -3.5, 2.0, 700.0] {
        shift_err = shift_err.max(softmax(&z.map(|v| v + c)).max_abs_diff(&base));
    }
    let before = model.predict_logits(&x, Mode::Soft).map_err(err)?;
    let mut shifted = model.clone();
    for id in attention_biases(&model) {
        shifted.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += 3.25);
    }
    let after = shifted.predict_logits(&x, Mode::Soft).map_err(err)?;
    let model_err = after.max_abs_diff(&before);
    ensure(shift_err <= 1e-12, || {
        format!("softmax shift changed output by {shift_err:.2e}")
    })?;
    ensure(model_err <= 1e-9, || {
        format!("attention score shift changed logits by {model_err:.2e}")
    })?;
    Ok(format!(
        "1000 (L,m,s) match enumeration; {vectors} attention vectors within {worst:.1e} of 1; shift err {shift_err:.1e} (softmax), {model_err:.1e} (model)"
    ))
}

// ---------------------------------------------------------------- criterion 5

fn synthetic_task() -> Result<WindowedDataset, String> {
    synth_generate(3, 200, 3, 128, 50.0, 0).map_err(err)
}

fn subject_split(data: &WindowedDataset) -> Result<(WindowedDataset, WindowedDataset), String> {
    let ids = data.default_test_subjects(0.2).map_err(err)?;
    Ok(data.split_subjects(&ids))
}

fn tiny_model(data: &WindowedDataset, seed: u64, disable_correction: bool) -> Result<(TcNet, f64, usize), String> {
    let p = preset("tiny").map_err(err)?;
    let mut cfg = p.model;
    cfg.seed = seed;
    cfg.tsf.sampling_rate = data.sampling_rate;
    cfg.disable_correction = disable_correction;
    Ok((TcNet::new(cfg).map_err(err)?, p.lr, p.epochs))
}

fn end_to_end_learning() -> Outcome {
    let seed = 0;
    let data = synthetic_task()?;
    let (train_all, test) = subject_split(&data)?;
    let (mut model, lr, epochs) = tiny_model(&data, seed, false)?;
    ensure(epochs == 30, || format!("tiny preset trains {epochs} epochs"))?;
    let tc = TrainConfig::new(lr, epochs, 32, seed);
    let (tr_idx, val_idx) = stratified_split(&train_all.labels_usize(), data.n_classes, tc.val_fraction, seed);
    let (tr, val) = (train_all.subset(&tr_idx), train_all.subset(&val_idx));
    let start = Instant::now();
    let outcome = train(&mut model, &tr, &val, &tc).map_err(err)?;
    let report = evaluate(&model, &test, 64, Mode::Soft).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "test mF1 {:.4} on {} windows, best epoch {}, {secs:.0}s",
        report.macro_f1,
        test.len(),
        outcome.best_epoch
    );
    ensure(report.macro_f1 >= 0.95, || format!("{detail}; below 0.95"))?;
    ensure(secs < 600.0, || format!("{detail}; slower than 600s"))?;

    let (mut ablated, lr, _) = tiny_model(&data, seed, true)?;
    let short = TrainConfig::new(lr, 2, 32, seed);
    train(&mut ablated, &tr, &val, &short).map_err(err)?;
    let idx: Vec<usize> = (0..test.len().min(16)).collect();
    let mut g = Graph::new();
    let p = ablated.store.bind(&mut g, false);
    let xv = g.constant(test.batch(&idx));
    let out = ablated.forward(&mut g, &p, xv, Mode::Soft).map_err(err)?;
    for (i, s) in out.scales.iter().enumerate() {
        let (zm, zr) = (g.value(s.bundle.z_multi), g.value(s.bundle.z_raw));
        let same = zm.shape() == zr.shape() && zm.data().iter().zip(zr.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same && s.bundle.deltas.is_empty(), || {
            format!("{detail}; ablated scale {i} anchors were corrected")
        })?;
    }
    Ok(format!("{detail}; disable_correction keeps Z_multi == Z_raw"))
}

// ---------------------------------------------------------------- criterion 6

fn rf_baseline() -> Outcome {
    let data = synthetic_task()?;
    let (tr, te) = subject_split(&data)?;
    let mut fc = RfFeatureConfig::new(vec![32, 128]);
    fc.tsf.sampling_rate = data.sampling_rate;
    let params = TsfParams::init(&fc.tsf);
    let x_tr = extract_rf_features(&tr, &fc, &params, 64).map_err(err)?;
    let x_te = extract_rf_features(&te, &fc, &params, 64).map_err(err)?;
    let cfg = ForestConfig::default();
    ensure(cfg.n_trees == 300 && cfg.max_depth == 20, || {
        "forest defaults are not 300 trees, depth 20".into()
    })?;
    let forest = Forest::fit(&x_tr, &tr.labels_usize(), data.n_classes, &cfg).map_err(err)?;
    let report = metrics(&forest.predict(&x_te).map_err(err)?, &te.labels_usize(), data.n_classes).map_err(err)?;
    let detail = format!("test mF1 {:.4} with {} features", report.macro_f1, forest.n_features);
    ensure(report.macro_f1 >= 0.95, || format!("{detail}; below 0.95"))?;

    let again = Forest::fit(&x_tr, &tr.labels_usize(), data.n_classes, &cfg).map_err(err)?;
    let same = again == forest && again.encode().map_err(err)? == forest.encode().map_err(err)?;
    ensure(same, || format!("{detail}; refit with the same seed differs"))?;

    // planted construction: only statistics columns carry the label
    let column_family = rf_column_families(&fc, 3).map_err(err)?;
    let stats = Family::Statistics.index();
    let mut r = rng(6);
    let rows_n = 300;
    let labels: Vec<usize> = (0..rows_n).map(|i| i % 3).collect();
    let mut values = Vec::with_capacity(rows_n * column_family.len());
    for &y in &labels {
        for &fam in &column_family {
            let z: f64 = normal(&mut r, 1)[0];
            values.push(if fam == stats { z + 1.5 * y as f64 } else { z });
        }
    }
    let x = Tensor::new(vec![rows_n, column_family.len()], values).map_err(err)?;
    let planted = Forest::fit(&x, &labels, 3, &cfg).map_err(err)?;
    let shares = planted
        .family_importance(&column_family, Family::ALL.len())
        .map_err(err)?;
    let total: f64 = shares.iter().sum();
    ensure((total - 1.0).abs() < 1e-9, || {
        format!("{detail}; family shares sum to {total}")
    })?;
    ensure(shares[stats] > 0.5, || {
        format!("{detail}; planted statistics share {:.3}", shares[stats])
    })?;
    Ok(format!(
        "{detail}; refit bit-identical; planted statistics share {:.3} (sum {total:.12})",
        shares[stats]
    ))
}

// ---------------------------------------------------------------- criterion 7

fn matrix(r: &mut tcnet::nn::Rng64, n: usize, d: usize) -> Tensor {
    Tensor::new(vec![n, d], normal(r, n * d)).unwrap()
}

fn linear_targets(x: &Tensor, w: &[f64], k: usize, bias: &[f64]) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut y = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in 0..k {
            y.push(bias[j] + (0..d).map(|a| x.data()[i * d + a] * w[a * k + j]).sum::<f64>());
        }
    }
    Tensor::new(vec![n, k], y).unwrap()
}

fn all_columns(k: usize) -> Vec<TargetGroup> {
    vec![TargetGroup {
        name: "all".into(),
        columns: (0..k).collect(),
    }]
}

fn probe_machinery() -> Outcome {
    let (n_tr, n_te, d, k) = (200, 100, 10, 4);
    let mut r = rng(7);
    let (x_tr, x_te) = (matrix(&mut r, n_tr, d), matrix(&mut r, n_te, d));
    let w = normal(&mut r, d * k);
    let bias = normal(&mut r, k);
    let (y_tr, y_te) = (linear_targets(&x_tr, &w, k, &bias), linear_targets(&x_te, &w, k, &bias));
    let linear = ridge_probe(&x_tr, &y_tr, &x_te, &y_te, &all_columns(k), 1e-10).map_err(err)?;
    let row0 = &linear.rows[0];
    let lin_err = (row0.r2_train - 1.0).abs().max((row0.r2_test - 1.0).abs());
    ensure(lin_err <= 1e-6, || format!("linear targets R² off by {lin_err:.2e}"))?;

    let mut held_out = Vec::new();
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let (x_tr, x_te) = (matrix(&mut r, n_tr, d), matrix(&mut r, n_te, d));
        let (y_tr, y_te) = (matrix(&mut r, n_tr, k), matrix(&mut r, n_te, k));
        let rep = ridge_probe(&x_tr, &y_tr, &x_te, &y_te, &all_columns(k), 1.0).map_err(err)?;
        held_out.push(rep.rows[0].r2_test);
    }
    let noise_mean = mean(&held_out);
    ensure(noise_mean <= 0.05, || {
        format!("noise targets mean held-out R² {noise_mean:.4}")
    })?;

    let mut order: Vec<usize> = (0..n_te).collect();
    order.shuffle(&mut r);
    let shuffled: Vec<f64> = order
        .iter()
        .flat_map(|&i| y_te.data()[i * k..(i + 1) * k].to_vec())
        .collect();
    let y_sh = Tensor::new(vec![n_te, k], shuffled).map_err(err)?;
    let adv = ridge_probe(&x_tr, &y_tr, &x_te, &y_sh, &all_columns(k), 1e-10).map_err(err)?;
    let adv_r2 = adv.rows[0].r2_test;
    ensure(adv_r2 < 0.0, || {
        format!("shuffled targets R² {adv_r2:.4} is not negative")
    })?;
    Ok(format!(
        "linear R² within {lin_err:.1e} of 1; noise mean held-out R² {noise_mean:.4} over 20 seeds; shuffled R² {adv_r2:.3}"
    ))
}

// ---------------------------------------------------------------- criterion 8

struct Pretrained {
    model: CompactTcNet,
    aot: f64,
}

fn pretrain_on(fit: &WindowedDataset, fresh: &WindowedDataset, seed: u64) -> Result<Pretrained, String> {
    let mut config = CompactConfig::new(fit.length, 32);
    config.seed = seed;
    config.tsf.sampling_rate = fit.sampling_rate;
    let mut model = CompactTcNet::new(config).map_err(err)?;
    let cfg = SslConfig {
        seed,
        ..SslConfig::default()
    };
    if cfg.epochs != 20 || cfg.batch_size != 256 {
        return Err(format!(
            "ssl defaults are {} epochs, batch {}",
            cfg.epochs, cfg.batch_size
        ));
    }
    let (heads, _) = ssl_pretrain(&mut model, fit, &cfg).map_err(err)?;
    let acc = ssl_head_accuracy(&model, &heads, fresh, seed.wrapping_add(1)).map_err(err)?;
    Ok(Pretrained { model, aot: acc[0] })
}

fn ssl_protocol() -> Outcome {
    let synth_fit = synth_generate(4, 500, 3, 128, 50.0, 11).map_err(err)?;
    let synth_fresh = synth_generate(4, 250, 3, 128, 50.0, 12).map_err(err)?;
    let noise_fit = noise_generate(2000, 3, 128, 13);
    let noise_fresh = noise_generate(1000, 3, 128, 14);
    let oriented = pretrain_on(&synth_fit, &synth_fresh, 0)?;
    let noise = pretrain_on(&noise_fit, &noise_fresh, 0)?;
    let mut detail = format!(
        "held-out AoT accuracy {:.3} (synthetic), {:.3} (noise)",
        oriented.aot, noise.aot
    );

    let data = synthetic_task()?;
    let (tr, te) = subject_split(&data)?;
    let f_tr = freeze_embed(&oriented.model, &tr, 256).map_err(err)?;
    let f_te = freeze_embed(&oriented.model, &te, 256).map_err(err)?;
    let forest = Forest::fit(&f_tr, &tr.labels_usize(), data.n_classes, &ForestConfig::default()).map_err(err)?;
    let report = metrics(&forest.predict(&f_te).map_err(err)?, &te.labels_usize(), data.n_classes).map_err(err)?;
    let majority = majority_mf1(&te.labels_usize(), data.n_classes);
    detail.push_str(&format!(
        "; frozen {}-wide forest mF1 {:.4} vs majority {:.4}",
        f_tr.shape()[1],
        report.macro_f1,
        majority
    ));
    ensure(f_tr.shape()[1] == 256, || format!("{detail}; frozen width is not 256"))?;
    ensure(oriented.aot > 0.7, || format!("{detail}; synthetic AoT not above 0.7"))?;
    ensure((noise.aot - 0.5).abs() <= 0.05, || {
        format!("{detail}; noise AoT not within 0.5 ± 0.05")
    })?;
    ensure(report.macro_f1 >= majority + 0.3, || {
        format!("{detail}; margin below 0.3")
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 9

fn spec(kind: PerturbationKind, magnitude: f64) -> PerturbationSpec {
    PerturbationSpec { kind, magnitude }
}

fn sensitivity_tool() -> Outcome {
    let data = synth_generate(3, 20, 3, 128, 50.0, 3).map_err(err)?;
    let cfg = TsfConfig {
        sampling_rate: data.sampling_rate,
        ..TsfConfig::default()
    };
    let params = TsfParams::init(&cfg);
    let zero = [
        spec(PerturbationKind::GaussianNoise, 0.0),
        spec(PerturbationKind::Rotation, 0.0),
        spec(PerturbationKind::TemporalShift, 0.0),
    ];
    for row in sensitivity_scan(&data, &zero, 32, &params, &cfg, 0).map_err(err)? {
        ensure(row.changes.iter().all(|&c| c == 0.0), || {
            format!("zero {} changed anchors: {:?}", row.kind.name(), row.changes)
        })?;
    }
    let noisy = sensitivity_scan(
        &data,
        &[spec(PerturbationKind::GaussianNoise, 0.04)],
        32,
        &params,
        &cfg,
        0,
    )
    .map_err(err)?;
    let noise_changes = noisy[0].changes.clone();
    ensure(noise_changes.iter().all(|&c| c > 0.0), || {
        format!("noise sigma 0.04 left a family unchanged: {noise_changes:?}")
    })?;

    let periodic = periodic_windows(40, 3, 128, 16, &mut rng(9));
    let shifted = sensitivity_scan(
        &periodic,
        &[spec(PerturbationKind::TemporalShift, 0.125)],
        32,
        &params,
        &cfg,
        0,
    )
    .map_err(err)?;
    let ch = &shifted[0].changes;
    let (st, ac) = (ch[Family::Statistics.index()], ch[Family::Autocorr.index()]);
    ensure(st < 1e-6 && ac < 1e-6, || {
        format!("full-period shift changed statistics by {st:.2e}, autocorr by {ac:.2e}")
    })?;
    let min_noise = noise_changes.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "zero magnitude exact; noise 0.04 min family change {min_noise:.3e}; full-period shift statistics {st:.1e}, autocorr {ac:.1e}"
    ))
}

// --------------------------------------------------------------- criterion 10

/// RF pipeline on an imported dataset: subject split, 300 trees, depth 20.
fn har_informative(path: PathBuf) -> Result<String, String> {
    let data = WindowedDataset::load(&path).map_err(err)?;
    let (tr, te) = subject_split(&data)?;
    let mut fc = RfFeatureConfig::new(vec![32.min(data.length), data.length]);
    fc.scales.dedup();
    fc.strides = fc.scales.clone();
    fc.tsf.sampling_rate = data.sampling_rate;
    let params = TsfParams::init(&fc.tsf);
    let x_tr = extract_rf_features(&tr, &fc, &params, 64).map_err(err)?;
    let x_te = extract_rf_features(&te, &fc, &params, 64).map_err(err)?;
    let forest = Forest::fit(&x_tr, &tr.labels_usize(), data.n_classes, &ForestConfig::default()).map_err(err)?;
    let report = metrics(&forest.predict(&x_te).map_err(err)?, &te.labels_usize(), data.n_classes).map_err(err)?;
    let mf1 = 100.0 * report.macro_f1;
    let within = (mf1 - 92.57).abs() <= 3.0;
    Ok(format!(
        "mF1 {mf1:.2} vs reference 92.57 ± 3 ({})",
        if within { "within" } else { "outside" }
    ))
}
