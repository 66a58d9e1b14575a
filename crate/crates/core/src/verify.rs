//! Finite-difference gradient suite over every differentiable operation.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correction::{apply_correction, assemble_views, correction_regularizers, CorrectionLogits};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TcNet};
use crate::nn::{seeded, Rng64};
use crate::tensor::{dft_power, grad_check, Graph, Tensor, Var};
use crate::train::{cross_entropy, total_loss};
use crate::tsf::{family_rows, Family, Mode, TsfConfig, TsfParams, TsfVars};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteModule {
    Tensor,
    Tsf,
    Correction,
    Model,
    Loss,
}

impl SuiteModule {
    pub const ALL: [SuiteModule; 5] = [Self::Tensor, Self::Tsf, Self::Correction, Self::Model, Self::Loss];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tensor => "tensor",
            Self::Tsf => "tsf",
            Self::Correction => "correction",
            Self::Model => "model",
            Self::Loss => "loss",
        }
    }
}

/// A module name or `all`.
pub fn parse_modules(s: &str) -> Result<Vec<SuiteModule>> {
    if s == "all" {
        return Ok(SuiteModule::ALL.to_vec());
    }
    SuiteModule::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .map(|m| vec![m])
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown grad-check module `{s}` (tensor|tsf|correction|model|loss|all)"
            ))
        })
}

impl FromStr for SuiteModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match parse_modules(s)?.as_slice() {
            [m] => Ok(*m),
            _ => Err(Error::Config("expected a single module".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub module: SuiteModule,
    pub op: String,
    pub inputs: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("non-empty shape")
}

/// Values with magnitude in `[lo, hi)` and random sign.
fn away_from_zero(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mag = uniform(rng, shape, lo, hi);
    let data = mag
        .data()
        .iter()
        .map(|&v| if rng.random_bool(0.5) { v } else { -v })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

/// `Σ y ⊙ w` with fixed random weights, so every output entry matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = seeded(seed ^ 0xABCD);
    let w = uniform(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

/// Splits a flat variable into tensors of the given shapes.
fn unpack(g: &mut Graph, x: Var, shapes: &[&[usize]]) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut at = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        let part = g.slice(x, 0, at, at + n)?;
        out.push(g.reshape(part, s)?);
        at += n;
    }
    Ok(out)
}

fn pack(parts: &[Tensor]) -> Tensor {
    Tensor::vector(parts.iter().flat_map(|t| t.data().iter().copied()).collect())
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;
type Sample = dyn Fn(&mut Rng64) -> Vec<Tensor>;

struct Case {
    op: &'static str,
    sample: Box<Sample>,
    build: Box<Build>,
}

fn case(
    op: &'static str,
    sample: impl Fn(&mut Rng64) -> Vec<Tensor> + 'static,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        op,
        sample: Box::new(sample),
        build: Box::new(build),
    }
}

fn unary(op: &'static str, lo: f64, hi: f64, f: fn(&mut Graph, Var) -> Var) -> Case {
    case(
        op,
        move |r| vec![uniform(r, &[3, 4], lo, hi)],
        move |g, v| Ok(f(g, v[0])),
    )
}

fn run_case(c: &Case, inputs: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..inputs {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut rng = seeded(s);
        let parts = (c.sample)(&mut rng);
        let shapes: Vec<Vec<usize>> = parts.iter().map(|t| t.shape().to_vec()).collect();
        let x = pack(&parts);
        let err = grad_check(
            |g, xv| {
                let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
                let vars = unpack(g, xv, &refs)?;
                let y = (c.build)(g, &vars)?;
                project(g, y, s)
            },
            &x,
            STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn tensor_cases() -> Vec<Case> {
    vec![
        unary("neg", -2.0, 2.0, |g, x| g.neg(x)),
        unary("scale", -2.0, 2.0, |g, x| g.scale(x, 1.7)),
        unary("offset", -2.0, 2.0, |g, x| g.offset(x, 0.3)),
        unary("tanh", -2.0, 2.0, |g, x| g.tanh(x)),
        unary("sigmoid", -3.0, 3.0, |g, x| g.sigmoid(x)),
        unary("exp", -2.0, 2.0, |g, x| g.exp(x)),
        unary("log", 0.3, 3.0, |g, x| g.log(x)),
        unary("log1p", -0.5, 3.0, |g, x| g.log1p(x)),
        unary("sqrt", 0.3, 3.0, |g, x| g.sqrt(x)),
        unary("square", -2.0, 2.0, |g, x| g.square(x)),
        unary("powf", 0.3, 3.0, |g, x| g.powf(x, 1.5)),
        case(
            "abs",
            |r| vec![away_from_zero(r, &[3, 4], 0.1, 2.0)],
            |g, v| Ok(g.abs(v[0])),
        ),
        unary("sin", -3.0, 3.0, |g, x| g.sin(x)),
        unary("cos", -3.0, 3.0, |g, x| g.cos(x)),
        case(
            "wrap_phase",
            |r| {
                let base = uniform(r, &[3, 4], -2.8, 2.8);
                let k = r.random_range(-2i32..=2) as f64;
                vec![base.map(|v| v + 2.0 * std::f64::consts::PI * k)]
            },
            |g, v| Ok(g.wrap_phase(v[0])),
        ),
        case(
            "atan2",
            |r| vec![away_from_zero(r, &[6], 0.2, 2.0), away_from_zero(r, &[6], 0.2, 2.0)],
            |g, v| g.atan2(v[0], v[1]),
        ),
        case(
            "add",
            |r| vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[4], -2.0, 2.0)],
            |g, v| g.add(v[0], v[1]),
        ),
        case(
            "sub",
            |r| vec![uniform(r, &[3, 1], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)],
            |g, v| g.sub(v[0], v[1]),
        ),
        case(
            "mul",
            |r| vec![uniform(r, &[2, 3, 1], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)],
            |g, v| g.mul(v[0], v[1]),
        ),
        case(
            "div",
            |r| vec![uniform(r, &[3, 4], -2.0, 2.0), away_from_zero(r, &[4], 0.5, 2.0)],
            |g, v| g.div(v[0], v[1]),
        ),
        case(
            "matmul",
            |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[4, 5], -1.0, 1.0)],
            |g, v| g.matmul(v[0], v[1]),
        ),
        case(
            "conv1d",
            |r| vec![uniform(r, &[2, 4, 11], -1.0, 1.0), uniform(r, &[6, 2, 3], -1.0, 1.0)],
            |g, v| g.conv1d(v[0], v[1], 2, 1, 2),
        ),
        case(
            "slice",
            |r| vec![uniform(r, &[3, 5], -1.0, 1.0)],
            |g, v| g.slice(v[0], 1, 1, 4),
        ),
        case(
            "concat",
            |r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 2], -1.0, 1.0)],
            |g, v| g.concat(&[v[0], v[1]], 1),
        ),
        case(
            "reshape",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| g.reshape(v[0], &[2, 6]),
        ),
        case(
            "permute",
            |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0)],
            |g, v| g.permute(v[0], &[2, 0, 1]),
        ),
        case(
            "transpose",
            |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0)],
            |g, v| g.transpose(v[0]),
        ),
        case(
            "sum",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| g.sum(v[0], 0, true),
        ),
        case(
            "mean",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| g.mean(v[0], 1, false),
        ),
        case(
            "sum_all",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| {
                let s = g.sum_all(v[0])?;
                Ok(g.square(s))
            },
        ),
        case(
            "mean_all",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| {
                let s = g.mean_all(v[0])?;
                Ok(g.sin(s))
            },
        ),
        case(
            "max",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| g.max(v[0], 1, false),
        ),
        case(
            "min",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| g.min(v[0], 0, true),
        ),
        case(
            "logsumexp",
            |r| vec![uniform(r, &[3, 4], -2.0, 2.0)],
            |g, v| g.logsumexp(v[0], 1, false),
        ),
        case(
            "softmax",
            |r| vec![uniform(r, &[3, 4], -2.0, 2.0)],
            |g, v| g.softmax(v[0], 1),
        ),
        case(
            "gather_last",
            |r| vec![uniform(r, &[2, 3], -1.0, 1.0)],
            |g, v| g.gather_last(v[0], &[2, 0, 0, 1, 2]),
        ),
        case(
            "frames",
            |r| vec![uniform(r, &[2, 16], -1.0, 1.0)],
            |g, v| g.frames(v[0], 6, 3),
        ),
        case(
            "sinc_kernels",
            |r| {
                let lo = uniform(r, &[3], 0.02, 0.2);
                let hi = Tensor::vector(lo.data().iter().map(|v| v + 0.05 + r.random_range(0.0..0.2)).collect());
                vec![lo, hi]
            },
            |g, v| g.sinc_kernels(v[0], v[1], 15),
        ),
        case(
            "soft_quantile",
            |r| vec![uniform(r, &[3, 12], -1.0, 1.0)],
            |g, v| g.soft_quantile(v[0], &[0.1, 0.25, 0.5, 0.75, 0.9], 0.1),
        ),
        case(
            "dft_power",
            |r| vec![uniform(r, &[2, 16], -1.0, 1.0), uniform(r, &[16], 0.2, 1.0)],
            |g, v| dft_power(g, v[0], Some(v[1])),
        ),
    ]
}

fn tsf_cfg() -> TsfConfig {
    TsfConfig::default()
}

fn family_case(op: &'static str, fam: Family) -> Case {
    case(
        op,
        |r| vec![uniform(r, &[2, 32], -1.0, 1.0)],
        move |g, v| {
            let cfg = tsf_cfg();
            let vars = TsfParams::init(&cfg).bind(g, false);
            family_rows(g, v[0], fam, &vars, &cfg, Mode::Soft)
        },
    )
}

/// Band-edge and window-width parameters, jittered around their initial values.
fn tsf_param_case(op: &'static str, fam: Family) -> Case {
    case(
        op,
        |r| {
            let p = TsfParams::init(&tsf_cfg());
            let jitter = |t: &Tensor, r: &mut Rng64| {
                Tensor::vector(t.data().iter().map(|v| v + r.random_range(-0.3..0.3)).collect())
            };
            vec![
                jitter(&p.u_low, r),
                jitter(&p.u_high, r),
                jitter(&p.log_sigma, r),
                uniform(r, &[2, 32], -1.0, 1.0),
            ]
        },
        move |g, v| {
            let cfg = tsf_cfg();
            let vars = TsfVars {
                u_low: v[0],
                u_high: v[1],
                log_sigma: v[2],
            };
            family_rows(g, v[3], fam, &vars, &cfg, Mode::Soft)
        },
    )
}

fn tsf_cases() -> Vec<Case> {
    vec![
        family_case("filterbank", Family::Filterbank),
        family_case("spectral", Family::Spectral),
        family_case("statistics", Family::Statistics),
        family_case("shape", Family::Shape),
        family_case("crossing", Family::Crossing),
        family_case("quantiles", Family::Quantiles),
        family_case("autocorr", Family::Autocorr),
        tsf_param_case("filterbank band edges", Family::Filterbank),
        tsf_param_case("spectral window width", Family::Spectral),
    ]
}

fn correction_cases() -> Vec<Case> {
    // z_raw B×N×C×D with D = 5 columns over F = 2 families
    const COLS: [usize; 5] = [0, 0, 1, 1, 1];
    let sample = |r: &mut Rng64| {
        vec![
            uniform(r, &[1, 2, 2, 5], -2.0, 2.0),
            uniform(r, &[1, 2, 2, 2], -1.5, 1.5),
            uniform(r, &[1, 2, 2, 2], -1.5, 1.5),
            uniform(r, &[1, 2, 2, 2], -1.5, 1.5),
            uniform(r, &[1], -2.0, 1.0),
        ]
    };
    let view = |g: &mut Graph, v: &[Var]| {
        let logits = CorrectionLogits {
            s_hat: v[1],
            b_hat: v[2],
            l_hat: v[3],
        };
        apply_correction(g, v[0], &logits, v[4], 0.5, 0.5, &COLS)
    };
    vec![
        case("apply_correction", sample, move |g, v| Ok(view(g, v)?.z)),
        case("correction gate", sample, move |g, v| Ok(view(g, v)?.lambda)),
        case("correction regularizers", sample, move |g, v| {
            let cv = view(g, v)?;
            let bundle = assemble_views(g, v[0], &[cv])?;
            let (ld, lt) = correction_regularizers(g, &bundle)?;
            let lt = g.scale(lt, 3.0);
            g.add(ld, lt)
        }),
        case("assemble_views", sample, move |g, v| {
            let cv = view(g, v)?;
            Ok(assemble_views(g, v[0], &[cv])?.z_multi)
        }),
    ]
}

fn loss_cases() -> Vec<Case> {
    vec![
        case(
            "cross_entropy",
            |r| vec![uniform(r, &[4, 3], -2.0, 2.0)],
            |g, v| cross_entropy(g, v[0], &[0, 2, 1, 2], None),
        ),
        case(
            "weighted cross_entropy",
            |r| vec![uniform(r, &[4, 3], -2.0, 2.0)],
            |g, v| cross_entropy(g, v[0], &[0, 2, 1, 2], Some(&[0.5, 2.0, 1.0])),
        ),
        case(
            "total_loss",
            |r| vec![uniform(r, &[4, 3], -2.0, 2.0), uniform(r, &[2], 0.0, 3.0)],
            |g, v| {
                let l_cls = cross_entropy(g, v[0], &[1, 0, 2, 2], None)?;
                let ld = g.slice(v[1], 0, 0, 1)?;
                let lt = g.slice(v[1], 0, 1, 2)?;
                let ld = g.reshape(ld, &[])?;
                let lt = g.reshape(lt, &[])?;
                Ok(total_loss(g, l_cls, ld, lt, 0.3, 0.7)?.total)
            },
        ),
    ]
}

/// Component a model parameter belongs to, by name.
fn component(name: &str) -> &'static str {
    if name.starts_with("time.") || name.starts_with("freq.") {
        "branches"
    } else if name.starts_with("tsf.") {
        "anchor parameters"
    } else if name.starts_with("classifier.") {
        "classifier"
    } else if name.contains(".head") || name.contains(".context.") {
        "correction head"
    } else {
        "fusion"
    }
}

fn gradcheck_model_config() -> ModelConfig {
    let mut c = ModelConfig::tiny(3, 64, 3, vec![32, 64], 2);
    c.skip_long_fft = true;
    c.fft_sizes = vec![32, 64];
    c
}

/// Total loss of a tiny model against every parameter tensor, sampling
/// `coords` coordinates per tensor for each seeded input.
fn model_checks(inputs: usize, coords: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    let base = TcNet::new(gradcheck_model_config())?;
    for i in 0..inputs {
        let mut rng = seeded(seed.wrapping_mul(7_777_777).wrapping_add(i as u64));
        let mut model = base.clone();
        for id in model.store.ids().collect::<Vec<_>>() {
            let cur = model.store.get(id);
            let data = cur.data().iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
            let t = Tensor::new(cur.shape().to_vec(), data)?;
            model.store.set(id, t)?;
        }
        let x = uniform(&mut rng, &[2, 3, 64], -1.5, 1.5);
        let labels = [rng.random_range(0..3), rng.random_range(0..3)];
        let loss_of = |m: &TcNet, g: &mut Graph, trainable: bool| -> Result<(Var, crate::nn::Binding)> {
            let p = m.store.bind(g, trainable);
            let xv = g.constant(x.clone());
            let out = m.forward(g, &p, xv, Mode::Soft)?;
            let l_cls = cross_entropy(g, out.logits, &labels, None)?;
            let (ld, lt) = out.regularizers(g)?;
            Ok((total_loss(g, l_cls, ld, lt, 0.05, 0.05)?.total, p))
        };
        let mut g = Graph::new();
        let (loss, p) = loss_of(&model, &mut g, true)?;
        let grads = p.gradients(&g.backward(loss)?);
        let value = |m: &TcNet| -> Result<f64> {
            let mut g = Graph::new();
            let (l, _) = loss_of(m, &mut g, false)?;
            Ok(g.value(l).item())
        };
        let ids: Vec<_> = model.store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let name = model.store.name(id).to_string();
            let n = model.store.get(id).numel();
            let comp = component(&name);
            for _ in 0..coords.min(n) {
                let j = rng.random_range(0..n);
                let orig = model.store.get(id).data()[j];
                model.store.get_mut(id).data_mut()[j] = orig + STEP;
                let up = value(&model)?;
                model.store.get_mut(id).data_mut()[j] = orig - STEP;
                let down = value(&model)?;
                model.store.get_mut(id).data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                let err = (grads[k].data()[j] - numeric).abs() / numeric.abs().max(1.0);
                let w = worst.entry(comp).or_insert(0.0);
                *w = w.max(err);
                let t = worst.entry("total_loss (all parameters)").or_insert(0.0);
                *t = t.max(err);
            }
        }
    }
    Ok(worst
        .into_iter()
        .map(|(op, e)| CheckResult {
            module: SuiteModule::Model,
            op: op.to_string(),
            inputs,
            max_rel_error: e,
            passed: e < TOLERANCE,
        })
        .collect())
}

/// Runs the listed modules with `inputs` seeded random inputs per operation.
pub fn run_suite(modules: &[SuiteModule], inputs: usize, seed: u64) -> Result<Vec<CheckResult>> {
    if inputs == 0 {
        return Err(Error::Config("need at least one input per operation".into()));
    }
    let mut out = Vec::new();
    for &m in modules {
        let cases = match m {
            SuiteModule::Tensor => tensor_cases(),
            SuiteModule::Tsf => tsf_cases(),
            SuiteModule::Correction => correction_cases(),
            SuiteModule::Loss => loss_cases(),
            SuiteModule::Model => {
                out.extend(model_checks(inputs, 2, seed)?);
                continue;
            }
        };
        for (i, c) in cases.iter().enumerate() {
            let e = run_case(c, inputs, seed.wrapping_add(i as u64 * 101))?;
            out.push(CheckResult {
                module: m,
                op: c.op.to_string(),
                inputs,
                max_rel_error: e,
                passed: e < TOLERANCE,
            });
        }
    }
    Ok(out)
}
