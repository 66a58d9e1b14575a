use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;
use tcnet::data::{import_csv, noise_generate, synth_generate, CsvManifest, WindowedDataset};
use tcnet::forest::{extract_rf_features, rf_column_families, Forest, ForestConfig, RfFeatureConfig};
use tcnet::model::checkpoint::{load_compact, load_tcnet, save_compact, save_tcnet};
use tcnet::model::{preset, unfold_blocks, CompactConfig, CompactTcNet, Preset, TcNet};
use tcnet::nn::seeded;
use tcnet::probe::{groups_from_families, ridge_probe};
use tcnet::sensitivity::{family_names, sensitivity_scan, PerturbationKind, PerturbationSpec};
use tcnet::train::ssl::ssl_head_accuracy;
use tcnet::train::{evaluate, freeze_embed, ssl_pretrain, stratified_split, train, SslConfig, TrainConfig};
use tcnet::tsf::{extract_all, Family, Mode, TsfConfig, TsfParams};
use tcnet::verify::{parse_modules, run_suite};
use tcnet::{Graph, Tensor};

use crate::record::{sibling, write_json, write_record, write_text};
use crate::{Cli, Command};

/// A run that completed but whose result is a failure, e.g. a failed check.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Held-out share of subjects when no explicit test subjects are given.
const TEST_SUBJECT_FRACTION: f64 = 0.2;

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Extract(a) => extract(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Eval(a) => eval(a, seed),
        Command::GradCheck(a) => grad_check(a, seed),
        Command::Sensitivity(a) => sensitivity(a, seed),
        Command::RfBaseline(a) => rf_baseline(a, seed),
        Command::Probe(a) => probe(a, seed),
        Command::Pretrain(a) => pretrain(a, seed),
        Command::FreezeEmbed(a) => freeze(a, seed),
        Command::Synth(a) => synth(a, seed),
        Command::ImportCsv(a) => import(a, seed),
    }
}

fn load_data(path: &Path) -> Result<WindowedDataset> {
    WindowedDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn tsf_for(data: &WindowedDataset) -> TsfConfig {
    TsfConfig {
        sampling_rate: data.sampling_rate,
        ..TsfConfig::default()
    }
}

/// Explicit test subjects, or the default held-out share.
fn test_subjects(data: &WindowedDataset, given: &Option<Vec<i32>>) -> Result<Vec<i32>> {
    let ids = match given {
        Some(ids) => ids.clone(),
        None => data.default_test_subjects(TEST_SUBJECT_FRACTION)?,
    };
    if ids.is_empty() {
        return Err(tcnet::Error::Config("no test subjects given".into()).into());
    }
    Ok(ids)
}

/// `(train, test)` with both parts required to be non-empty.
fn subject_split(
    data: &WindowedDataset,
    given: &Option<Vec<i32>>,
) -> Result<(WindowedDataset, WindowedDataset, Vec<i32>)> {
    let ids = test_subjects(data, given)?;
    let (tr, te) = data.split_subjects(&ids);
    if tr.is_empty() || te.is_empty() {
        return Err(tcnet::Error::Invalid(format!(
            "subject split {ids:?} leaves {} train and {} test windows",
            tr.len(),
            te.len()
        ))
        .into());
    }
    Ok((tr, te, ids))
}

fn csv_line(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let row: Vec<String> = fields.into_iter().collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn feature_names(cfg: &TsfConfig, block: usize) -> Result<Vec<String>> {
    let layout = cfg.layout(block)?;
    let mut names = vec![String::new(); layout.width()];
    for (fam, range) in layout.families() {
        let start = range.start;
        for j in range {
            names[j] = format!("{}_{}", fam.name(), j - start);
        }
    }
    Ok(names)
}

fn extract(a: &crate::ExtractArgs, seed: u64) -> Result<()> {
    let data = load_data(&a.data)?;
    let cfg = tsf_for(&data);
    let stride = a.stride.unwrap_or(a.block);
    let params = TsfParams::init(&cfg);
    let names = feature_names(&cfg, a.block)?;
    let mut out = String::new();
    csv_line(
        &mut out,
        ["window", "subject", "label", "block", "channel"]
            .map(String::from)
            .into_iter()
            .chain(names.iter().cloned()),
    );
    let d = names.len();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(64) {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let x = g.constant(data.batch(chunk));
        let blocks = unfold_blocks(&mut g, x, a.block, stride)?;
        let z = extract_all(&mut g, blocks, &vars, &cfg, a.mode.into())?;
        let shape = g.shape(z).to_vec();
        let (n, c) = (shape[1], shape[2]);
        let values = g.value(z).data();
        for (r, &w) in chunk.iter().enumerate() {
            for b in 0..n {
                for ch in 0..c {
                    let base = ((r * n + b) * c + ch) * d;
                    let head = [
                        w.to_string(),
                        data.subjects[w].to_string(),
                        data.labels[w].to_string(),
                        b.to_string(),
                        ch.to_string(),
                    ];
                    csv_line(
                        &mut out,
                        head.into_iter()
                            .chain(values[base..base + d].iter().map(|v| v.to_string())),
                    );
                }
            }
        }
    }
    write_text(&a.out, &out)?;
    write_record("extract", a, seed, &[&a.out])?;
    println!("wrote {} windows x {d} anchors to {}", data.len(), a.out.display());
    Ok(())
}

fn load_preset(a: &crate::TrainArgs) -> Result<Preset> {
    match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| tcnet::Error::Config(format!("{}: {e}", path.display())).into())
        }
        None => Ok(preset(&a.preset)?),
    }
}

fn train_cmd(a: &crate::TrainArgs, seed: u64) -> Result<()> {
    let data = load_data(&a.data)?;
    let p = load_preset(a)?;
    let m = &p.model;
    if (m.channels, m.length, m.n_classes) != (data.channels, data.length, data.n_classes) {
        return Err(tcnet::Error::Config(format!(
            "config mismatch: preset `{}` expects {} channels x {} samples, {} classes; dataset {} has {} channels x {} samples, {} classes",
            p.name,
            m.channels,
            m.length,
            m.n_classes,
            a.data.display(),
            data.channels,
            data.length,
            data.n_classes
        ))
        .into());
    }
    let mut config = p.model.clone();
    config.seed = seed;
    config.tsf.sampling_rate = data.sampling_rate;
    config.disable_correction |= a.disable_correction;
    let mut model = TcNet::new(config)?;

    let (train_all, test, ids) = subject_split(&data, &a.test_subjects)?;
    let mut tc = TrainConfig::new(a.lr.unwrap_or(p.lr), a.epochs.unwrap_or(p.epochs), a.batch, seed);
    if let Some(pat) = a.patience {
        tc.patience = pat;
    }
    tc.class_weights = a.class_weights;
    let (tr_idx, val_idx) = stratified_split(&train_all.labels_usize(), data.n_classes, tc.val_fraction, seed);
    let (tr, val) = (train_all.subset(&tr_idx), train_all.subset(&val_idx));
    log::info!(
        "training on {} windows, {} validation, {} test",
        tr.len(),
        val.len(),
        test.len()
    );
    let start = Instant::now();
    let outcome = train(&mut model, &tr, &val, &tc)?;
    let report = evaluate(&model, &test, a.batch.max(64), Mode::Soft)?;

    save_tcnet(&model, &a.out).with_context(|| format!("saving {}", a.out.display()))?;
    let history = sibling(&a.out, ".history.csv");
    write_text(&history, &outcome.history_csv()?)?;
    let metrics = sibling(&a.out, ".metrics.json");
    write_json(
        &metrics,
        &json!({
            "preset": p.name,
            "num_params": model.num_params(),
            "test_subjects": ids,
            "n_train": tr.len(),
            "n_val": val.len(),
            "n_test": test.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_mf1": outcome.best_val_mf1,
            "stopped_early": outcome.stopped_early,
            "train_seconds": start.elapsed().as_secs_f64(),
            "test": report,
        }),
    )?;
    write_record("train", a, seed, &[&a.out, &history, &metrics])?;
    println!(
        "test mF1 {:.4} acc {:.4} (best epoch {}), model {}",
        report.macro_f1,
        report.accuracy,
        outcome.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn eval(a: &crate::EvalArgs, seed: u64) -> Result<()> {
    let model = load_tcnet(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mut data = load_data(&a.data)?;
    let c = &model.config;
    if (c.channels, c.length) != (data.channels, data.length) || data.n_classes > c.n_classes {
        return Err(tcnet::Error::Config(format!(
            "config mismatch: model expects {} channels x {} samples, {} classes; dataset has {} x {}, {} classes",
            c.channels, c.length, c.n_classes, data.channels, data.length, data.n_classes
        ))
        .into());
    }
    if let Some(ids) = &a.subjects {
        data = data.subset(&data.indices_where(|s| ids.contains(&s)));
    }
    if data.is_empty() {
        return Err(tcnet::Error::Invalid("no windows to evaluate".into()).into());
    }
    let mode: Mode = a.mode.into();
    let report = evaluate(&model, &data, a.batch, mode)?;
    write_json(&a.out, &json!({ "n": data.len(), "metrics": report }))?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(path) = &a.deltas {
        let mut sums = [0.0; Family::ALL.len()];
        let mut weights = [0.0; Family::ALL.len()];
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(a.batch.max(1)) {
            for scale in model.relative_deltas(&data.batch(chunk), mode)? {
                for (fam, v) in scale {
                    sums[fam.index()] += v * chunk.len() as f64;
                    weights[fam.index()] += chunk.len() as f64;
                }
            }
        }
        let name = a
            .data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut csv = String::from("family,dataset,mean_rel_delta\n");
        for f in Family::ALL {
            let v = if weights[f.index()] > 0.0 {
                sums[f.index()] / weights[f.index()]
            } else {
                0.0
            };
            writeln!(csv, "{},{name},{v}", f.name())?;
        }
        write_text(path, &csv)?;
        outputs.push(path);
    }
    write_record("eval", a, seed, &outputs)?;
    println!(
        "mF1 {:.4} acc {:.4} on {} windows",
        report.macro_f1,
        report.accuracy,
        data.len()
    );
    Ok(())
}

fn grad_check(a: &crate::GradCheckArgs, seed: u64) -> Result<()> {
    let modules = parse_modules(&a.module)?;
    let start = Instant::now();
    let results = run_suite(&modules, a.inputs, seed)?;
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "{:<12} {:<34} {:>6} {:>14}  result",
        "module", "operation", "inputs", "max_rel_error"
    );
    for r in &results {
        println!(
            "{:<12} {:<34} {:>6} {:>14.3e}  {}",
            r.module.name(),
            r.op,
            r.inputs,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} operations, {failed} failed, {elapsed:.1}s", results.len());
    write_json(
        &a.out,
        &json!({
            "tolerance": tcnet::verify::TOLERANCE,
            "step": tcnet::verify::STEP,
            "elapsed_seconds": elapsed,
            "all_passed": failed == 0,
            "results": results,
        }),
    )?;
    write_record("grad-check", a, seed, &[&a.out])?;
    if failed > 0 {
        return Err(Failure {
            kind: "check-failed",
            message: format!("{failed} of {} operations exceed the gradient tolerance", results.len()),
        }
        .into());
    }
    Ok(())
}

fn sensitivity(a: &crate::SensitivityArgs, seed: u64) -> Result<()> {
    let data = load_data(&a.data)?;
    let rotation = match &a.rotation {
        Some(r) => r.clone(),
        None if data.channels % 3 == 0 => vec![0.0, 15.0, 30.0, 60.0],
        None => Vec::new(),
    };
    let spec = |kind, magnitude| PerturbationSpec { kind, magnitude };
    let specs: Vec<PerturbationSpec> = a
        .noise
        .iter()
        .map(|&m| spec(PerturbationKind::GaussianNoise, m))
        .chain(rotation.iter().map(|&m| spec(PerturbationKind::Rotation, m)))
        .chain(a.shift.iter().map(|&m| spec(PerturbationKind::TemporalShift, m)))
        .collect();
    let cfg = tsf_for(&data);
    let rows = sensitivity_scan(&data, &specs, a.block, &TsfParams::init(&cfg), &cfg, seed)?;
    let mut csv = String::new();
    csv_line(
        &mut csv,
        ["kind", "magnitude"]
            .map(String::from)
            .into_iter()
            .chain(family_names().into_iter().map(String::from)),
    );
    for r in &rows {
        csv_line(
            &mut csv,
            [r.kind.name().to_string(), r.magnitude.to_string()]
                .into_iter()
                .chain(r.changes.iter().map(|v| v.to_string())),
        );
    }
    write_text(&a.out, &csv)?;
    write_record("sensitivity", a, seed, &[&a.out])?;
    print!("{csv}");
    Ok(())
}

fn default_scales(length: usize) -> Vec<usize> {
    let mut s = vec![32.min(length), length];
    s.dedup();
    s
}

fn rf_baseline(a: &crate::RfArgs, seed: u64) -> Result<()> {
    let data = load_data(&a.data)?;
    let (tr, te, ids) = subject_split(&data, &a.test_subjects)?;
    let mut fc = RfFeatureConfig::new(a.scales.clone().unwrap_or_else(|| default_scales(data.length)));
    fc.tsf.sampling_rate = data.sampling_rate;
    let params = TsfParams::init(&fc.tsf);
    let x_tr = extract_rf_features(&tr, &fc, &params, 64)?;
    let x_te = extract_rf_features(&te, &fc, &params, 64)?;
    let cfg = ForestConfig {
        n_trees: a.trees,
        max_depth: a.max_depth,
        max_features: a.max_features,
        balanced: !a.unbalanced,
        seed,
        ..ForestConfig::default()
    };
    let start = Instant::now();
    let forest = Forest::fit(&x_tr, &tr.labels_usize(), data.n_classes, &cfg)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let pred = forest.predict(&x_te)?;
    let report = tcnet::train::metrics(&pred, &te.labels_usize(), data.n_classes)?;
    let shares = forest.family_importance(&rf_column_families(&fc, data.channels)?, Family::ALL.len())?;
    let importance: serde_json::Map<String, serde_json::Value> = Family::ALL
        .iter()
        .zip(&shares)
        .map(|(f, &v)| (f.name().to_string(), json!(v)))
        .collect();
    let result = json!({
        "scales": fc.scales,
        "n_features": forest.n_features,
        "test_subjects": ids,
        "n_train": tr.len(),
        "n_test": te.len(),
        "fit_seconds": fit_seconds,
        "oob_accuracy": forest.oob_accuracy,
        "family_importance": importance,
        "metrics": report,
    });
    let out = a.out.clone().unwrap_or_else(|| sibling(&a.data, ".rf.json"));
    write_json(&out, &result)?;
    let mut outputs: Vec<&Path> = vec![&out];
    if let Some(path) = &a.save_forest {
        forest
            .save(path)
            .with_context(|| format!("saving {}", path.display()))?;
        outputs.push(path);
    }
    write_record("rf-baseline", a, seed, &outputs)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

/// Rows of `data` embedded by whichever model was given.
enum Embedder {
    Full(TcNet),
    Compact(CompactTcNet),
}

impl Embedder {
    fn embed(&self, data: &WindowedDataset, mode: Mode) -> Result<Tensor> {
        match self {
            Embedder::Compact(m) => Ok(freeze_embed(m, data, 256)?),
            Embedder::Full(m) => {
                let idx: Vec<usize> = (0..data.len()).collect();
                let mut rows = Vec::new();
                let mut width = 0;
                for chunk in idx.chunks(64) {
                    let e = m.embed(&data.batch(chunk), mode)?;
                    width = e.shape()[1];
                    rows.extend_from_slice(e.data());
                }
                Ok(Tensor::new(vec![data.len(), width], rows)?)
            }
        }
    }
}

fn probe(a: &crate::ProbeArgs, seed: u64) -> Result<()> {
    let data = load_data(&a.data)?;
    let embedder = match (&a.model, &a.encoder) {
        (Some(p), _) => Embedder::Full(load_tcnet(p).with_context(|| format!("loading model {}", p.display()))?),
        (None, Some(p)) => {
            Embedder::Compact(load_compact(p).with_context(|| format!("loading encoder {}", p.display()))?)
        }
        (None, None) => unreachable!("clap requires one model"),
    };
    let (tr, te, _) = subject_split(&data, &a.test_subjects)?;
    let mut fc = RfFeatureConfig::new(vec![a.block]);
    fc.tsf.sampling_rate = data.sampling_rate;
    let params = TsfParams::init(&fc.tsf);
    let y_tr = extract_rf_features(&tr, &fc, &params, 64)?;
    let y_te = extract_rf_features(&te, &fc, &params, 64)?;
    let mode: Mode = a.mode.into();
    let x_tr = embedder.embed(&tr, mode)?;
    let x_te = embedder.embed(&te, mode)?;
    let groups = groups_from_families(&rf_column_families(&fc, data.channels)?);
    let report = ridge_probe(&x_tr, &y_tr, &x_te, &y_te, &groups, a.lambda)?;
    write_text(&a.out, &report.to_csv()?)?;
    let excluded = sibling(&a.out, ".excluded.json");
    write_json(
        &excluded,
        &json!({ "excluded_columns": report.excluded, "lambda": report.lambda }),
    )?;
    write_record("probe", a, seed, &[&a.out, &excluded])?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn pretrain(a: &crate::PretrainArgs, seed: u64) -> Result<()> {
    let data = load_data(&a.data)?;
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(tcnet::Error::Config(format!("holdout fraction {} outside [0, 1)", a.holdout)).into());
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut seeded(seed));
    let n_hold = (a.holdout * data.len() as f64).round() as usize;
    let (hold_idx, fit_idx) = order.split_at(n_hold);
    let (mut hold_idx, mut fit_idx) = (hold_idx.to_vec(), fit_idx.to_vec());
    hold_idx.sort_unstable();
    fit_idx.sort_unstable();
    let (fit, hold) = (data.subset(&fit_idx), data.subset(&hold_idx));

    let mut config = CompactConfig::new(data.length, a.block);
    config.seed = seed;
    config.tsf.sampling_rate = data.sampling_rate;
    let mut model = CompactTcNet::new(config)?;
    let cfg = SslConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed,
        ..SslConfig::default()
    };
    let (heads, history) = ssl_pretrain(&mut model, &fit, &cfg)?;
    let accuracy = if hold.is_empty() {
        None
    } else {
        Some(ssl_head_accuracy(&model, &heads, &hold, seed.wrapping_add(1))?)
    };
    save_compact(&model, &a.out).with_context(|| format!("saving {}", a.out.display()))?;
    let mut csv = String::from("epoch,loss,bce_aot,bce_permute,bce_warp\n");
    for h in &history {
        writeln!(csv, "{},{},{},{},{}", h.epoch, h.loss, h.bce[0], h.bce[1], h.bce[2])?;
    }
    let hist_path = sibling(&a.out, ".history.csv");
    write_text(&hist_path, &csv)?;
    let metrics = sibling(&a.out, ".metrics.json");
    write_json(
        &metrics,
        &json!({
            "encoder_params": model.encoder_params(),
            "params_with_heads": model.store.num_scalars(),
            "n_fit": fit.len(),
            "n_holdout": hold.len(),
            "holdout_accuracy": accuracy.map(|acc| json!({ "aot": acc[0], "permute": acc[1], "warp": acc[2] })),
        }),
    )?;
    write_record("pretrain", a, seed, &[&a.out, &hist_path, &metrics])?;
    match accuracy {
        Some(acc) => println!(
            "held-out head accuracy: aot {:.3} permute {:.3} warp {:.3}",
            acc[0], acc[1], acc[2]
        ),
        None => println!("pretrained on {} windows", fit.len()),
    }
    Ok(())
}

fn freeze(a: &crate::FreezeArgs, seed: u64) -> Result<()> {
    let model = load_compact(&a.encoder).with_context(|| format!("loading encoder {}", a.encoder.display()))?;
    let data = load_data(&a.data)?;
    let emb = freeze_embed(&model, &data, a.batch)?;
    let width = emb.shape()[1];
    let mut csv = String::new();
    csv_line(
        &mut csv,
        ["subject", "label"]
            .map(String::from)
            .into_iter()
            .chain((0..width).map(|j| format!("e{j}"))),
    );
    for (i, row) in emb.data().chunks(width).enumerate() {
        csv_line(
            &mut csv,
            [data.subjects[i].to_string(), data.labels[i].to_string()]
                .into_iter()
                .chain(row.iter().map(|v| v.to_string())),
        );
    }
    write_text(&a.out, &csv)?;
    write_record("freeze-embed", a, seed, &[&a.out])?;
    println!("wrote {} x {width} embeddings to {}", data.len(), a.out.display());
    Ok(())
}

fn synth(a: &crate::SynthArgs, seed: u64) -> Result<()> {
    let data = if a.noise {
        noise_generate(a.classes * a.per_class, a.channels, a.length, seed)
    } else {
        synth_generate(a.classes, a.per_class, a.channels, a.length, a.fs, seed)?
    };
    data.save(&a.out)
        .with_context(|| format!("saving {}", a.out.display()))?;
    write_record("synth", a, seed, &[&a.out])?;
    println!(
        "wrote {} windows ({} channels x {} samples, {} classes) to {}",
        data.len(),
        data.channels,
        data.length,
        data.n_classes,
        a.out.display()
    );
    Ok(())
}

fn import(a: &crate::ImportArgs, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let manifest: CsvManifest =
        serde_json::from_str(&text).map_err(|e| tcnet::Error::Config(format!("{}: {e}", a.manifest.display())))?;
    let (data, report) = import_csv(&a.dir, &manifest)?;
    data.save(&a.out)
        .with_context(|| format!("saving {}", a.out.display()))?;
    let report_path: PathBuf = sibling(&a.out, ".import.json");
    write_json(&report_path, &report)?;
    write_record("import-csv", a, seed, &[&a.out, &report_path])?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
