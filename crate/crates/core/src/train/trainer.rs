//! Supervised training loop with cosine schedule and early stopping on validation macro-F1.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{balanced_class_weights, cross_entropy, total_loss};
use super::metrics::{argmax, metrics, MetricsReport};
use super::optim::{cosine_lr, Adam, AdamConfig};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::TcNet;
use crate::nn::seeded;
use crate::tensor::Graph;
use crate::tsf::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Inverse-frequency class weights in the cross-entropy.
    #[serde(default)]
    pub class_weights: bool,
    /// Share of each class held out for early stopping.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr,
            weight_decay: 1e-4,
            epochs,
            patience: 20.min(epochs.max(1)),
            batch_size,
            alpha: 1e-4,
            beta: 1e-4,
            seed,
            class_weights: false,
            val_fraction: default_val_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.weight_decay, self.alpha, self.beta];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "lr, weight decay, alpha and beta must be positive".into(),
            ));
        }
        if self.epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, patience and batch size must be positive".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One row of the training history CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub l_cls: f64,
    pub l_delta: f64,
    pub l_tv: f64,
    pub val_mf1: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mf1: f64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.history {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Per class, a seeded shuffle followed by holding out the last `fraction`
/// (rounded, at least one window when the class has two or more).
pub fn stratified_split(labels: &[usize], n_classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seeded(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut n_val = (idx.len() as f64 * fraction).round() as usize;
        if fraction > 0.0 && n_val == 0 && idx.len() >= 2 {
            n_val = 1;
        }
        let cut = idx.len() - n_val.min(idx.len());
        train.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Class predictions in batches.
pub fn predict(model: &TcNet, data: &WindowedDataset, batch_size: usize, mode: Mode) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let logits = model.predict_logits(&data.batch(chunk), mode)?;
        let k = logits.shape()[1];
        preds.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(preds)
}

pub fn evaluate(model: &TcNet, data: &WindowedDataset, batch_size: usize, mode: Mode) -> Result<MetricsReport> {
    let preds = predict(model, data, batch_size, mode)?;
    metrics(&preds, &data.labels_usize(), model.config.n_classes)
}

fn check_compatible(model: &TcNet, data: &WindowedDataset) -> Result<()> {
    let c = &model.config;
    if data.channels != c.channels || data.length != c.length {
        return Err(Error::Shape {
            kind: "dataset",
            lhs: vec![c.channels, c.length],
            rhs: vec![data.channels, data.length],
        });
    }
    if data.n_classes > c.n_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model {}",
            data.n_classes, c.n_classes
        )));
    }
    Ok(())
}

/// Trains in soft mode and leaves the best-validation parameters in `model`.
/// With an empty validation set, training macro-F1 drives early stopping.
pub fn train(
    model: &mut TcNet,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(model, train_set)?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if !val_set.is_empty() {
        check_compatible(model, val_set)?;
    }
    let k = model.config.n_classes;
    let weights = cfg
        .class_weights
        .then(|| balanced_class_weights(&train_set.labels_usize(), k));
    let mut opt = Adam::new(
        &model.store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, model.store.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, true);
            let x = g.constant(train_set.batch(chunk));
            let out = model.forward(&mut g, &p, x, Mode::Soft)?;
            let labels = train_set.batch_labels(chunk);
            let l_cls = cross_entropy(&mut g, out.logits, &labels, weights.as_deref())?;
            let (l_delta, l_tv) = out.regularizers(&mut g)?;
            let terms = total_loss(&mut g, l_cls, l_delta, l_tv, cfg.alpha, cfg.beta)?;
            let vals = [terms.total, terms.l_cls, terms.l_delta, terms.l_tv].map(|v| g.value(v).item());
            if !vals[0].is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {bi}")));
            }
            let grads = g.backward(terms.total)?;
            opt.step(&mut model.store, &p.gradients(&grads), lr)?;
            let w = chunk.len() as f64;
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v * w;
            }
        }
        let n = train_set.len() as f64;
        let report = if val_set.is_empty() {
            evaluate(model, train_set, cfg.batch_size.max(64), Mode::Soft)?
        } else {
            evaluate(model, val_set, cfg.batch_size.max(64), Mode::Soft)?
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: sums[0] / n,
            l_cls: sums[1] / n,
            l_delta: sums[2] / n,
            l_tv: sums[3] / n,
            val_mf1: report.macro_f1,
            val_acc: report.accuracy,
        });
        log::info!(
            "epoch {epoch} lr {lr:.3e} loss {:.4} val mF1 {:.4}",
            sums[0] / n,
            report.macro_f1
        );
        if report.macro_f1 > best.0 {
            best = (report.macro_f1, epoch, model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    let (best_val_mf1, best_epoch, store) = best;
    model.store = store;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_mf1,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let (tr, va) = stratified_split(&labels, 3, 0.1, 7);
        assert_eq!(tr.len() + va.len(), 100);
        assert!(tr.iter().all(|i| !va.contains(i)));
        for c in 0..3 {
            let n = va.iter().filter(|&&i| labels[i] == c).count();
            assert!((3..=4).contains(&n), "class {c}: {n}");
        }
        assert_eq!(stratified_split(&labels, 3, 0.1, 7), (tr, va));
    }

    #[test]
    fn config_rejects_patience_above_epochs() {
        let mut c = TrainConfig::new(1e-3, 5, 8, 0);
        c.patience = 6;
        assert!(c.validate().is_err());
    }
}
