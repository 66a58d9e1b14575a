//! "TCNM" checkpoints: JSON config blob plus one f32 record per parameter.
//! Values are rounded to f32 on save, so a load/save cycle is byte-exact.

use std::path::Path;

use super::compact::{CompactConfig, CompactTcNet, HEAD_PREFIX};
use super::config::ModelConfig;
use super::tcnet::TcNet;
use crate::container::{self, Record};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TCNM";
pub const VERSION: u32 = 1;

fn records(store: &ParamStore, skip_prefix: Option<&str>) -> Vec<Record> {
    store
        .iter()
        .filter(|(n, _)| skip_prefix.is_none_or(|p| !n.starts_with(p)))
        .map(|(name, t)| Record {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

fn restore(store: &mut ParamStore, recs: Vec<Record>, skip_prefix: Option<&str>) -> Result<()> {
    let expected = store
        .iter()
        .filter(|(n, _)| skip_prefix.is_none_or(|p| !n.starts_with(p)))
        .count();
    if recs.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model expects {expected}",
            recs.len()
        )));
    }
    for r in recs {
        let id = store
            .find(&r.name)
            .ok_or_else(|| Error::Format(format!("unexpected parameter `{}`", r.name)))?;
        let t = Tensor::new(r.shape, r.values.into_iter().map(f64::from).collect())?;
        store.set(id, t)?;
    }
    Ok(())
}

/// Rounds every parameter to f32 in place (what a save/load cycle does).
pub fn round_to_f32(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get(id).map(|v| v as f32 as f64);
        store.set(id, t).expect("same shape");
    }
}

pub fn encode_tcnet(model: &TcNet) -> Result<Vec<u8>> {
    let meta = serde_json::to_string(&model.config)?;
    Ok(container::encode(MAGIC, VERSION, &meta, &records(&model.store, None)))
}

pub fn decode_tcnet(bytes: &[u8]) -> Result<TcNet> {
    let (meta, recs) = container::decode(bytes, MAGIC, VERSION)?;
    let config: ModelConfig = serde_json::from_str(&meta)?;
    let mut model = TcNet::new(config)?;
    restore(&mut model.store, recs, None)?;
    Ok(model)
}

pub fn save_tcnet(model: &TcNet, path: &Path) -> Result<()> {
    container::write_atomic(path, &encode_tcnet(model)?)
}

pub fn load_tcnet(path: &Path) -> Result<TcNet> {
    decode_tcnet(&std::fs::read(path)?)
}

/// Encoder-only checkpoint; pretraining heads are not stored.
pub fn encode_compact(model: &CompactTcNet) -> Result<Vec<u8>> {
    let meta = serde_json::to_string(&model.config)?;
    Ok(container::encode(
        MAGIC,
        VERSION,
        &meta,
        &records(&model.store, Some(HEAD_PREFIX)),
    ))
}

pub fn decode_compact(bytes: &[u8]) -> Result<CompactTcNet> {
    let (meta, recs) = container::decode(bytes, MAGIC, VERSION)?;
    let config: CompactConfig = serde_json::from_str(&meta)?;
    let mut model = CompactTcNet::new(config)?;
    restore(&mut model.store, recs, Some(HEAD_PREFIX))?;
    Ok(model)
}

pub fn save_compact(model: &CompactTcNet, path: &Path) -> Result<()> {
    container::write_atomic(path, &encode_compact(model)?)
}

pub fn load_compact(path: &Path) -> Result<CompactTcNet> {
    decode_compact(&std::fs::read(path)?)
}
