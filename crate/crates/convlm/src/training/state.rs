//! Serialization of models and full training state on the checkpoint
//! container. A restored training state resumes bit-identically: parameters,
//! optimizer moments, both RNG streams, the data-loader cursor, and every
//! stream's recurrent memory are all round-tripped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_model, LmModel, LstmState, Memory, ModelConfig, SegmentMemory};
use crate::numerics::{load_checkpoint, save_checkpoint, ParamStore, Real, Rng, Tensor};
use crate::training::{LoaderState, OptState, OptimizerKind, StreamState, TrainState, TrainingConfig};

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    model_config: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

fn param_arrays<'a, R: Real>(
    prefix: &str,
    params: &'a ParamStore<R>,
) -> Vec<(String, &'a Tensor<R>)> {
    params
        .iter()
        .map(|(_, p)| (format!("{prefix}{}", p.name), &p.tensor))
        .collect()
}

fn fill_params<R: Real>(
    prefix: &str,
    params: &mut ParamStore<R>,
    arrays: &[(String, Tensor<R>)],
    path: &Path,
) -> Result<()> {
    for i in 0..params.len() {
        let id = crate::numerics::ParamId(i);
        let name = params.get(id).name.clone();
        let key = format!("{prefix}{name}");
        let found = arrays
            .iter()
            .find(|(n, _)| *n == key)
            .ok_or_else(|| Error::data(format!("{}: missing array {key}", path.display())))?;
        if found.1.shape() != params.tensor(id).shape() {
            return Err(Error::data(format!(
                "{}: array {key} has shape {:?}, expected {:?}",
                path.display(),
                found.1.shape(),
                params.tensor(id).shape()
            )));
        }
        *params.tensor_mut(id) = found.1.clone();
    }
    Ok(())
}

/// Write a model-only checkpoint. `extra` carries pipeline metadata (vocab,
/// dialogue-act flag, embedding table) the CLI needs to reload the model.
pub fn save_model<R: Real>(path: &Path, model: &LmModel<R>, extra: &serde_json::Value) -> Result<()> {
    let meta = serde_json::to_value(ModelMeta {
        kind: "model".to_string(),
        model_config: model.config.clone(),
        extra: extra.clone(),
    })?;
    save_checkpoint(path, &meta, &param_arrays("", &model.params))
}

pub fn load_model<R: Real>(path: &Path) -> Result<(LmModel<R>, serde_json::Value)> {
    let loaded = load_checkpoint::<R>(path)?;
    let meta: ModelMeta = serde_json::from_value(loaded.meta)
        .map_err(|e| Error::data(format!("{}: bad model meta: {e}", path.display())))?;
    if meta.kind != "model" {
        return Err(Error::data(format!(
            "{}: checkpoint kind {:?} is not a model",
            path.display(),
            meta.kind
        )));
    }
    let mut model = init_model::<R>(&meta.model_config, 0)?;
    fill_params("", &mut model.params, &loaded.arrays, path)?;
    Ok((model, meta.extra))
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamMeta {
    conv: Option<u64>,
    chunk: usize,
    tokens_seen: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainStateMeta {
    kind: String,
    model_config: ModelConfig,
    step: u64,
    opt_kind: OptimizerKind,
    opt_step: u64,
    data_rng: Rng,
    dropout_rng: Rng,
    loader: LoaderState,
    streams: Vec<StreamMeta>,
    best_val_ppl: Option<f64>,
    has_best: bool,
    #[serde(default)]
    extra: serde_json::Value,
}

pub fn save_train_state<R: Real>(
    path: &Path,
    state: &TrainState<R>,
    extra: &serde_json::Value,
) -> Result<()> {
    let meta = TrainStateMeta {
        kind: "train_state".to_string(),
        model_config: state.model.config.clone(),
        step: state.step,
        opt_kind: state.opt.kind,
        opt_step: state.opt.step,
        data_rng: state.data_rng.clone(),
        dropout_rng: state.dropout_rng.clone(),
        loader: state.loader.clone(),
        streams: state
            .streams
            .iter()
            .map(|s| StreamMeta {
                conv: if s.conv == usize::MAX { None } else { Some(s.conv as u64) },
                chunk: s.chunk,
                tokens_seen: match &s.memory {
                    Memory::Txl(m) => m.tokens_seen,
                    Memory::Lstm(l) => l.tokens_seen,
                },
            })
            .collect(),
        best_val_ppl: state.best_val_ppl,
        has_best: state.best_params.is_some(),
        extra: extra.clone(),
    };

    let mut arrays: Vec<(String, &Tensor<R>)> = param_arrays("param/", &state.model.params);
    for (i, (_, p)) in state.model.params.iter().enumerate() {
        arrays.push((format!("opt_m/{}", p.name), &state.opt.m[i]));
        arrays.push((format!("opt_v/{}", p.name), &state.opt.v[i]));
    }
    if let Some(best) = &state.best_params {
        arrays.extend(param_arrays("best/", best));
    }
    for (si, stream) in state.streams.iter().enumerate() {
        match &stream.memory {
            Memory::Txl(m) => {
                for (l, t) in m.layers.iter().enumerate() {
                    arrays.push((format!("stream{si}/txl{l}"), t));
                }
            }
            Memory::Lstm(l) => {
                arrays.push((format!("stream{si}/lstm_h"), &l.h));
                arrays.push((format!("stream{si}/lstm_c"), &l.c));
            }
        }
    }
    save_checkpoint(path, &serde_json::to_value(&meta)?, &arrays)
}

/// Restore a training state. The caller re-prepares the same sessions the
/// run started from (generation is deterministic) so chunk plans can be
/// rebuilt; only cursors and memories are stored.
pub fn load_train_state<R: Real>(
    path: &Path,
    train_sessions: &[crate::training::TrainSession],
) -> Result<(TrainState<R>, serde_json::Value)> {
    let loaded = load_checkpoint::<R>(path)?;
    let meta: TrainStateMeta = serde_json::from_value(loaded.meta)
        .map_err(|e| Error::data(format!("{}: bad train-state meta: {e}", path.display())))?;
    if meta.kind != "train_state" {
        return Err(Error::data(format!(
            "{}: checkpoint kind {:?} is not a train state",
            path.display(),
            meta.kind
        )));
    }
    let mut model = init_model::<R>(&meta.model_config, 0)?;
    fill_params("param/", &mut model.params, &loaded.arrays, path)?;

    let mut opt = OptState::new(meta.opt_kind, &model.params);
    opt.step = meta.opt_step;
    let mut opt_m_store = model.params.clone();
    fill_params("opt_m/", &mut opt_m_store, &loaded.arrays, path)?;
    let mut opt_v_store = model.params.clone();
    fill_params("opt_v/", &mut opt_v_store, &loaded.arrays, path)?;
    opt.m = opt_m_store.iter().map(|(_, p)| p.tensor.clone()).collect();
    opt.v = opt_v_store.iter().map(|(_, p)| p.tensor.clone()).collect();

    let best_params = if meta.has_best {
        let mut best = model.params.clone();
        fill_params("best/", &mut best, &loaded.arrays, path)?;
        Some(best)
    } else {
        None
    };

    let mut streams = Vec::with_capacity(meta.streams.len());
    for (si, sm) in meta.streams.iter().enumerate() {
        let conv = sm.conv.map_or(usize::MAX, |c| c as usize);
        let plans = if conv == usize::MAX {
            Vec::new()
        } else {
            if conv >= train_sessions.len() {
                return Err(Error::data(format!(
                    "{}: stream {si} references conversation {conv} beyond the corpus",
                    path.display()
                )));
            }
            crate::model::plan_chunks(
                train_sessions[conv].session.len(),
                &train_sessions[conv].session.turn_boundaries,
                meta.model_config.segment_len,
                meta.model_config.contextual,
            )
        };
        let memory = match meta.model_config.arch {
            crate::model::Arch::Txl => {
                let mut layers = Vec::with_capacity(meta.model_config.n_layers);
                for l in 0..meta.model_config.n_layers {
                    let key = format!("stream{si}/txl{l}");
                    let t = loaded
                        .arrays
                        .iter()
                        .find(|(n, _)| *n == key)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| {
                            Error::data(format!("{}: missing array {key}", path.display()))
                        })?;
                    layers.push(t);
                }
                Memory::Txl(SegmentMemory {
                    layers,
                    tokens_seen: sm.tokens_seen,
                })
            }
            crate::model::Arch::LstmBaseline => {
                let h = loaded
                    .arrays
                    .iter()
                    .find(|(n, _)| *n == format!("stream{si}/lstm_h"))
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::data(format!("{}: missing lstm state", path.display())))?;
                let c = loaded
                    .arrays
                    .iter()
                    .find(|(n, _)| *n == format!("stream{si}/lstm_c"))
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::data(format!("{}: missing lstm state", path.display())))?;
                Memory::Lstm(LstmState {
                    h,
                    c,
                    tokens_seen: sm.tokens_seen,
                })
            }
        };
        streams.push(StreamState {
            conv,
            chunk: sm.chunk,
            plans,
            memory,
        });
    }

    Ok((
        TrainState {
            step: meta.step,
            model,
            opt,
            data_rng: meta.data_rng,
            dropout_rng: meta.dropout_rng,
            loader: meta.loader,
            streams,
            best_val_ppl: meta.best_val_ppl,
            best_params,
        },
        meta.extra,
    ))
}

/// Convenience: does this checkpoint hold a full train state or a model?
pub fn checkpoint_kind(path: &Path) -> Result<String> {
    let (_, meta) = crate::numerics::peek_checkpoint(path)?;
    Ok(meta
        .get("kind")
        .and_then(|v| v.as_str())
        .unwrap_or("unknown")
        .to_string())
}

/// Validate a training config against a model config before a run.
pub fn check_compat(model: &ModelConfig, config: &TrainingConfig) -> Result<()> {
    config.validate()?;
    model.validate()
}
