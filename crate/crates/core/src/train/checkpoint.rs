//! Checkpoints: model spec, training config and state in the manifest
//! header; parameters, running statistics, momentum buffers and the best
//! snapshot as tensors.

use std::path::Path;

use serde_json::json;

use super::{TrainState, Trainer, TrainingConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::{DType, Scalar, Tensor};
use crate::tensorfile::{layout, Container, ContainerWriter};

fn model_tensors<'a, T: Scalar>(prefix: &str, model: &'a Model<T>) -> Vec<(String, &'a Tensor<T>)> {
    model
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            l.named_tensors()
                .into_iter()
                .map(move |(name, t)| (format!("{prefix}.{i}.{name}"), t))
        })
        .collect()
}

pub fn save_checkpoint<T: Scalar>(trainer: &Trainer<T>, path: &Path) -> Result<()> {
    let mut tensors = model_tensors("model", &trainer.model);
    for (i, vel) in trainer.velocity.iter().enumerate() {
        for (j, v) in vel.iter().enumerate() {
            tensors.push((format!("velocity.{i}.{j}"), v));
        }
    }
    if let Some(best) = &trainer.best {
        tensors.extend(model_tensors("best", best));
    }
    let table = layout(tensors.iter().map(|(n, t)| (n.clone(), t.shape().to_vec(), T::DTYPE)));
    let header = json!({
        "kind": "checkpoint",
        "dtype": T::DTYPE,
        "spec": trainer.model.spec(),
        "config": trainer.config,
        "state": trainer.state,
    });
    let mut w = ContainerWriter::create(path, header, table)?;
    for (_, t) in &tensors {
        w.write(*t)?;
    }
    w.finish()
}

fn header_field<V: serde::de::DeserializeOwned>(c: &Container, key: &str) -> Result<V> {
    serde_json::from_value(c.header[key].clone()).map_err(|e| Error::Manifest {
        path: c.path().to_path_buf(),
        message: format!("`{key}`: {e}"),
    })
}

fn fill_model<T: Scalar>(c: &Container, prefix: &str, model: &mut Model<T>) -> Result<()> {
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        for (name, t) in layer.named_tensors_mut() {
            let loaded: Tensor<T> = c.tensor(&format!("{prefix}.{i}.{name}"))?;
            if loaded.shape() != t.shape() {
                return Err(Error::PayloadMismatch {
                    path: c.path().to_path_buf(),
                    detail: format!("{prefix}.{i}.{name} has shape {:?}, spec needs {:?}", loaded.shape(), t.shape()),
                });
            }
            *t = loaded;
        }
    }
    Ok(())
}

/// Restores a trainer exactly as saved, ready to continue its run.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Trainer<T>> {
    let c = Container::read(path)?;
    let dtype: DType = header_field(&c, "dtype")?;
    if dtype != T::DTYPE {
        return Err(Error::PayloadMismatch {
            path: path.to_path_buf(),
            detail: format!("checkpoint holds {dtype:?} tensors, requested {:?}", T::DTYPE),
        });
    }
    let spec: ModelSpec = header_field(&c, "spec")?;
    let config: TrainingConfig = header_field(&c, "config")?;
    let state: TrainState = header_field(&c, "state")?;

    let mut model = Model::<T>::from_seed(spec, 0)?;
    fill_model(&c, "model", &mut model)?;
    let best = if c.entry("best.0.weight").is_some() || state.best_epoch.is_some() {
        let mut best = model.clone();
        fill_model(&c, "best", &mut best)?;
        Some(best)
    } else {
        None
    };
    let mut trainer = Trainer::new(model, config)?;
    for (i, vel) in trainer.velocity.iter_mut().enumerate() {
        for (j, v) in vel.iter_mut().enumerate() {
            *v = c.tensor(&format!("velocity.{i}.{j}"))?;
        }
    }
    trainer.state = state;
    trainer.best = best;
    Ok(trainer)
}
