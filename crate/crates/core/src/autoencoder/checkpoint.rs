use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AeModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: AeModel,
}

/// Writes config, layer plan, parameters and loss history as JSON.
pub fn save_checkpoint(model: &AeModel, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_vec(&ckpt).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AeModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint version {} is not supported", ckpt.version),
        ));
    }
    ckpt.model.config().geometry()?;
    Ok(ckpt.model)
}
