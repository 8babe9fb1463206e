//! JSON checkpoints of a whole run, random streams included.

use std::fs;
use std::path::Path;

use mpac_core::harness::Trainer;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const FORMAT: &str = "mpac-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub trainer: Trainer,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (format {0:?})")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint holds non-finite parameters")]
    NonFinite,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Checkpoint {
    pub fn new(config: RunConfig, trainer: Trainer) -> Self {
        Checkpoint { format: FORMAT.into(), version: VERSION, config, trainer }
    }

    /// Write via a temporary file and rename, so a crash never leaves a
    /// half-written checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if !self.trainer.actor_critic().is_finite() {
            return Err(CheckpointError::NonFinite);
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        if ck.version != VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        Ok(ck)
    }
}
