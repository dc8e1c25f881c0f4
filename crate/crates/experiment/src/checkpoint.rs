//! Training checkpoints. A checkpoint stores the full [`TrainingState`] plus
//! the settings it was produced under, so a resumed run continues bitwise
//! as if it had never stopped.

use std::path::Path;

use minattn_core::env::EnvSpec;
use minattn_core::meta::{MetaConfig, TrainingState};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{read_json, write_json};

pub const CHECKPOINT_SCHEMA: &str = "minattn.checkpoint.v1";

/// The settings that determine a run's trajectory. The epoch budget is left
/// out so a finished run can be extended, and the meta-test settings because
/// they only matter after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunIdentity {
    pub seed: u64,
    pub env: EnvSpec,
    pub meta: MetaConfig,
}

impl RunIdentity {
    pub fn new(seed: u64, env: &EnvSpec, meta: &MetaConfig) -> Self {
        let mut meta = meta.clone();
        meta.epochs = 0;
        meta.meta_test = Default::default();
        Self {
            seed,
            env: env.clone(),
            meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub identity: RunIdentity,
    pub state: TrainingState,
}

impl Checkpoint {
    pub fn new(identity: RunIdentity, state: TrainingState) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.into(),
            identity,
            state,
        }
    }
}

/// Writes through a temporary file so an interrupted save never leaves a
/// truncated checkpoint behind.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, ckpt)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let c: Checkpoint = read_json(path)?;
    if c.schema != CHECKPOINT_SCHEMA {
        return Err(Error::format("checkpoint", format!("unknown schema {:?}", c.schema)));
    }
    Ok(c)
}

/// Loads `path` if it exists. A checkpoint written under different settings
/// is an error rather than a silent restart.
pub fn resume(path: &Path, identity: &RunIdentity) -> Result<Option<TrainingState>> {
    if !path.exists() {
        return Ok(None);
    }
    let c = load(path)?;
    if &c.identity != identity {
        return Err(Error::CheckpointMismatch { path: path.into() });
    }
    Ok(Some(c.state))
}
