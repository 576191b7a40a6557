//! JSON configuration documents for the commands.

use std::path::Path;

use pgrpo_core::policy::DEFAULT_HIDDEN;
use pgrpo_core::sft::SftConfig;
use pgrpo_core::vocab::DEFAULT_N_MAX;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Shape of a fresh policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_dim: usize,
    pub n_max: u8,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { hidden_dim: DEFAULT_HIDDEN, n_max: DEFAULT_N_MAX, init_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftCommandConfig {
    pub policy: PolicyConfig,
    pub sft: SftConfig,
}

/// Reads a JSON config; without a path, the type's defaults apply.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}
