//! Policy files: a TOML document holding one [`PolicyAssignment`].
//!
//! ```toml
//! format = "ppba-policy"
//! version = 1
//!
//! [source]            # optional, written by the tool
//! mode = "ppba"
//! seed = "7"
//!
//! [policy.RandomRotation]
//! prob = 0.5
//! params = { max_angle = 0.3 }
//! ```
//!
//! A bare policy table (no `format`, ops at the top level) is accepted too.

use std::path::Path;

use ppba_core::space::{PolicyAssignment, SearchSpace};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "ppba-policy";
pub const VERSION: u32 = 1;

/// Where a written policy came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySource {
    pub mode: String,
    /// Decimal; TOML integers cannot hold every `u64`.
    pub seed: String,
    /// `iteration/trial` of the trial or index of the random policy.
    pub origin: String,
    pub metric: Option<f64>,
    /// The resolved run configuration, as JSON.
    pub config: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PolicySource>,
    pub policy: PolicyAssignment,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("policy does not fit the search space: {0}")]
    Space(#[from] ppba_core::space::SpaceError),
}

impl PolicyFile {
    pub fn new(policy: PolicyAssignment, source: Option<PolicySource>) -> Self {
        PolicyFile {
            format: FORMAT.into(),
            version: VERSION,
            source,
            policy,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("policy file serializes")
    }

    pub fn parse(text: &str) -> Result<PolicyFile, String> {
        let table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        if table.contains_key("format") {
            let file: PolicyFile = toml::from_str(text).map_err(|e| e.to_string())?;
            if file.format != FORMAT {
                return Err(format!("format must be `{FORMAT}`, got `{}`", file.format));
            }
            if file.version != VERSION {
                return Err(format!("unsupported version {}", file.version));
            }
            Ok(file)
        } else {
            let policy: PolicyAssignment = toml::from_str(text).map_err(|e| e.to_string())?;
            Ok(PolicyFile::new(policy, None))
        }
    }
}

/// Reads a policy file and checks it against `space`.
pub fn load_policy(path: &Path, space: &SearchSpace) -> Result<PolicyAssignment, PolicyError> {
    let read_err = |message: String| PolicyError::Read {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
    let file = PolicyFile::parse(&text).map_err(read_err)?;
    space.validate(&file.policy)?;
    Ok(file.policy)
}
