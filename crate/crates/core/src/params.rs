//! JSON parameter files.
//!
//! | file        | schema                                                      |
//! |-------------|-------------------------------------------------------------|
//! | pose        | `{"joint_rotations": [[x, y, z], …], "global_translation": [x, y, z]}` |
//! | shape, expr | `{"coefficients": [c0, c1, …]}`                             |
//! | contact     | `{"left": [0|1, …], "right": [0|1, …]}` (either optional)   |
//! | mask        | `{"weights": [w0, w1, …]}` (one per vertex)                 |
//! | part        | `{"name": "…", "vertex_indices": [i0, i1, …]}`              |

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foot::ContactState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientFile {
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactFile {
    #[serde(default)]
    pub left: Option<ContactState>,
    #[serde(default)]
    pub right: Option<ContactState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFile {
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartFile {
    pub name: String,
    pub vertex_indices: Vec<usize>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Params(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("parameter types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value))?;
    Ok(())
}
