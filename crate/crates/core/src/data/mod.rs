//! Reaction records: loading, curation, splitting and task formatting.

mod curate;
mod load;
mod split;
pub mod synth;
mod tasks;

pub use curate::{curate, product_key, CurationReport};
pub use load::{load_dataset, read_dataset, DataFormat, LoadMode, Loaded, RowError};
pub use split::{split, SplitSpec};
pub use tasks::{format_tasks, Task, TaskExample, Tasks};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::parse_smiles;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("dataset of {0} records is too small to split (need at least 3)")]
    TooSmall(usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid task selection: {0}")]
    InvalidTasks(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One reaction with its components as SMILES lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionRecord {
    pub id: String,
    pub reactants: Vec<String>,
    #[serde(default)]
    pub reagents: Vec<String>,
    pub products: Vec<String>,
    #[serde(rename = "yield", default, skip_serializing_if = "Option::is_none")]
    pub yield_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
}

impl ReactionRecord {
    /// Checks the record invariants; the message names the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.reactants.is_empty() {
            return Err("reactants must not be empty".into());
        }
        if self.products.is_empty() {
            return Err("products must not be empty".into());
        }
        if let Some(y) = self.yield_fraction {
            if !(0.0..=1.0).contains(&y) {
                return Err(format!("yield {y} outside [0, 1]"));
            }
        }
        for (field, list) in [
            ("reactants", &self.reactants),
            ("reagents", &self.reagents),
            ("products", &self.products),
        ] {
            for (i, s) in list.iter().enumerate() {
                if s.contains('.') || s.contains('>') {
                    return Err(format!("{field}[{i}] {s:?} must be a single fragment"));
                }
                parse_smiles(s).map_err(|e| format!("{field}[{i}] {s:?}: {e}"))?;
            }
        }
        Ok(())
    }
}
