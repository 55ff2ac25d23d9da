//! `BMDL` model checkpoints: magic, version, JSON header (config plus the
//! ordered weight names and shapes), then each weight as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerError};

use super::{ModelConfig, NamedWeights, Result, Seq2SeqModel};

pub const BMDL_MAGIC: &[u8; 4] = b"BMDL";
pub const BMDL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: ModelConfig,
    pub weights: Vec<WeightEntry>,
}

/// Writes the base weights only; adapters are stored separately.
pub fn write_model<W: Write>(w: &mut W, model: &Seq2SeqModel) -> Result<()> {
    let header = ModelHeader {
        config: model.config().clone(),
        weights: model
            .weights()
            .iter()
            .map(|(name, t)| WeightEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    container::write_header(w, BMDL_MAGIC, BMDL_VERSION, &header)?;
    for (_, t) in model.weights().iter() {
        container::write_f32s(w, t)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<Seq2SeqModel> {
    let header: ModelHeader = container::read_header(r, BMDL_MAGIC, BMDL_VERSION)?;
    let mut weights = NamedWeights::new();
    for e in &header.weights {
        if weights.contains(&e.name) {
            return Err(ContainerError::Inconsistent(format!("duplicate weight {}", e.name)).into());
        }
        weights.insert(&e.name, container::read_f32s(r, &e.shape)?);
    }
    container::expect_eof(r)?;
    Seq2SeqModel::from_weights(header.config, weights)
}

pub fn save_model(path: &Path, model: &Seq2SeqModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Seq2SeqModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}
