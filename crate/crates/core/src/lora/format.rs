//! `LORB` adapter bundle files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterBundle, BundleMeta, LoraModule, Result};
use crate::container::{self, ContainerError};

pub const LORB_MAGIC: &[u8; 4] = b"LORB";
pub const LORB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleHeader {
    pub target_name: String,
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub alpha: f64,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub name: String,
    pub seed: u64,
    pub modules: Vec<ModuleHeader>,
    #[serde(default)]
    pub tasks: Vec<String>,
}

impl BundleHeader {
    pub fn of(bundle: &AdapterBundle) -> Self {
        Self {
            name: bundle.name.clone(),
            seed: bundle.meta.seed,
            modules: bundle
                .modules
                .values()
                .map(|m| ModuleHeader {
                    target_name: m.target_name.clone(),
                    d: m.d(),
                    k: m.k(),
                    r: m.rank(),
                    alpha: m.alpha(),
                    dropout_p: m.dropout_p(),
                })
                .collect(),
            tasks: bundle.meta.tasks.clone(),
        }
    }
}

/// Writes the header, then `A` and `B` of every module in header order as
/// little-endian `f32`.
pub fn write_bundle<W: Write>(w: &mut W, bundle: &AdapterBundle) -> Result<()> {
    let header = BundleHeader::of(bundle);
    container::write_header(w, LORB_MAGIC, LORB_VERSION, &header)?;
    for m in bundle.modules.values() {
        container::write_f32s(w, m.a())?;
        container::write_f32s(w, m.b())?;
    }
    Ok(())
}

pub fn save_bundle(path: &Path, bundle: &AdapterBundle) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bundle(&mut w, bundle)?;
    w.flush()?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<AdapterBundle> {
    read_bundle(&mut BufReader::new(File::open(path)?))
}

pub fn read_bundle<R: Read>(r: &mut R) -> Result<AdapterBundle> {
    let header: BundleHeader = container::read_header(r, LORB_MAGIC, LORB_VERSION)?;
    let mut bundle = AdapterBundle::new(&header.name, header.seed);
    bundle.meta = BundleMeta {
        seed: header.seed,
        tasks: header.tasks.clone(),
    };
    for mh in &header.modules {
        let a = container::read_f32s(r, &[mh.r, mh.d])?;
        let b = container::read_f32s(r, &[mh.k, mh.r])?;
        let m = LoraModule::from_parts(&mh.target_name, a, b, mh.alpha, mh.dropout_p)?;
        bundle.insert(m)?;
    }
    container::expect_eof(r)?;
    if BundleHeader::of(&bundle).modules != header.modules {
        return Err(ContainerError::Inconsistent("module order is not sorted by target name".into()).into());
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::LoraError;
    use crate::tensor::Tensor;

    fn sample() -> AdapterBundle {
        let targets = vec![("enc.0.attn.q".to_string(), [6, 4]), ("enc.0.attn.v".to_string(), [6, 4])];
        let mut b = AdapterBundle::for_targets("fwd", &targets, 2, 4.0, 0.05, 11).unwrap();
        b.meta.tasks = vec!["FWD".into()];
        for (i, m) in b.modules.values_mut().enumerate() {
            *m.b_mut() = Tensor::uniform_seeded(&[6, 2], 0.3, i as u64);
        }
        b
    }

    #[test]
    fn layout_starts_with_magic_version_and_header() {
        let mut buf = Vec::new();
        write_bundle(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"LORB");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[12..12 + len]).unwrap();
        assert_eq!(header["name"], "fwd");
        assert_eq!(header["modules"][0]["r"], 2);
        // 2 modules × (A 2×4 + B 6×2) f32 values
        assert_eq!(buf.len() - 12 - len, 2 * (8 + 12) * 4);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut first = Vec::new();
        write_bundle(&mut first, &sample()).unwrap();
        let loaded = read_bundle(&mut first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_bundle(&mut second, &loaded).unwrap();
        assert_eq!(first, second);
        assert_eq!(loaded.meta.tasks, vec!["FWD".to_string()]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        write_bundle(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_bundle(&mut bad.as_slice()),
            Err(LoraError::Format(ContainerError::BadMagic { .. }))
        ));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            read_bundle(&mut &short[..]),
            Err(LoraError::Format(ContainerError::Truncated))
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            read_bundle(&mut long.as_slice()),
            Err(LoraError::Format(ContainerError::TrailingBytes(1)))
        ));
    }
}
