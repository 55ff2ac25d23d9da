use serde::{Deserialize, Serialize};

use super::{ChemError, MolGraph};

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_BITS: usize = 2048;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Fixed-width bitset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    n_bits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn new(n_bits: usize) -> Self {
        Self {
            n_bits,
            words: vec![0; n_bits.div_ceil(64)],
        }
    }

    pub fn from_indices(n_bits: usize, bits: &[usize]) -> Self {
        let mut fp = Self::new(n_bits);
        for &b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.n_bits, "bit {bit} out of range for {} bits", self.n_bits);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.n_bits && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_bits).filter(|&b| self.get(b))
    }

    /// Lowercase hex, bit 0 in the lowest nibble of the first byte.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(self.n_bits.div_ceil(8))
            .collect();
        hex::encode(bytes)
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// ECFP-style circular fingerprint.
///
/// Each atom starts from a hash of (atomic number, heavy degree, hydrogens,
/// charge, isotope, ring membership, aromaticity). Every round rehashes the
/// atom's identifier with its neighbours' `(bond order, identifier)` pairs
/// in sorted order. All identifiers from rounds `0..=radius` set bit
/// `id mod n_bits`. The hash is 64-bit FNV-1a over a fixed little-endian
/// encoding, so results are platform independent.
pub fn fingerprint(g: &MolGraph, radius: usize, n_bits: usize) -> Result<Fingerprint, ChemError> {
    if g.atoms.is_empty() {
        return Err(ChemError::EmptyGraph);
    }
    let adj = g.adjacency();
    let in_ring = g.ring_atoms();
    let mut fp = Fingerprint::new(n_bits);
    let mut ids: Vec<u64> = g
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut buf = vec![
                a.atomic_number,
                adj[i].len() as u8,
                a.hydrogens,
                a.charge as u8,
                in_ring[i] as u8,
                a.aromatic as u8,
            ];
            buf.extend(a.isotope.unwrap_or(0).to_le_bytes());
            fnv1a(&buf)
        })
        .collect();
    for &id in &ids {
        fp.set((id % n_bits as u64) as usize);
    }
    for round in 1..=radius {
        let next: Vec<u64> = (0..ids.len())
            .map(|i| {
                let mut env: Vec<(u8, u64)> = adj[i].iter().map(|&(j, o)| (o.code(), ids[j])).collect();
                env.sort_unstable();
                let mut buf = Vec::with_capacity(9 + env.len() * 9);
                buf.push(round as u8);
                buf.extend(ids[i].to_le_bytes());
                for (code, id) in env {
                    buf.push(code);
                    buf.extend(id.to_le_bytes());
                }
                fnv1a(&buf)
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % n_bits as u64) as usize);
        }
    }
    Ok(fp)
}

/// `|a ∧ b| / |a ∨ b|`, with two empty sets defined as identical.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    if a.n_bits != b.n_bits {
        return Err(ChemError::WidthMismatch(a.n_bits, b.n_bits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Identity key for set membership: fingerprint plus atom and bond counts.
/// Distinct structures can collide when they share all three.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StructuralKey {
    pub fingerprint: String,
    pub atoms: usize,
    pub bonds: usize,
}

pub fn structural_key(g: &MolGraph) -> Result<StructuralKey, ChemError> {
    Ok(StructuralKey {
        fingerprint: fingerprint(g, DEFAULT_RADIUS, DEFAULT_BITS)?.to_hex(),
        atoms: g.atoms.len(),
        bonds: g.bonds.len(),
    })
}
