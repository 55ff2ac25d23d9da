//! SMILES parsing, circular fingerprints and reaction-string validation.

mod fingerprint;
mod reaction;
mod smiles;
mod writer;

pub use fingerprint::{fingerprint, structural_key, tanimoto, Fingerprint, StructuralKey, DEFAULT_BITS, DEFAULT_RADIUS};
pub use reaction::{validate_reaction_string, Layout, ParsedReaction, ReactionError};
pub use smiles::{parse_smiles, Atom, Bond, BondOrder, MolGraph, SmilesError, SmilesErrorKind};
pub use writer::write_smiles;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("fingerprint widths differ: {0} vs {1} bits")]
    WidthMismatch(usize, usize),
    #[error("fingerprint of an empty graph")]
    EmptyGraph,
    #[error(transparent)]
    Smiles(#[from] SmilesError),
}
