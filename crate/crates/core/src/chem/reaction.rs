use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_smiles, SmilesError};

/// Arrangement of components around the single `>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// `reactants.reagents>product`
    Forward,
    /// `reactants.product>reagents`
    Reagents,
    /// `product>reactants`
    Retro,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedReaction {
    pub layout: Layout,
    /// Fragments before `>`, in source order.
    pub left: Vec<String>,
    /// Fragments after `>`, in source order.
    pub right: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReactionError {
    #[error("reaction string has no '>'")]
    MissingArrow,
    #[error("reaction string has multiple '>'")]
    MultipleArrows,
    #[error("fragment {index} ({fragment:?}) is not valid SMILES: {source}")]
    Fragment {
        index: usize,
        fragment: String,
        source: SmilesError,
    },
}

/// Splits on the single `>`, then on `.`, and parses every fragment.
///
/// Fragment indices count across both sides, left first.
pub fn validate_reaction_string(s: &str, layout: Layout) -> Result<ParsedReaction, ReactionError> {
    let sides: Vec<&str> = s.split('>').collect();
    match sides.len() {
        1 => return Err(ReactionError::MissingArrow),
        2 => {}
        _ => return Err(ReactionError::MultipleArrows),
    }
    let mut index = 0;
    let mut parse_side = |side: &str| -> Result<Vec<String>, ReactionError> {
        side.split('.')
            .map(|frag| {
                let i = index;
                index += 1;
                parse_smiles(frag).map(|_| frag.to_string()).map_err(|source| ReactionError::Fragment {
                    index: i,
                    fragment: frag.to_string(),
                    source,
                })
            })
            .collect()
    };
    let left = parse_side(sides[0])?;
    let right = parse_side(sides[1])?;
    Ok(ParsedReaction { layout, left, right })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::SmilesErrorKind;

    #[test]
    fn forward_split() {
        let r = validate_reaction_string("CCO.CC>CCC", Layout::Forward).unwrap();
        assert_eq!(r.left, ["CCO", "CC"]);
        assert_eq!(r.right, ["CCC"]);
    }

    #[test]
    fn arrow_errors() {
        assert_eq!(validate_reaction_string("CCO>CC>C", Layout::Forward), Err(ReactionError::MultipleArrows));
        assert_eq!(validate_reaction_string("CCO", Layout::Retro), Err(ReactionError::MissingArrow));
    }

    #[test]
    fn bad_fragment_is_indexed() {
        match validate_reaction_string("C(C>CC", Layout::Forward) {
            Err(ReactionError::Fragment { index, source, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(source.kind, SmilesErrorKind::UnbalancedParen);
            }
            other => panic!("{other:?}"),
        }
        match validate_reaction_string("CC.CO>C1C", Layout::Reagents) {
            Err(ReactionError::Fragment { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        assert!(validate_reaction_string("CC>", Layout::Retro).is_err());
    }
}
