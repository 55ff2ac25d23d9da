//! Byte-level vocabulary: three reserved ids followed by the 256 byte values.

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const BYTE_OFFSET: u32 = 3;
pub const VOCAB_SIZE: usize = 256 + BYTE_OFFSET as usize;

const REPLACEMENT: &str = "\u{FFFD}";

/// UTF-8 bytes shifted by [`BYTE_OFFSET`], terminated by [`EOS`].
pub fn tokenize(text: &str) -> Vec<u32> {
    let mut ids: Vec<u32> = text.bytes().map(|b| b as u32 + BYTE_OFFSET).collect();
    ids.push(EOS);
    ids
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detokenized {
    pub text: String,
    /// A reserved or out-of-range id appeared before the first EOS and was
    /// rendered as U+FFFD.
    pub had_reserved: bool,
}

/// Decodes ids up to (not including) the first [`EOS`].
pub fn detokenize(ids: &[u32]) -> Detokenized {
    let mut bytes = Vec::with_capacity(ids.len());
    let mut had_reserved = false;
    for &id in ids {
        if id == EOS {
            break;
        }
        if (BYTE_OFFSET..VOCAB_SIZE as u32).contains(&id) {
            bytes.push((id - BYTE_OFFSET) as u8);
        } else {
            had_reserved = true;
            bytes.extend_from_slice(REPLACEMENT.as_bytes());
        }
    }
    Detokenized {
        text: String::from_utf8_lossy(&bytes).into_owned(),
        had_reserved,
    }
}
