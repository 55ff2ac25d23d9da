//! Modular LoRA fine-tuning for multi-task reaction prediction with a
//! desk-scale byte-level encoder–decoder transformer.

mod container;
pub mod chem;
pub mod data;
pub mod lora;
pub mod model;
pub mod tensor;
pub mod stats;
pub mod train;

pub use container::ContainerError;

/// Derives a child seed from a base seed and a path of integers
/// (SplitMix64 finaliser applied per component).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
