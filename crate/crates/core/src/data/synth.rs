//! Template-generated reaction sets used for pretraining and the forgetting
//! experiment, plus a string-copy task for trainability checks.
//!
//! Grammar A mixes condensation/substitution templates over a pool of
//! alkyl and aryl groups with a meta-arylboronic ester formation, so its
//! targets cover the SMILES alphabet. Grammar B is a para-selective arene
//! C-H borylation whose solvent depends on the substituent. The two share the SMILES
//! alphabet but not their input/output structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ReactionRecord, Task, TaskExample};

/// Groups usable both as a prefix (`{R}C(=O)O`) and a suffix (`O{R}`).
pub const ALKYL: [&str; 14] = [
    "C", "CC", "CCC", "CC(C)", "CCCC", "CC(C)C", "CCC(C)", "CC(C)(C)", "CCCCCC", "C1CC1", "C1CCCC1", "c1ccccc1",
    "c1ccc(C)cc1", "c1ccc(OC)cc1",
];

const DCC: &str = "C(=NC1CCCCC1)=NC1CCCCC1";
const DMAP: &str = "CN(C)c1ccncc1";
const DIPEA: &str = "CCN(C(C)C)C(C)C";
const DMF: &str = "CN(C)C=O";

/// Arene substituents written as a prefix to `c1ccccc1`.
pub const ARENE_SUBSTITUENTS: [&str; 14] = [
    "C", "CC", "CCC", "CC(C)", "CO", "CCO", "F", "Cl", "Br", "FC(F)(F)", "N#C", "COC(=O)", "CN(C)", "CS",
];

const PINACOLBORANE: &str = "CC1(C)OBOC1(C)C";
const B2PIN2: &str = "CC1(C)OB(B2OC(C)(C)C(C)(C)O2)OC1(C)C";
const BPIN_SUFFIX: &str = "B2OC(C)(C)C(C)(C)O2";
const PINACOL: &str = "CC(C)(O)C(C)(C)O";
const NEOPENTYL_GLYCOL: &str = "CC(C)(CO)CO";
const BNEO_SUFFIX: &str = "B2OCC(C)(C)CO2";
const TOLUENE: &str = "Cc1ccccc1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grammar {
    A,
    B,
}

fn record(id: String, reactants: &[String], reagents: &[&str], product: String, class: &str) -> ReactionRecord {
    ReactionRecord {
        id,
        reactants: reactants.to_vec(),
        reagents: reagents.iter().map(|s| s.to_string()).collect(),
        products: vec![product],
        yield_fraction: None,
        class_label: Some(class.to_string()),
    }
}

/// Every grammar-A reaction in a fixed order.
pub fn grammar_a() -> Vec<ReactionRecord> {
    let mut out = Vec::new();
    for (i, r1) in ALKYL.iter().enumerate() {
        for (j, r2) in ALKYL.iter().enumerate() {
            out.push(record(
                format!("A-ester-{i}-{j}"),
                &[format!("{r1}C(=O)O"), format!("{r2}O")],
                &[DCC, DMAP],
                format!("{r1}C(=O)O{r2}"),
                "esterification",
            ));
            out.push(record(
                format!("A-amide-{i}-{j}"),
                &[format!("{r1}C(=O)O"), format!("{r2}N")],
                &[DIPEA, DMF],
                format!("{r1}C(=O)N{r2}"),
                "amide_coupling",
            ));
            out.push(record(
                format!("A-ether-{i}-{j}"),
                &[format!("{r1}O"), format!("{r2}Br")],
                &["[NaH]", DMF],
                format!("{r1}O{r2}"),
                "williamson_ether",
            ));
        }
    }
    for (i, x) in ARENE_SUBSTITUENTS.iter().enumerate() {
        for (j, (diol, suffix)) in [(PINACOL, BPIN_SUFFIX), (NEOPENTYL_GLYCOL, BNEO_SUFFIX)].iter().enumerate() {
            out.push(record(
                format!("A-boronate-{i}-{j}"),
                &[format!("{x}c1cccc(B(O)O)c1"), diol.to_string()],
                &[TOLUENE],
                format!("{x}c1cccc({suffix})c1"),
                "boronic_ester",
            ));
        }
    }
    out
}

/// Every grammar-B reaction in a fixed order.
pub fn grammar_b() -> Vec<ReactionRecord> {
    let mut out = Vec::new();
    for (i, x) in ARENE_SUBSTITUENTS.iter().enumerate() {
        let halogen = matches!(*x, "F" | "Cl" | "Br");
        let solvent = if halogen { "C1CCOC1" } else { "CCCCCC" };
        for (j, boron) in [PINACOLBORANE, B2PIN2].iter().enumerate() {
            out.push(record(
                format!("B-boryl-{i}-{j}"),
                &[format!("{x}c1ccccc1"), boron.to_string()],
                &["[Ir]", solvent],
                format!("{x}c1ccc({BPIN_SUFFIX})cc1"),
                "ch_borylation",
            ));
        }
    }
    out
}

/// Seeded shuffle of the grammar, with seeded yields in `[0.1, 0.95)`,
/// truncated to `n` records when given.
pub fn generate(grammar: Grammar, n: Option<usize>, seed: u64) -> Vec<ReactionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = match grammar {
        Grammar::A => grammar_a(),
        Grammar::B => grammar_b(),
    };
    all.shuffle(&mut rng);
    for r in &mut all {
        r.yield_fraction = Some(rng.random_range(0.1..0.95));
    }
    if let Some(n) = n {
        all.truncate(n);
    }
    all
}

/// `n` distinct random strings over a SMILES-like alphabet, each paired
/// with itself as target.
pub fn copy_task(n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<TaskExample> {
    const ALPHABET: &[u8] = b"CNOcn()=#123";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(min_len..=max_len);
        let s: String = (0..len)
            .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char)
            .collect();
        if seen.insert(s.clone()) {
            out.push(TaskExample {
                task: Task::Fwd,
                input_text: s.clone(),
                target_text: s,
            });
        }
    }
    out
}
