use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chem::{parse_smiles, structural_key, StructuralKey};

use super::ReactionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurationReport {
    pub input_count: usize,
    pub yield_dropped: usize,
    pub dedup_dropped: usize,
    pub output_count: usize,
}

/// Sorted structural keys of the products (a multiset key, independent of
/// SMILES spelling and listing order). `None` if a product fails to parse.
pub fn product_key(r: &ReactionRecord) -> Option<Vec<StructuralKey>> {
    let mut keys = r
        .products
        .iter()
        .map(|p| parse_smiles(p).ok().and_then(|g| structural_key(&g).ok()))
        .collect::<Option<Vec<_>>>()?;
    keys.sort();
    Some(keys)
}

/// Yield filter then product deduplication, preserving input order.
///
/// With `min_yield > 0` a record survives only if its yield is strictly
/// greater; records without a yield are dropped. `min_yield <= 0` disables
/// the filter. Deduplication keeps the first record per [`product_key`].
pub fn curate(records: &[ReactionRecord], min_yield: f64, dedup_by_product: bool) -> (Vec<ReactionRecord>, CurationReport) {
    let mut report = CurationReport {
        input_count: records.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if min_yield > 0.0 && !r.yield_fraction.is_some_and(|y| y > min_yield) {
            report.yield_dropped += 1;
            continue;
        }
        if dedup_by_product {
            let key = product_key(r).unwrap_or_default();
            if !seen.insert(key) {
                report.dedup_dropped += 1;
                continue;
            }
        }
        out.push(r.clone());
    }
    if out.len() < records.len() {
        log::info!(
            "curation kept {} of {} records ({} below yield, {} duplicate products)",
            out.len(),
            records.len(),
            report.yield_dropped,
            report.dedup_dropped
        );
    }
    report.output_count = out.len();
    (out, report)
}
