use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chem::{fingerprint, parse_smiles, structural_key, tanimoto, Fingerprint, StructuralKey, DEFAULT_BITS, DEFAULT_RADIUS};
use crate::data::Task;

use super::{EvalReport, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodEntry {
    pub smiles: String,
    pub source_model: String,
    pub example_index: usize,
    /// 1-based beam rank of the prediction containing the reagent.
    pub rank: usize,
    /// Highest similarity to any task-training reagent.
    pub max_tanimoto: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub entries: Vec<OodEntry>,
    /// Ten 0.1-wide bins over `[0, 1]`; 1.0 falls in the last bin.
    pub histogram: Vec<HistogramBin>,
    /// Predicted reagent fragments considered.
    pub considered: usize,
    /// Fragments that failed to parse as SMILES.
    pub unparseable: usize,
    /// Post-hoc check that no entry's structure occurs in either
    /// training set.
    pub disjoint: bool,
}

fn keyed(smiles: &[String]) -> (HashSet<StructuralKey>, Vec<Fingerprint>) {
    let mut keys = HashSet::new();
    let mut fps = Vec::new();
    for s in smiles {
        if let Ok(g) = parse_smiles(s) {
            if let (Ok(k), Ok(f)) = (structural_key(&g), fingerprint(&g, DEFAULT_RADIUS, DEFAULT_BITS)) {
                keys.insert(k);
                fps.push(f);
            }
        }
    }
    (keys, fps)
}

/// Reagents proposed in the top `top_k` predictions of REAG examples that
/// are structurally absent from both training reagent sets.
pub fn ood_reagents(
    report: &EvalReport,
    source_model: &str,
    task_train_reagents: &[String],
    general_train_reagents: &[String],
    top_k: usize,
) -> Result<OodReport> {
    let (task_keys, task_fps) = keyed(task_train_reagents);
    let (general_keys, _) = keyed(general_train_reagents);
    let mut entries = Vec::new();
    let mut considered = 0;
    let mut unparseable = 0;
    let mut entry_keys = Vec::new();
    for ex in report.examples.iter().filter(|e| e.task == Task::Reag) {
        for (rank, pred) in ex.predictions.iter().take(top_k).enumerate() {
            for frag in pred.text.split('.') {
                considered += 1;
                let Ok(g) = parse_smiles(frag) else {
                    unparseable += 1;
                    continue;
                };
                let key = structural_key(&g)?;
                if task_keys.contains(&key) || general_keys.contains(&key) {
                    continue;
                }
                let fp = fingerprint(&g, DEFAULT_RADIUS, DEFAULT_BITS)?;
                let mut best = 0.0_f64;
                for t in &task_fps {
                    best = best.max(tanimoto(&fp, t)?);
                }
                entries.push(OodEntry {
                    smiles: frag.to_string(),
                    source_model: source_model.to_string(),
                    example_index: ex.index,
                    rank: rank + 1,
                    max_tanimoto: best,
                });
                entry_keys.push(key);
            }
        }
    }
    let disjoint = entry_keys
        .iter()
        .all(|k| !task_keys.contains(k) && !general_keys.contains(k));
    Ok(OodReport {
        histogram: histogram(entries.iter().map(|e| e.max_tanimoto)),
        entries,
        considered,
        unparseable,
        disjoint,
    })
}

fn histogram(values: impl Iterator<Item = f64>) -> Vec<HistogramBin> {
    let mut counts = [0usize; 10];
    for v in values {
        let bin = ((v * 10.0).floor() as usize).min(9);
        counts[bin] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            bin_start: i as f64 / 10.0,
            bin_end: (i + 1) as f64 / 10.0,
            count,
        })
        .collect()
}

/// `bin_start,bin_end,count` rows for plotting.
pub fn histogram_csv(report: &OodReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["bin_start", "bin_end", "count"]);
    for b in &report.histogram {
        let _ = w.write_record([format!("{:.1}", b.bin_start), format!("{:.1}", b.bin_end), b.count.to_string()]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ExampleResult, Prediction};
    use std::collections::BTreeMap;

    fn report(preds: &[&str]) -> EvalReport {
        EvalReport {
            dataset: "t".into(),
            tasks: vec![Task::Reag],
            beam_width: 5,
            accuracy: BTreeMap::new(),
            examples: vec![ExampleResult {
                index: 0,
                task: Task::Reag,
                input: String::new(),
                target: String::new(),
                predictions: preds
                    .iter()
                    .map(|p| Prediction {
                        text: p.to_string(),
                        log_prob: 0.0,
                        finished: true,
                    })
                    .collect(),
                hit_rank: None,
            }],
        }
    }

    fn strings(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn known_reagents_are_excluded() {
        let r = ood_reagents(&report(&["OCC", "C1CCOC1"]), "m", &strings(&["CCO"]), &strings(&["C1CCOC1"]), 5).unwrap();
        assert!(r.entries.is_empty());
        assert_eq!(r.considered, 2);
        assert!(r.histogram.iter().all(|b| b.count == 0));
    }

    #[test]
    fn novel_reagent_is_listed_with_similarity() {
        let train = strings(&["C1CCOC1", "CCO"]);
        let r = ood_reagents(&report(&["C1COCCO1.X", "CCO"]), "m", &train, &[], 5).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.unparseable, 1);
        let e = &r.entries[0];
        assert_eq!((e.smiles.as_str(), e.rank), ("C1COCCO1", 1));
        let fp = |s: &str| fingerprint(&parse_smiles(s).unwrap(), 2, 2048).unwrap();
        let expect = tanimoto(&fp("C1COCCO1"), &fp("C1CCOC1"))
            .unwrap()
            .max(tanimoto(&fp("C1COCCO1"), &fp("CCO")).unwrap());
        assert_eq!(e.max_tanimoto, expect);
        assert!(r.disjoint);
        assert_eq!(r.histogram.iter().map(|b| b.count).sum::<usize>(), 1);
    }

    #[test]
    fn csv_layout() {
        let r = ood_reagents(&report(&[]), "m", &[], &[], 5).unwrap();
        let csv = histogram_csv(&r);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], "bin_start,bin_end,count");
        assert_eq!(lines[10], "0.9,1.0,0");
    }
}
