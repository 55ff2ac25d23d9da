use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::TaskExample;
use crate::lora::AdapterBundle;
use crate::model::Seq2SeqModel;

use super::{evaluate_model, EvalReport, Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassForgetting {
    pub class: String,
    pub before: BTreeMap<usize, f64>,
    pub full_ft: BTreeMap<usize, f64>,
    pub lora_attached: BTreeMap<usize, f64>,
    pub lora_detached: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub ks: Vec<usize>,
    pub classes: Vec<ClassForgetting>,
    /// Every detached evaluation reproduced the base predictions exactly.
    pub detach_exact: bool,
    /// Classes where the detached column differs from the base column.
    pub violations: Vec<String>,
}

/// Acc@K per evaluation set under four conditions: base model, fully
/// fine-tuned model, base with `lora_bundle` attached, and base after
/// detaching it again.
///
/// The detached condition is compared with the base condition at the level
/// of decoded sequences and log-probs; any difference is listed in
/// `violations`.
pub fn forgetting_report(
    base: &Seq2SeqModel,
    full_ft: &Seq2SeqModel,
    lora_bundle: &AdapterBundle,
    eval_sets: &[(String, Vec<TaskExample>)],
    ks: &[usize],
    beam_width: usize,
) -> Result<ForgettingReport> {
    if base.config() != full_ft.config() {
        return Err(TrainError::Mismatch("base and fully fine-tuned models have different configs".into()));
    }
    let mut base = base.clone();
    if let Some(name) = base.active_adapter().map(|b| b.name.clone()) {
        base.detach(&name)?;
    }
    let mut full_ft = full_ft.clone();
    if let Some(name) = full_ft.active_adapter().map(|b| b.name.clone()) {
        full_ft.detach(&name)?;
    }
    let mut classes = Vec::with_capacity(eval_sets.len());
    let mut violations = Vec::new();
    for (class, data) in eval_sets {
        let before = evaluate_model(&base, data, ks, beam_width, class)?;
        let full = evaluate_model(&full_ft, data, ks, beam_width, class)?;
        let mut adapted = base.clone();
        adapted.attach(lora_bundle.clone())?;
        let attached = evaluate_model(&adapted, data, ks, beam_width, class)?;
        adapted.detach(&lora_bundle.name)?;
        let detached = evaluate_model(&adapted, data, ks, beam_width, class)?;
        if !same_outputs(&before, &detached) {
            violations.push(class.clone());
        }
        classes.push(ClassForgetting {
            class: class.clone(),
            before: before.accuracy,
            full_ft: full.accuracy,
            lora_attached: attached.accuracy,
            lora_detached: detached.accuracy,
        });
    }
    if !violations.is_empty() {
        log::error!("detached adapter changed outputs on {}", violations.join(", "));
    }
    Ok(ForgettingReport {
        ks: ks.to_vec(),
        classes,
        detach_exact: violations.is_empty(),
        violations,
    })
}

fn same_outputs(a: &EvalReport, b: &EvalReport) -> bool {
    a.accuracy == b.accuracy
        && a.examples.len() == b.examples.len()
        && a.examples.iter().zip(&b.examples).all(|(x, y)| {
            x.predictions.len() == y.predictions.len()
                && x.predictions
                    .iter()
                    .zip(&y.predictions)
                    .all(|(p, q)| p.text == q.text && p.log_prob.to_bits() == q.log_prob.to_bits())
        })
}
