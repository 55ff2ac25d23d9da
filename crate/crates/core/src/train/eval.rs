use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Task, TaskExample};
use crate::model::vocab::{detokenize, tokenize};
use crate::model::{beam_decode, Seq2SeqModel, StepDecoder};

use super::{Result, TrainError};

pub const DEFAULT_KS: [usize; 4] = [1, 2, 3, 5];
pub const DEFAULT_BEAM_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub text: String,
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub index: usize,
    pub task: Task,
    pub input: String,
    pub target: String,
    /// Beam output, best first.
    pub predictions: Vec<Prediction>,
    /// 1-based rank of the first exact match, if any.
    pub hit_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub tasks: Vec<Task>,
    pub beam_width: usize,
    /// Acc@K in percent.
    pub accuracy: BTreeMap<usize, f64>,
    pub examples: Vec<ExampleResult>,
}

impl EvalReport {
    pub fn acc(&self, k: usize) -> Option<f64> {
        self.accuracy.get(&k).copied()
    }

    /// Acc@K is non-decreasing in K and within `[0, 100]`.
    pub fn is_monotone(&self) -> bool {
        let v: Vec<f64> = self.accuracy.values().copied().collect();
        v.iter().all(|a| (0.0..=100.0).contains(a)) && v.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Beam-decodes every example and scores exact matches (trailing
/// whitespace ignored) within the top K, for each K in `ks`.
///
/// Examples are decoded in parallel and collected in input order.
pub fn evaluate_acc_at_k<D: StepDecoder + Sync>(
    decoder: &D,
    data: &[TaskExample],
    ks: &[usize],
    beam_width: usize,
    max_len: usize,
    dataset: &str,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if ks.contains(&0) || max_k == 0 {
        return Err(TrainError::Config(format!("ks must be positive and non-empty, got {ks:?}")));
    }
    if beam_width < max_k {
        return Err(TrainError::Config(format!("beam width {beam_width} is below max K {max_k}")));
    }
    let examples = data
        .par_iter()
        .enumerate()
        .map(|(index, ex)| -> Result<ExampleResult> {
            let hyps = beam_decode(decoder, &tokenize(&ex.input_text), beam_width, max_len)?;
            let target = ex.target_text.trim_end();
            let predictions: Vec<Prediction> = hyps
                .into_iter()
                .map(|h| Prediction {
                    text: detokenize(&h.ids).text,
                    log_prob: h.log_prob,
                    finished: h.finished,
                })
                .collect();
            let hit_rank = predictions.iter().position(|p| p.text.trim_end() == target).map(|i| i + 1);
            Ok(ExampleResult {
                index,
                task: ex.task,
                input: ex.input_text.clone(),
                target: ex.target_text.clone(),
                predictions,
                hit_rank,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accuracy = ks
        .iter()
        .map(|&k| {
            let hits = examples.iter().filter(|e| e.hit_rank.is_some_and(|r| r <= k)).count();
            (k, 100.0 * hits as f64 / examples.len() as f64)
        })
        .collect();
    let mut tasks: Vec<Task> = data.iter().map(|e| e.task).collect();
    tasks.sort();
    tasks.dedup();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        tasks,
        beam_width,
        accuracy,
        examples,
    })
}

/// [`evaluate_acc_at_k`] on the model's cached decoder, with the active
/// adapter (if any) merged in.
pub fn evaluate_model(
    model: &Seq2SeqModel,
    data: &[TaskExample],
    ks: &[usize],
    beam_width: usize,
    dataset: &str,
) -> Result<EvalReport> {
    let inf = model.inference()?;
    evaluate_acc_at_k(&inf, data, ks, beam_width, model.config().max_sequence_length, dataset)
}
