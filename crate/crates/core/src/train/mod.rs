//! Training loops (full and adapter-only), Acc@K evaluation, forgetting
//! and out-of-distribution reagent reports.

mod eval;
mod forgetting;
mod ood;

pub use eval::{evaluate_acc_at_k, evaluate_model, EvalReport, ExampleResult, Prediction, DEFAULT_BEAM_WIDTH, DEFAULT_KS};
pub use forgetting::{forgetting_report, ClassForgetting, ForgettingReport};
pub use ood::{histogram_csv, ood_reagents, HistogramBin, OodEntry, OodReport};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{TaskExample, Tasks};
use crate::derive_seed;
use crate::model::vocab::tokenize;
use crate::model::{GradMode, ModelError, Seq2SeqModel};
use crate::tensor::{Adam, AdamConfig, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chem(#[from] crate::chem::ChemError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Full,
    Lora,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraHparams {
    pub r: usize,
    pub alpha: f64,
    pub dropout_p: f64,
    /// Weight names to adapt; empty means the default query/value set.
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub tasks: Tasks,
    pub multi_task: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lora: Option<LoraHparams>,
    /// Stop after this many optimiser steps (across epochs).
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    /// A learning rate of exactly zero is allowed so that a no-op step can
    /// be checked; negative or non-finite rates are rejected.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        match (self.mode, &self.lora) {
            (TrainMode::Lora, None) => Err(TrainError::Config("lora mode needs r, alpha and dropout".into())),
            (TrainMode::Full, Some(_)) => Err(TrainError::Config("lora hyperparameters given in full mode".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: TrainMode,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub base_checksum_before: String,
    pub base_checksum_after: String,
}

/// Runs Adam over shuffled mini-batches.
///
/// Full mode updates every base weight and requires no active adapter.
/// Lora mode requires an active bundle and updates only its `A`/`B` factors;
/// base weights are never written. Batches are reshuffled each epoch from
/// a seed derived from `cfg.seed`, so reruns are bit-identical.
pub fn train(model: &mut Seq2SeqModel, data: &[TaskExample], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let grad_mode = match (cfg.mode, model.active_adapter()) {
        (TrainMode::Full, None) => GradMode::Base,
        (TrainMode::Lora, Some(_)) => GradMode::Adapter,
        (TrainMode::Full, Some(b)) => {
            return Err(TrainError::Config(format!("full mode with adapter {:?} attached", b.name)))
        }
        (TrainMode::Lora, None) => return Err(TrainError::Config("lora mode without an attached adapter".into())),
    };
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = data
        .iter()
        .map(|e| (tokenize(&e.input_text), tokenize(&e.target_text)))
        .collect();
    let before = model.checksum();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut log = TrainLog {
        mode: cfg.mode,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
        base_checksum_before: before.clone(),
        base_checksum_after: before,
    };
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64])));
        let mut total = 0.0;
        let mut batches = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| log.steps >= m) {
                if batches > 0 {
                    log.epoch_losses.push(total / batches as f64);
                }
                break 'epochs;
            }
            let refs: Vec<(&[u32], &[u32])> = chunk.iter().map(|&i| (&pairs[i].0[..], &pairs[i].1[..])).collect();
            let batch = model.encode_pairs(&refs)?;
            let mut tape = Tape::new();
            let mut binds = model.bind(&mut tape, grad_mode)?;
            binds.set_dropout_seed(Some(derive_seed(cfg.seed, &[epoch as u64, step as u64, 1])));
            let loss_var = model.loss(&mut tape, &binds, &batch)?;
            let loss = tape.value(loss_var).data()[0];
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { what: "loss", epoch, step });
            }
            match tape.backward(loss_var) {
                Err(TensorError::NonFinite(_)) => return Err(TrainError::NonFinite { what: "gradient", epoch, step }),
                r => r.map_err(ModelError::from)?,
            }
            adam.begin_step();
            match grad_mode {
                GradMode::Base => {
                    let weights = model.weights_mut();
                    for (name, var) in binds.weight_vars() {
                        if let Some(g) = tape.grad(var) {
                            adam.update(name, weights.get_mut(name)?.data_mut(), g);
                        }
                    }
                }
                _ => {
                    let bundle = model.active_adapter_mut().expect("adapter checked above");
                    for (target, a, b) in binds.lora_vars() {
                        let m = bundle.modules.get_mut(target).expect("bound from this bundle");
                        if let Some(g) = tape.grad(a) {
                            adam.update(&format!("{target}.A"), m.a_mut().data_mut(), g);
                        }
                        if let Some(g) = tape.grad(b) {
                            adam.update(&format!("{target}.B"), m.b_mut().data_mut(), g);
                        }
                    }
                }
            }
            total += loss;
            batches += 1;
            log.steps += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    log.base_checksum_after = model.checksum();
    Ok(log)
}
