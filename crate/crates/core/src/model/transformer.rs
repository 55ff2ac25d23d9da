use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::derive_seed;
use crate::lora::{dropout_mask, lora_linear, merge, AdapterBundle, LoraError};
use crate::tensor::{AttentionShape, Tape, Tensor, Var};

use super::vocab::{PAD, VOCAB_SIZE};
use super::{ModelConfig, ModelError, NamedWeights, Result};

pub(crate) const RMS_EPS: f64 = 1e-6;

/// Which leaves of a training graph receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    None,
    /// Every base weight; adapters must be detached.
    Base,
    /// Only the `A`/`B` factors of the active adapter bundle.
    Adapter,
}

#[derive(Debug, Clone, Copy)]
struct LoraVars {
    a: Var,
    b: Var,
    scale: f64,
    dropout_p: f64,
    index: u64,
}

/// Tape variables for every weight of one forward pass.
#[derive(Debug, Clone)]
pub struct Bindings {
    weights: BTreeMap<String, Var>,
    lora: BTreeMap<String, LoraVars>,
    dropout_seed: Option<u64>,
}

impl Bindings {
    pub fn weight(&self, name: &str) -> Option<Var> {
        self.weights.get(name).copied()
    }

    /// `(A, B)` of the adapter routed through `target`, if any.
    pub fn lora_factors(&self, target: &str) -> Option<(Var, Var)> {
        self.lora.get(target).map(|l| (l.a, l.b))
    }

    pub fn weight_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn lora_vars(&self) -> impl Iterator<Item = (&str, Var, Var)> {
        self.lora.iter().map(|(k, l)| (k.as_str(), l.a, l.b))
    }

    /// Swaps the variable bound to a base weight (used by gradient checks).
    pub fn replace_weight(&mut self, name: &str, v: Var) -> bool {
        self.weights.get_mut(name).map(|slot| *slot = v).is_some()
    }

    pub fn replace_lora(&mut self, target: &str, a: Option<Var>, b: Option<Var>) -> bool {
        match self.lora.get_mut(target) {
            Some(l) => {
                l.a = a.unwrap_or(l.a);
                l.b = b.unwrap_or(l.b);
                true
            }
            None => false,
        }
    }

    /// Enables adapter-input dropout; masks derive from `seed` and the
    /// module's position in the bundle.
    pub fn set_dropout_seed(&mut self, seed: Option<u64>) {
        self.dropout_seed = seed;
    }
}

/// Padded source/target batch with decoder inputs shifted right by one.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src_ids: Vec<usize>,
    pub src_lens: Vec<usize>,
    pub dec_in: Vec<usize>,
    /// Next-token targets, [`PAD`] at padding positions.
    pub targets: Vec<usize>,
    pub tgt_lens: Vec<usize>,
}

impl EncodedBatch {
    pub fn new(pairs: &[(&[u32], &[u32])], max_len: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(ModelError::EmptySequence("batch"));
        }
        for (src, tgt) in pairs {
            if src.is_empty() {
                return Err(ModelError::EmptySequence("source"));
            }
            if tgt.is_empty() {
                return Err(ModelError::EmptySequence("target"));
            }
            for len in [src.len(), tgt.len()] {
                if len > max_len {
                    return Err(ModelError::SequenceTooLong { len, max: max_len });
                }
            }
        }
        let src_len = pairs.iter().map(|p| p.0.len()).max().unwrap_or(0);
        let tgt_len = pairs.iter().map(|p| p.1.len()).max().unwrap_or(0);
        let pad = PAD as usize;
        let batch = pairs.len();
        let mut src_ids = vec![pad; batch * src_len];
        let mut dec_in = vec![pad; batch * tgt_len];
        let mut targets = vec![pad; batch * tgt_len];
        for (b, (src, tgt)) in pairs.iter().enumerate() {
            for (t, &id) in src.iter().enumerate() {
                src_ids[b * src_len + t] = id as usize;
            }
            for (t, &id) in tgt.iter().enumerate() {
                targets[b * tgt_len + t] = id as usize;
                if t + 1 < tgt.len() {
                    dec_in[b * tgt_len + t + 1] = id as usize;
                }
            }
        }
        Ok(Self {
            batch,
            src_len,
            tgt_len,
            src_ids,
            src_lens: pairs.iter().map(|p| p.0.len()).collect(),
            dec_in,
            targets,
            tgt_lens: pairs.iter().map(|p| p.1.len()).collect(),
        })
    }
}

/// Pre-norm encoder–decoder transformer over the byte vocabulary.
///
/// Any number of adapter bundles may be stored; at most one is active and
/// routes its target weights through the low-rank path.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    weights: NamedWeights,
    adapters: BTreeMap<String, AdapterBundle>,
    active: Option<String>,
}

impl Seq2SeqModel {
    /// Seeded initialisation: norm gains 1, embeddings `U(±1)`, position
    /// tables `U(±0.5)`, linear weights `U(±1/√fan_in)`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut weights = NamedWeights::new();
        for (i, (name, shape)) in config.weight_shapes(VOCAB_SIZE).into_iter().enumerate() {
            let seed = derive_seed(config.seed, &[i as u64]);
            let t = if shape.len() == 1 {
                Tensor::filled(&shape, 1.0)
            } else if name == "embed" {
                Tensor::uniform_seeded(&shape, 1.0, seed)
            } else if name.ends_with(".pos") {
                Tensor::uniform_seeded(&shape, 0.5, seed)
            } else {
                Tensor::uniform_seeded(&shape, 1.0 / (shape[1] as f64).sqrt(), seed)
            };
            weights.insert(&name, t);
        }
        Ok(Self {
            config,
            weights,
            adapters: BTreeMap::new(),
            active: None,
        })
    }

    /// Rebuilds a model from explicit weights, checking the full name/shape
    /// set against `config`.
    pub fn from_weights(config: ModelConfig, weights: NamedWeights) -> Result<Self> {
        config.validate()?;
        let expected = config.weight_shapes(VOCAB_SIZE);
        if expected.len() != weights.len() {
            return Err(ModelError::Config(format!(
                "expected {} weights, found {}",
                expected.len(),
                weights.len()
            )));
        }
        for (name, shape) in &expected {
            let t = weights.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "weight {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            weights,
            adapters: BTreeMap::new(),
            active: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &NamedWeights {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut NamedWeights {
        &mut self.weights
    }

    /// Overwrites one base weight (same shape required).
    pub fn set_weight(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self.weights.get_mut(name)?;
        if slot.shape() != t.shape() {
            return Err(ModelError::Config(format!(
                "weight {name} has shape {:?}, got {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    pub fn base_param_count(&self) -> usize {
        self.weights.total_params()
    }

    /// Checksum of the base weights only.
    pub fn checksum(&self) -> String {
        self.weights.checksum()
    }

    /// `[k, d]` shapes of the named weights, for building adapter bundles.
    pub fn target_shapes(&self, targets: &[String]) -> Result<Vec<(String, [usize; 2])>> {
        targets
            .iter()
            .map(|t| {
                let w = self
                    .weights
                    .get(t)
                    .map_err(|_| LoraError::UnknownTarget(t.clone()))?;
                let (k, d) = w.dims2("lora target")?;
                Ok((t.clone(), [k, d]))
            })
            .collect()
    }

    /// Fresh bundle (`B = 0`) over `targets`, or the default query/value
    /// projections when `targets` is empty.
    pub fn new_adapter(
        &self,
        name: &str,
        targets: &[String],
        r: usize,
        alpha: f64,
        dropout_p: f64,
        seed: u64,
    ) -> Result<AdapterBundle> {
        let defaults;
        let targets = if targets.is_empty() {
            defaults = self.config.default_lora_targets();
            &defaults
        } else {
            targets
        };
        let shapes = self.target_shapes(targets)?;
        Ok(AdapterBundle::for_targets(name, &shapes, r, alpha, dropout_p, seed)?)
    }

    fn check_bundle(&self, bundle: &AdapterBundle) -> Result<()> {
        for (target, m) in &bundle.modules {
            let w = self
                .weights
                .get(target)
                .map_err(|_| LoraError::UnknownTarget(target.clone()))?;
            m.check_weight(w)?;
        }
        Ok(())
    }

    /// Stores `bundle` and makes it the active adapter.
    pub fn attach(&mut self, bundle: AdapterBundle) -> Result<()> {
        if let Some(active) = &self.active {
            if *active != bundle.name {
                return Err(LoraError::AlreadyActive(active.clone()).into());
            }
        }
        self.check_bundle(&bundle)?;
        self.active = Some(bundle.name.clone());
        self.adapters.insert(bundle.name.clone(), bundle);
        Ok(())
    }

    /// Deactivates the named bundle; it stays stored on the model.
    pub fn detach(&mut self, name: &str) -> Result<()> {
        if self.active.as_deref() != Some(name) {
            return Err(LoraError::NotAttached(name.to_string()).into());
        }
        self.active = None;
        Ok(())
    }

    /// Detach-then-attach. The new bundle is validated first so a failed
    /// swap leaves the current routing untouched.
    pub fn swap(&mut self, bundle: AdapterBundle) -> Result<()> {
        self.check_bundle(&bundle)?;
        self.active = None;
        self.attach(bundle)
    }

    /// Reactivates a stored bundle by name.
    pub fn activate(&mut self, name: &str) -> Result<()> {
        let bundle = self
            .adapters
            .get(name)
            .cloned()
            .ok_or_else(|| LoraError::NotAttached(name.to_string()))?;
        self.swap(bundle)
    }

    pub fn active_adapter(&self) -> Option<&AdapterBundle> {
        self.active.as_ref().and_then(|n| self.adapters.get(n))
    }

    pub(crate) fn active_adapter_mut(&mut self) -> Option<&mut AdapterBundle> {
        let name = self.active.clone()?;
        self.adapters.get_mut(&name)
    }

    pub fn stored_adapters(&self) -> impl Iterator<Item = &AdapterBundle> {
        self.adapters.values()
    }

    /// The weight a forward pass effectively uses: merged with the active
    /// adapter when one targets `name`.
    pub fn effective_weight(&self, name: &str) -> Result<Cow<'_, Tensor>> {
        let w = self.weights.get(name)?;
        match self.active_adapter().and_then(|b| b.modules.get(name)) {
            Some(m) => Ok(Cow::Owned(merge(w, m)?)),
            None => Ok(Cow::Borrowed(w)),
        }
    }

    /// A standalone model whose weights have the active adapter folded in.
    pub fn merged(&self) -> Result<Seq2SeqModel> {
        let mut weights = self.weights.clone();
        if let Some(bundle) = self.active_adapter() {
            for (target, m) in &bundle.modules {
                let w = weights.get_mut(target)?;
                *w = merge(w, m)?;
            }
        }
        Seq2SeqModel::from_weights(self.config.clone(), weights)
    }

    /// Places every weight (and the active adapter's factors) on `tape`.
    pub fn bind(&self, tape: &mut Tape, mode: GradMode) -> Result<Bindings> {
        let bundle = self.active_adapter();
        match (mode, bundle) {
            (GradMode::Adapter, None) => return Err(LoraError::NotAttached("<none>".into()).into()),
            (GradMode::Base, Some(b)) => return Err(LoraError::AlreadyActive(b.name.clone()).into()),
            _ => {}
        }
        let weights = self
            .weights
            .iter()
            .map(|(name, t)| (name.to_string(), tape.leaf(t.clone(), mode == GradMode::Base)))
            .collect();
        let mut lora = BTreeMap::new();
        if let Some(bundle) = bundle {
            let train = mode == GradMode::Adapter;
            for (i, (target, m)) in bundle.modules.iter().enumerate() {
                let vars = LoraVars {
                    a: tape.leaf(m.a().clone(), train && m.trainable),
                    b: tape.leaf(m.b().clone(), train && m.trainable),
                    scale: m.scale(),
                    dropout_p: m.dropout_p(),
                    index: i as u64,
                };
                lora.insert(target.clone(), vars);
            }
        }
        Ok(Bindings {
            weights,
            lora,
            dropout_seed: None,
        })
    }

    fn w(binds: &Bindings, name: &str) -> Result<Var> {
        binds
            .weight(name)
            .ok_or_else(|| ModelError::UnknownWeight(name.to_string()))
    }

    fn linear(&self, tape: &mut Tape, binds: &Bindings, name: &str, x: Var) -> Result<Var> {
        let w = Self::w(binds, name)?;
        Ok(match binds.lora.get(name) {
            Some(l) => {
                let mask = match binds.dropout_seed {
                    Some(seed) if l.dropout_p > 0.0 => Some(dropout_mask(
                        tape.value(x).numel(),
                        l.dropout_p,
                        derive_seed(seed, &[l.index]),
                    )),
                    _ => None,
                };
                lora_linear(tape, x, w, l.a, l.b, l.scale, mask)?
            }
            None => tape.matmul_bt(x, w)?,
        })
    }

    fn norm(tape: &mut Tape, binds: &Bindings, name: &str, x: Var) -> Result<Var> {
        let g = Self::w(binds, name)?;
        Ok(tape.rms_norm(x, g, RMS_EPS)?)
    }

    fn embed(tape: &mut Tape, binds: &Bindings, ids: &[usize], pos_table: &str, len: usize) -> Result<Var> {
        let tok = tape.gather(Self::w(binds, "embed")?, ids)?;
        let positions: Vec<usize> = (0..ids.len()).map(|i| i % len).collect();
        let pos = tape.gather(Self::w(binds, pos_table)?, &positions)?;
        Ok(tape.add(tok, pos)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_block(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        prefix: &str,
        x_q: Var,
        x_kv: Var,
        shape: AttentionShape,
    ) -> Result<Var> {
        let q = self.linear(tape, binds, &format!("{prefix}.q"), x_q)?;
        let k = self.linear(tape, binds, &format!("{prefix}.k"), x_kv)?;
        let v = self.linear(tape, binds, &format!("{prefix}.v"), x_kv)?;
        let a = tape.attention(q, k, v, shape)?;
        self.linear(tape, binds, &format!("{prefix}.o"), a)
    }

    fn feed_forward(&self, tape: &mut Tape, binds: &Bindings, prefix: &str, x: Var) -> Result<Var> {
        let h = self.linear(tape, binds, &format!("{prefix}.wi"), x)?;
        let h = tape.gelu(h);
        self.linear(tape, binds, &format!("{prefix}.wo"), h)
    }

    /// Encoder output rows `[batch·src_len, d_model]`.
    pub fn encode_graph(&self, tape: &mut Tape, binds: &Bindings, batch: &EncodedBatch) -> Result<Var> {
        let cfg = &self.config;
        let mut x = Self::embed(tape, binds, &batch.src_ids, "enc.pos", batch.src_len)?;
        let shape = AttentionShape {
            batch: batch.batch,
            q_len: batch.src_len,
            k_len: batch.src_len,
            heads: cfg.n_heads,
            causal: false,
            key_lens: batch.src_lens.clone(),
        };
        for i in 0..cfg.n_encoder_layers {
            let h = Self::norm(tape, binds, &format!("enc.{i}.ln1"), x)?;
            let a = self.attention_block(tape, binds, &format!("enc.{i}.attn"), h, h, shape.clone())?;
            x = tape.add(x, a)?;
            let h = Self::norm(tape, binds, &format!("enc.{i}.ln2"), x)?;
            let f = self.feed_forward(tape, binds, &format!("enc.{i}.ff"), h)?;
            x = tape.add(x, f)?;
        }
        Self::norm(tape, binds, "enc.final_ln", x)
    }

    /// Teacher-forced logits `[batch·tgt_len, vocab]`.
    pub fn forward_logits(&self, tape: &mut Tape, binds: &Bindings, batch: &EncodedBatch) -> Result<Var> {
        let cfg = &self.config;
        let mem = self.encode_graph(tape, binds, batch)?;
        let mut y = Self::embed(tape, binds, &batch.dec_in, "dec.pos", batch.tgt_len)?;
        let self_shape = AttentionShape {
            batch: batch.batch,
            q_len: batch.tgt_len,
            k_len: batch.tgt_len,
            heads: cfg.n_heads,
            causal: true,
            key_lens: batch.tgt_lens.clone(),
        };
        let cross_shape = AttentionShape {
            batch: batch.batch,
            q_len: batch.tgt_len,
            k_len: batch.src_len,
            heads: cfg.n_heads,
            causal: false,
            key_lens: batch.src_lens.clone(),
        };
        for i in 0..cfg.n_decoder_layers {
            let h = Self::norm(tape, binds, &format!("dec.{i}.ln1"), y)?;
            let a = self.attention_block(tape, binds, &format!("dec.{i}.self"), h, h, self_shape.clone())?;
            y = tape.add(y, a)?;
            let h = Self::norm(tape, binds, &format!("dec.{i}.ln2"), y)?;
            let c = self.attention_block(tape, binds, &format!("dec.{i}.cross"), h, mem, cross_shape.clone())?;
            y = tape.add(y, c)?;
            let h = Self::norm(tape, binds, &format!("dec.{i}.ln3"), y)?;
            let f = self.feed_forward(tape, binds, &format!("dec.{i}.ff"), h)?;
            y = tape.add(y, f)?;
        }
        let h = Self::norm(tape, binds, "dec.final_ln", y)?;
        self.linear(tape, binds, "lm_head", h)
    }

    /// Mean token cross-entropy, padding excluded.
    pub fn loss(&self, tape: &mut Tape, binds: &Bindings, batch: &EncodedBatch) -> Result<Var> {
        let logits = self.forward_logits(tape, binds, batch)?;
        Ok(tape.cross_entropy(logits, &batch.targets, Some(PAD as usize))?)
    }

    pub fn encode_pairs(&self, pairs: &[(&[u32], &[u32])]) -> Result<EncodedBatch> {
        EncodedBatch::new(pairs, self.config.max_sequence_length)
    }

    /// Logits `[|tgt|, vocab]`; row `t` scores `tgt[t]` given `src` and
    /// `tgt[..t]`. Uses the active adapter in evaluation mode.
    pub fn forward_teacher_forced(&self, src: &[u32], tgt: &[u32]) -> Result<Tensor> {
        let batch = self.encode_pairs(&[(src, tgt)])?;
        let mut tape = Tape::new();
        let binds = self.bind(&mut tape, GradMode::None)?;
        let logits = self.forward_logits(&mut tape, &binds, &batch)?;
        Ok(tape.value(logits).clone())
    }
}
