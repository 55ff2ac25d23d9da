use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape of the encoder–decoder transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ff: usize,
    pub max_sequence_length: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale default: 64-wide, 4 heads, 2 + 2 layers.
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_ff: 256,
            max_sequence_length: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("d_ff", self.d_ff),
            ("max_sequence_length", self.max_sequence_length),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Every weight of the model with its shape, in a fixed order.
    ///
    /// Linear weights are stored `out × in`.
    pub fn weight_shapes(&self, vocab: usize) -> Vec<(String, Vec<usize>)> {
        let (d, f, l) = (self.d_model, self.d_ff, self.max_sequence_length);
        let mut out = vec![
            ("embed".to_string(), vec![vocab, d]),
            ("enc.pos".to_string(), vec![l, d]),
            ("dec.pos".to_string(), vec![l, d]),
        ];
        let attn = |prefix: String, out: &mut Vec<(String, Vec<usize>)>| {
            for p in ["q", "k", "v", "o"] {
                out.push((format!("{prefix}.{p}"), vec![d, d]));
            }
        };
        for i in 0..self.n_encoder_layers {
            out.push((format!("enc.{i}.ln1"), vec![d]));
            attn(format!("enc.{i}.attn"), &mut out);
            out.push((format!("enc.{i}.ln2"), vec![d]));
            out.push((format!("enc.{i}.ff.wi"), vec![f, d]));
            out.push((format!("enc.{i}.ff.wo"), vec![d, f]));
        }
        out.push(("enc.final_ln".to_string(), vec![d]));
        for i in 0..self.n_decoder_layers {
            out.push((format!("dec.{i}.ln1"), vec![d]));
            attn(format!("dec.{i}.self"), &mut out);
            out.push((format!("dec.{i}.ln2"), vec![d]));
            attn(format!("dec.{i}.cross"), &mut out);
            out.push((format!("dec.{i}.ln3"), vec![d]));
            out.push((format!("dec.{i}.ff.wi"), vec![f, d]));
            out.push((format!("dec.{i}.ff.wo"), vec![d, f]));
        }
        out.push(("dec.final_ln".to_string(), vec![d]));
        out.push(("lm_head".to_string(), vec![vocab, d]));
        out
    }

    /// Query and value projections of every attention block.
    pub fn default_lora_targets(&self) -> Vec<String> {
        let mut t = Vec::new();
        for i in 0..self.n_encoder_layers {
            t.push(format!("enc.{i}.attn.q"));
            t.push(format!("enc.{i}.attn.v"));
        }
        for i in 0..self.n_decoder_layers {
            for block in ["self", "cross"] {
                t.push(format!("dec.{i}.{block}.q"));
                t.push(format!("dec.{i}.{block}.v"));
            }
        }
        t
    }
}
