use std::borrow::Cow;
use std::sync::Arc;

use crate::tensor::kernels::{attention_forward, gelu, gemm, rms_norm};
use crate::tensor::{AttentionShape, Tensor};

use super::beam::StepDecoder;
use super::transformer::RMS_EPS;
use super::vocab::{PAD, VOCAB_SIZE};
use super::{ModelError, Result, Seq2SeqModel};

struct Attn<'a> {
    q: Cow<'a, Tensor>,
    k: Cow<'a, Tensor>,
    v: Cow<'a, Tensor>,
    o: Cow<'a, Tensor>,
}

struct Ffn<'a> {
    wi: Cow<'a, Tensor>,
    wo: Cow<'a, Tensor>,
}

struct EncLayer<'a> {
    ln1: &'a Tensor,
    attn: Attn<'a>,
    ln2: &'a Tensor,
    ff: Ffn<'a>,
}

struct DecLayer<'a> {
    ln1: &'a Tensor,
    slf: Attn<'a>,
    ln2: &'a Tensor,
    cross: Attn<'a>,
    ln3: &'a Tensor,
    ff: Ffn<'a>,
}

/// Untracked forward pass with per-layer key/value caches.
///
/// Built from a [`Seq2SeqModel`]; an active adapter is folded into its
/// target weights once, up front.
pub struct InferenceModel<'a> {
    d: usize,
    heads: usize,
    max_len: usize,
    embed: &'a Tensor,
    enc_pos: &'a Tensor,
    dec_pos: &'a Tensor,
    enc: Vec<EncLayer<'a>>,
    enc_ln: &'a Tensor,
    dec: Vec<DecLayer<'a>>,
    dec_ln: &'a Tensor,
    lm_head: Cow<'a, Tensor>,
}

/// Decoder position plus cached keys/values; the encoder-side cache is
/// shared between beams.
#[derive(Debug, Clone)]
pub struct DecoderState {
    cross: Arc<Vec<(Vec<f64>, Vec<f64>)>>,
    src_len: usize,
    self_kv: Vec<(Vec<f64>, Vec<f64>)>,
    pos: usize,
}

/// `x·Wᵀ` for `rows` rows of `x`.
fn linear(x: &[f64], rows: usize, w: &Tensor) -> Vec<f64> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; rows * out];
    gemm(rows, inp, out, x, false, w.data(), true, &mut y, false);
    y
}

fn add_in_place(x: &mut [f64], y: &[f64]) {
    x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
}

impl Seq2SeqModel {
    pub fn inference(&self) -> Result<InferenceModel<'_>> {
        let w = |n: &str| self.weights().get(n);
        let e = |n: String| self.effective_weight(&n);
        let attn = |p: &str| -> Result<Attn<'_>> {
            Ok(Attn {
                q: e(format!("{p}.q"))?,
                k: e(format!("{p}.k"))?,
                v: e(format!("{p}.v"))?,
                o: e(format!("{p}.o"))?,
            })
        };
        let ffn = |p: &str| -> Result<Ffn<'_>> {
            Ok(Ffn {
                wi: e(format!("{p}.wi"))?,
                wo: e(format!("{p}.wo"))?,
            })
        };
        let cfg = self.config();
        let enc = (0..cfg.n_encoder_layers)
            .map(|i| {
                Ok(EncLayer {
                    ln1: w(&format!("enc.{i}.ln1"))?,
                    attn: attn(&format!("enc.{i}.attn"))?,
                    ln2: w(&format!("enc.{i}.ln2"))?,
                    ff: ffn(&format!("enc.{i}.ff"))?,
                })
            })
            .collect::<Result<_>>()?;
        let dec = (0..cfg.n_decoder_layers)
            .map(|i| {
                Ok(DecLayer {
                    ln1: w(&format!("dec.{i}.ln1"))?,
                    slf: attn(&format!("dec.{i}.self"))?,
                    ln2: w(&format!("dec.{i}.ln2"))?,
                    cross: attn(&format!("dec.{i}.cross"))?,
                    ln3: w(&format!("dec.{i}.ln3"))?,
                    ff: ffn(&format!("dec.{i}.ff"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(InferenceModel {
            d: cfg.d_model,
            heads: cfg.n_heads,
            max_len: cfg.max_sequence_length,
            embed: w("embed")?,
            enc_pos: w("enc.pos")?,
            dec_pos: w("dec.pos")?,
            enc,
            enc_ln: w("enc.final_ln")?,
            dec,
            dec_ln: w("dec.final_ln")?,
            lm_head: e("lm_head".to_string())?,
        })
    }
}

impl InferenceModel<'_> {
    fn embed_row(&self, id: u32, pos: usize, table: &Tensor) -> Result<Vec<f64>> {
        let id = id as usize;
        if id >= VOCAB_SIZE {
            return Err(crate::tensor::TensorError::IndexOutOfRange {
                index: id,
                rows: VOCAB_SIZE,
            }
            .into());
        }
        let d = self.d;
        let tok = &self.embed.data()[id * d..(id + 1) * d];
        let p = &table.data()[pos * d..(pos + 1) * d];
        Ok(tok.iter().zip(p).map(|(a, b)| a + b).collect())
    }

    fn ffn(&self, f: &Ffn<'_>, h: &[f64], rows: usize) -> Vec<f64> {
        let mut mid = linear(h, rows, &f.wi);
        mid.iter_mut().for_each(|v| *v = gelu(*v));
        linear(&mid, rows, &f.wo)
    }

    fn attend(&self, q: &[f64], k: &[f64], v: &[f64], q_len: usize, k_len: usize) -> Vec<f64> {
        let shape = AttentionShape {
            batch: 1,
            q_len,
            k_len,
            heads: self.heads,
            causal: false,
            key_lens: vec![k_len],
        };
        attention_forward(q, k, v, self.d, &shape).0
    }

    /// Encoder output rows `[len, d_model]`.
    pub fn encode(&self, src: &[u32]) -> Result<Vec<f64>> {
        if src.is_empty() {
            return Err(ModelError::EmptySequence("source"));
        }
        if src.len() > self.max_len {
            return Err(ModelError::SequenceTooLong {
                len: src.len(),
                max: self.max_len,
            });
        }
        let n = src.len();
        let mut x = Vec::with_capacity(n * self.d);
        for (t, &id) in src.iter().enumerate() {
            x.extend(self.embed_row(id, t, self.enc_pos)?);
        }
        for l in &self.enc {
            let (h, _) = rms_norm(&x, self.d, l.ln1.data(), RMS_EPS);
            let q = linear(&h, n, &l.attn.q);
            let k = linear(&h, n, &l.attn.k);
            let v = linear(&h, n, &l.attn.v);
            let a = self.attend(&q, &k, &v, n, n);
            add_in_place(&mut x, &linear(&a, n, &l.attn.o));
            let (h, _) = rms_norm(&x, self.d, l.ln2.data(), RMS_EPS);
            add_in_place(&mut x, &self.ffn(&l.ff, &h, n));
        }
        Ok(rms_norm(&x, self.d, self.enc_ln.data(), RMS_EPS).0)
    }

    fn decode_token(&self, state: &mut DecoderState, token: u32) -> Result<Vec<f64>> {
        if state.pos >= self.max_len {
            return Err(ModelError::SequenceTooLong {
                len: state.pos + 1,
                max: self.max_len,
            });
        }
        let mut x = self.embed_row(token, state.pos, self.dec_pos)?;
        let n = state.pos + 1;
        for (i, l) in self.dec.iter().enumerate() {
            let (h, _) = rms_norm(&x, self.d, l.ln1.data(), RMS_EPS);
            let q = linear(&h, 1, &l.slf.q);
            let (kc, vc) = &mut state.self_kv[i];
            kc.extend(linear(&h, 1, &l.slf.k));
            vc.extend(linear(&h, 1, &l.slf.v));
            let a = self.attend(&q, kc, vc, 1, n);
            add_in_place(&mut x, &linear(&a, 1, &l.slf.o));
            let (h, _) = rms_norm(&x, self.d, l.ln2.data(), RMS_EPS);
            let q = linear(&h, 1, &l.cross.q);
            let (ck, cv) = &state.cross[i];
            let a = self.attend(&q, ck, cv, 1, state.src_len);
            add_in_place(&mut x, &linear(&a, 1, &l.cross.o));
            let (h, _) = rms_norm(&x, self.d, l.ln3.data(), RMS_EPS);
            add_in_place(&mut x, &self.ffn(&l.ff, &h, 1));
        }
        state.pos += 1;
        let (h, _) = rms_norm(&x, self.d, self.dec_ln.data(), RMS_EPS);
        Ok(linear(&h, 1, &self.lm_head))
    }
}

impl StepDecoder for InferenceModel<'_> {
    type State = DecoderState;

    fn start(&self, src: &[u32]) -> Result<(DecoderState, Vec<f64>)> {
        let mem = self.encode(src)?;
        let n = src.len();
        let cross = self
            .dec
            .iter()
            .map(|l| (linear(&mem, n, &l.cross.k), linear(&mem, n, &l.cross.v)))
            .collect();
        let mut state = DecoderState {
            cross: Arc::new(cross),
            src_len: n,
            self_kv: vec![(Vec::new(), Vec::new()); self.dec.len()],
            pos: 0,
        };
        let logits = self.decode_token(&mut state, PAD)?;
        Ok((state, logits))
    }

    fn step(&self, state: &mut DecoderState, token: u32) -> Result<Vec<f64>> {
        self.decode_token(state, token)
    }

    fn max_output_len(&self) -> usize {
        self.max_len
    }
}
