//! Untracked numeric kernels shared by the autodiff tape and the
//! cache-based inference path.

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `a_t` set, `a` is stored as `k×m`; with `b_t` set, `b` is stored as
/// `n×k`. When `accumulate` is false the output is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise RMS normalisation with a learned per-column gain. Returns the
/// reciprocal RMS of every row alongside the output.
pub fn rms_norm(x: &[f64], cols: usize, gain: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut out = vec![0.0; x.len()];
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
        let s = 1.0 / (ms + eps).sqrt();
        inv.push(s);
        for (o, (v, g)) in out[r * cols..(r + 1) * cols].iter_mut().zip(row.iter().zip(gain)) {
            *o = v * s * g;
        }
    }
    (out, inv)
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log(sum(exp(row)))` computed with max subtraction.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|v| v - lse).collect()
}

/// Layout of a batched multi-head attention call.
///
/// Queries are `batch·q_len` rows and keys/values `batch·k_len` rows, all of
/// width `d_model`; head `h` owns columns `h·dh .. (h+1)·dh`. Key `j` is
/// visible to query `t` of batch element `b` iff `j < key_lens[b]` and, when
/// causal, `j <= t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionShape {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub causal: bool,
    pub key_lens: Vec<usize>,
}

impl AttentionShape {
    pub(crate) fn visible(&self, b: usize, t: usize) -> usize {
        let mut n = self.key_lens[b].min(self.k_len);
        if self.causal {
            n = n.min(t + 1);
        }
        n
    }
}

/// Scaled dot-product attention. Returns the output rows and the attention
/// probabilities laid out as `[batch][head][q][k]` (zero where masked).
pub fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d_model: usize,
    shape: &AttentionShape,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d_model / shape.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; shape.batch * shape.q_len * d_model];
    let mut probs = vec![0.0; shape.batch * shape.heads * shape.q_len * shape.k_len];
    let mut scores = vec![0.0; shape.k_len];
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let c0 = h * dh;
            for t in 0..shape.q_len {
                let visible = shape.visible(b, t);
                if visible == 0 {
                    continue;
                }
                let qrow = &q[(b * shape.q_len + t) * d_model + c0..][..dh];
                for (j, s) in scores[..visible].iter_mut().enumerate() {
                    let krow = &k[(b * shape.k_len + j) * d_model + c0..][..dh];
                    *s = scale * qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(&mut scores[..visible]);
                let p_off = ((b * shape.heads + h) * shape.q_len + t) * shape.k_len;
                probs[p_off..p_off + visible].copy_from_slice(&scores[..visible]);
                let orow = &mut out[(b * shape.q_len + t) * d_model + c0..][..dh];
                for (j, &p) in scores[..visible].iter().enumerate() {
                    let vrow = &v[(b * shape.k_len + j) * d_model + c0..][..dh];
                    for (o, x) in orow.iter_mut().zip(vrow) {
                        *o += p * x;
                    }
                }
            }
        }
    }
    (out, probs)
}
