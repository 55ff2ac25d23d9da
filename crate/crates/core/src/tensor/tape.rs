use super::kernels::{self, AttentionShape};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MaskMul(Var, Vec<f64>),
    Sum(Var),
    Gelu(Var),
    Softmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so every operation's inputs precede
/// it. [`Tape::backward`] walks the tape once in reverse and accumulates
/// gradients into the leaves that require them; calling it twice without
/// [`Tape::zero_grads`] adds the gradients twice.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`; the layout of a linear layer whose
    /// weight maps `k` inputs to `n` outputs.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul_bt")?;
        let (n, k2) = bv.dims2("matmul_bt")?;
        if k != k2 {
            return Err(mismatch("matmul_bt", av, bv));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, av.data(), false, bv.data(), true, &mut out, false);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulBT(a, b), &[a, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).scale(factor);
        self.push(t, Op::Scale(a, factor), &[a])
    }

    /// Multiplies by a constant mask of the same length (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if mask.len() != av.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "mask_mul",
                left: av.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MaskMul(a, mask), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| kernels::gelu(x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Gelu(a), &[a])
    }

    /// Row-wise softmax over the last dimension of a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (_, cols) = av.dims2("softmax")?;
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(cols) {
            kernels::softmax_in_place(row);
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Softmax(a), &[a]))
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = tv.dims2("gather")?;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, rows });
            }
            data.extend_from_slice(&tv.data()[id * cols..(id + 1) * cols]);
        }
        let t = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gain));
        let (_, cols) = xv.dims2("rms_norm")?;
        if gv.numel() != cols {
            return Err(mismatch("rms_norm", xv, gv));
        }
        let (out, inv_rms) = kernels::rms_norm(xv.data(), cols, gv.data(), eps);
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }, &[x, gain]))
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (qr, d) = qv.dims2("attention")?;
        let (kr, dk) = kv.dims2("attention")?;
        if kv.shape() != vv.shape() || dk != d {
            return Err(mismatch("attention", kv, vv));
        }
        if d % shape.heads != 0
            || qr != shape.batch * shape.q_len
            || kr != shape.batch * shape.k_len
            || shape.key_lens.len() != shape.batch
        {
            return Err(TensorError::Contract(format!(
                "attention layout {shape:?} does not fit q {qr}x{d}, k {kr}x{dk}"
            )));
        }
        let (out, probs) = kernels::attention_forward(qv.data(), kv.data(), vv.data(), d, &shape);
        let t = Tensor::new(vec![qr, d], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Rows whose target equals `ignore_index` contribute nothing;
    /// if every row is ignored the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: Option<usize>) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, vocab) = lv.dims2("cross_entropy")?;
        if rows != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut kept = Vec::with_capacity(rows);
        for (row, &t) in targets.iter().enumerate() {
            if Some(t) == ignore_index {
                kept.push(None);
            } else if t >= vocab {
                return Err(TensorError::TargetOutOfRange { row, target: t, vocab });
            } else {
                kept.push(Some(t));
            }
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (row, t) in probs.chunks_mut(vocab).zip(&kept) {
            let lse = kernels::log_sum_exp(row);
            if let Some(t) = t {
                total += lse - row[*t];
                count += 1;
            }
            for p in row.iter_mut() {
                *p = (*p - lse).exp();
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: kept,
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite(format!("gradient {bad} at node {id}")));
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, contrib: Vec<f64>| match &mut adj[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, bv.data(), true, &mut da, false);
                    send(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av.data(), true, g, false, &mut db, false);
                    send(*b, db);
                }
            }
            Op::MatMulBT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[0];
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, bv.data(), false, &mut da, false);
                    send(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; n * k];
                    kernels::gemm(n, m, k, g, true, av.data(), false, &mut db, false);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    send(*a, g.to_vec());
                }
                if self.wants(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    send(*a, g.iter().zip(bv.data()).map(|(g, y)| g * y).collect());
                }
                if self.wants(*b) {
                    send(*b, g.iter().zip(av.data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|v| v * f).collect()),
            Op::MaskMul(a, mask) => send(*a, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                send(*a, g.iter().zip(x).map(|(g, &x)| g * kernels::gelu_grad(x)).collect());
            }
            Op::Softmax(a) => {
                let y = self.nodes[id].value.data();
                let cols = self.nodes[id].value.shape()[1];
                let mut dx = vec![0.0; y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, y), g) in dxr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (g - dot);
                    }
                }
                send(*a, dx);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let cols = tv.shape()[1];
                let mut dt = vec![0.0; tv.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for (d, s) in dt[id * cols..(id + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                        *d += s;
                    }
                }
                send(*table, dt);
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let cols = gv.numel();
                let (xd, gd) = (xv.data(), gv.data());
                if self.wants(*x) {
                    let mut dx = vec![0.0; xd.len()];
                    for (r, &s) in inv_rms.iter().enumerate() {
                        let xr = &xd[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = xr.iter().zip(gr).zip(gd).map(|((x, g), w)| x * g * w).sum();
                        let c = s * s * s * dot / cols as f64;
                        for (j, d) in dx[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                            *d = gd[j] * gr[j] * s - xr[j] * c;
                        }
                    }
                    send(*x, dx);
                }
                if self.wants(*gain) {
                    let mut dg = vec![0.0; cols];
                    for (r, &s) in inv_rms.iter().enumerate() {
                        for j in 0..cols {
                            dg[j] += g[r * cols + j] * xd[r * cols + j] * s;
                        }
                    }
                    send(*gain, dg);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => {
                let (dq, dk, dv) = attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    g,
                    probs,
                    shape,
                );
                if self.wants(*q) {
                    send(*q, dq);
                }
                if self.wants(*k) {
                    send(*k, dk);
                }
                if self.wants(*v) {
                    send(*v, dv);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let vocab = self.value(*logits).shape()[1];
                let mut dl = vec![0.0; probs.len()];
                if *count > 0 {
                    let s = g[0] / *count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let row = &mut dl[r * vocab..(r + 1) * vocab];
                        for (d, p) in row.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                            *d = s * p;
                        }
                        row[*t] -= s;
                    }
                }
                send(*logits, dl);
            }
        }
    }
}

fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: &[f64],
    probs: &[f64],
    shape: &AttentionShape,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = q.len() / (shape.batch * shape.q_len);
    let dh = d / shape.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; shape.k_len];
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let c0 = h * dh;
            for t in 0..shape.q_len {
                let visible = shape.visible(b, t);
                let p_off = ((b * shape.heads + h) * shape.q_len + t) * shape.k_len;
                let p = &probs[p_off..p_off + visible];
                let qi = (b * shape.q_len + t) * d + c0;
                let grow = &g[qi..qi + dh];
                for (j, dpj) in dp[..visible].iter_mut().enumerate() {
                    let vi = (b * shape.k_len + j) * d + c0;
                    *dpj = grow.iter().zip(&v[vi..vi + dh]).map(|(a, b)| a * b).sum();
                    for (dvx, gx) in dv[vi..vi + dh].iter_mut().zip(grow) {
                        *dvx += p[j] * gx;
                    }
                }
                let dot: f64 = p.iter().zip(&dp[..visible]).map(|(a, b)| a * b).sum();
                for j in 0..visible {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let ki = (b * shape.k_len + j) * d + c0;
                    for x in 0..dh {
                        dq[qi + x] += ds * k[ki + x];
                        dk[ki + x] += ds * q[qi + x];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(&[&[1.0, 2.0], &[3.0, 4.0]]), false);
        let i = tape.leaf(Tensor::identity(2), false);
        let z = tape.leaf(Tensor::zeros(&[2, 2]), false);
        let ai = tape.matmul(a, i).unwrap();
        let az = tape.matmul(a, z).unwrap();
        assert_eq!(tape.value(ai).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tape.value(az).data(), &[0.0; 4]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), false);
        let b = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(), false);
        let z = tape.leaf(Tensor::zeros(&[2]), false);
        let s = tape.add(a, b).unwrap();
        let m = tape.mul(a, z).unwrap();
        let c = tape.scale(a, 2.0);
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
        assert_eq!(tape.value(m).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
        let bad = tape.leaf(Tensor::zeros(&[3]), false);
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_certain() {
        let mut tape = Tape::new();
        let v = 7;
        let l = tape.leaf(Tensor::zeros(&[1, v]), false);
        let loss = tape.cross_entropy(l, &[3], None).unwrap();
        assert!((tape.value(loss).data()[0] - (v as f64).ln()).abs() < 1e-12);

        let mut logits = vec![0.0; v];
        logits[2] = 1e6;
        let l = tape.leaf(Tensor::new(vec![1, v], logits).unwrap(), false);
        let loss = tape.cross_entropy(l, &[2], None).unwrap();
        assert!(tape.value(loss).data()[0].abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_and_ignores_padding() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(&[2, 3]), true);
        assert!(matches!(
            tape.cross_entropy(l, &[0, 3], None),
            Err(TensorError::TargetOutOfRange { row: 1, .. })
        ));
        let loss = tape.cross_entropy(l, &[0, 1], Some(0)).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(l).unwrap();
        assert_eq!(&g[..3], &[0.0, 0.0, 0.0]);
        assert!(g[4] < 0.0);
    }

    #[test]
    fn backward_of_sum_is_ones_and_requires_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::filled(&[2, 2], 0.5), true);
        assert!(matches!(tape.backward(w), Err(TensorError::NotScalar(_))));
        let s = tape.sum(w);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn reused_tensor_accumulates_both_paths() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap(); // 2x²
        let s = tape.sum(z);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, -8.0, 2.0]);
    }

    #[test]
    fn second_backward_doubles_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(t2(&[&[0.3, -1.2], &[2.0, 0.7]]), true);
        let x = tape.leaf(t2(&[&[1.5], &[-0.5]]), false);
        let y = tape.matmul(w, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let once = tape.grad(w).unwrap().to_vec();
        tape.backward(s).unwrap();
        let twice = tape.grad(w).unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn softmax_rows_are_normalised() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(&[&[1.0, 2.0, 3.0], &[-50.0, 0.0, 50.0]]), false);
        let s = tape.softmax(x).unwrap();
        for row in tape.value(s).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
