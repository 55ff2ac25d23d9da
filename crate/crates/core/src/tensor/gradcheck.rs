use super::{Result, Tape, Tensor, TensorError, Var};

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// Returns the largest per-coordinate relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(TensorError::Contract(format!("grad_check step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(&mut tape, leaf)?;
    let base = scalar_of(&tape, out)?;
    if !base.is_finite() {
        return Err(TensorError::NonFinite(format!("f(x) = {base}")));
    }
    tape.backward(out)?;
    let analytic = tape
        .grad(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut eval = |probe: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(probe, false);
        let out = f(&mut tape, leaf)?;
        scalar_of(&tape, out)
    };

    let mut worst = 0.0_f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let h = plus.data()[i] - minus.data()[i];
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(TensorError::NonFinite(format!(
                "f at coordinate {i} ± {step}: {fp}, {fm}"
            )));
        }
        let numeric = (fp - fm) / h;
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(TensorError::NotScalar(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}
