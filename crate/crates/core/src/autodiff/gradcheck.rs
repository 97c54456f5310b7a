use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{LicapError, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences and returns the largest relative error, using
/// `max(|a|, |b|, 1e-8)` as the denominator.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(LicapError::invalid("grad_check eps must be positive"));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let analytic = tape.grad_or_zero(xv);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(probe.clone());
        let y = f(&mut tape, v)?;
        Ok(tape.value(y).item())
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[k] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[k];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
