use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_GRAD_CHECK_EPS: f32 = 1e-3;

/// Compares the tape gradient of a scalar-valued `f` at `input` with central
/// differences, returning `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f32) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!(
            "grad_check eps must be > 0, got {eps}"
        )));
    }

    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let y = f(&mut tape, x)?;
    check_finite(tape.value(y), "output")?;
    tape.backward(y)?;
    let analytic = tape
        .grad(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));
    check_finite(&analytic, "analytic gradient")?;

    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(point, false);
        let y = f(&mut tape, x)?;
        let v = tape.value(y);
        check_finite(v, "perturbed output")?;
        Ok(v.data()[0] as f64)
    };

    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        // divide by the step actually taken after f32 rounding
        let step = plus.data()[i] as f64 - minus.data()[i] as f64;
        let numeric = (eval(plus)? - eval(minus)?) / step;
        let a = analytic.data()[i] as f64;
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "grad_check: {what} is not finite"
        )))
    }
}
