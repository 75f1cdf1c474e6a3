use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

/// Inverted dropout. Eval mode and `rate == 0` return `x` itself.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    rate: f32,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let xv = tape.value(x);
    let mask: Vec<f32> = (0..xv.len())
        .map(|_| {
            if rng.gen::<f32>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    let value = Tensor::new(xv.shape(), data)?;
    Ok(tape.push(value, DropoutBackward { inputs: [x], mask }))
}

struct DropoutBackward {
    inputs: [Var; 1],
    mask: Vec<f32>,
}

impl Backward for DropoutBackward {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        _: &Tape,
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let data = grad
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(g, m)| g * m)
            .collect();
        Ok(vec![Some(Tensor::new(grad.shape(), data)?)])
    }
}
