//! Layer kernels, loss and optimiser.

mod conv;
mod dropout;
mod loss;
mod norm;
mod optim;
mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conv::{conv2d, conv_out_extent, ConvGeom, Padding};
pub use dropout::dropout;
pub use loss::{softmax, softmax_ce_loss};
pub use norm::{batchnorm, RunningStats, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
pub use optim::{adam_step, Adam, AdamConfig};
pub use pool::{global_avg_pool, maxpool2d, upsample2d};

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// `x[N,in] · weight[in,out] + bias[out]`.
pub fn dense(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    tape.add_bias(y, bias)
}

/// Glorot/Xavier uniform initialisation, `U(±sqrt(6/(fan_in+fan_out)))`.
pub fn glorot_uniform<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape, data).expect("shape/product agree")
}
