use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{ActivationKind, LayerDescriptor, Shape};
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm, conv2d, dense, dropout, global_avg_pool, glorot_uniform, maxpool2d, softmax,
    upsample2d, Mode, Padding, RunningStats, BATCHNORM_EPS, BATCHNORM_MOMENTUM,
};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct ConvP {
    kernel: usize,
    bias: usize,
    stride: usize,
    padding: Padding,
}

#[derive(Clone, Copy, Debug)]
struct BnP {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: ConvP,
    bn1: BnP,
    conv2: ConvP,
    bn2: BnP,
    projection: Option<(ConvP, BnP)>,
}

#[derive(Clone, Debug)]
enum Op {
    Conv(ConvP),
    BatchNorm(BnP),
    MaxPool,
    UpSample,
    GlobalAvgPool,
    Flatten,
    Dropout(f32),
    Dense { weight: usize, bias: usize },
    Relu,
    Softmax,
    Stage(Vec<Block>),
}

/// A compiled, parameterised model.
#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    input: Shape,
    shapes: Vec<Shape>,
    ops: Vec<Op>,
    params: Vec<Arc<Tensor>>,
    stats: Vec<RunningStats>,
    conv_count: usize,
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Arc<Tensor>>,
    stats: Vec<RunningStats>,
    conv_count: usize,
}

impl Builder {
    fn param(&mut self, t: Tensor) -> usize {
        self.params.push(Arc::new(t));
        self.params.len() - 1
    }

    fn conv(
        &mut self,
        in_c: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> ConvP {
        let fan_in = in_c * kernel * kernel;
        let fan_out = filters * kernel * kernel;
        let k = glorot_uniform(
            &[filters, in_c, kernel, kernel],
            fan_in,
            fan_out,
            &mut self.rng,
        );
        self.conv_count += 1;
        ConvP {
            kernel: self.param(k),
            bias: self.param(Tensor::zeros(&[filters])),
            stride,
            padding,
        }
    }

    fn bn(&mut self, c: usize) -> BnP {
        self.stats.push(RunningStats::new(c));
        BnP {
            gamma: self.param(Tensor::full(&[c], 1.0)),
            beta: self.param(Tensor::zeros(&[c])),
            stats: self.stats.len() - 1,
        }
    }
}

/// Compiles `spec` for per-sample `input` shape; parameters are drawn from a
/// ChaCha stream seeded by `seed` in layer order.
pub fn compile(spec: &ModelSpec, input: Shape, num_classes: usize, seed: u64) -> Result<Network> {
    let shapes = spec.validate(input, num_classes)?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: Vec::new(),
        stats: Vec::new(),
        conv_count: 0,
    };
    let mut ops = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape = shapes[i];
        let channels = match in_shape {
            Shape::Spatial { c, .. } => c,
            Shape::Flat(f) => f,
        };
        ops.push(match *layer {
            LayerDescriptor::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => Op::Conv(b.conv(channels, filters, kernel, stride, padding)),
            LayerDescriptor::BatchNorm => Op::BatchNorm(b.bn(channels)),
            LayerDescriptor::MaxPool => Op::MaxPool,
            LayerDescriptor::UpSample => Op::UpSample,
            LayerDescriptor::GlobalAvgPool => Op::GlobalAvgPool,
            LayerDescriptor::Flatten => Op::Flatten,
            LayerDescriptor::Dropout { rate } => Op::Dropout(rate),
            LayerDescriptor::Dense { units } => {
                let w = glorot_uniform(&[channels, units], channels, units, &mut b.rng);
                Op::Dense {
                    weight: b.param(w),
                    bias: b.param(Tensor::zeros(&[units])),
                }
            }
            LayerDescriptor::Activation {
                function: ActivationKind::Relu,
            } => Op::Relu,
            LayerDescriptor::Activation {
                function: ActivationKind::Softmax,
            } => Op::Softmax,
            LayerDescriptor::ResStage {
                filters,
                blocks,
                downsample,
            } => {
                let mut in_c = channels;
                let mut list = Vec::with_capacity(blocks);
                for j in 0..blocks {
                    let stride = if downsample && j == 0 { 2 } else { 1 };
                    let conv1 = b.conv(in_c, filters, 3, stride, Padding::Same);
                    let bn1 = b.bn(filters);
                    let conv2 = b.conv(filters, filters, 3, 1, Padding::Same);
                    let bn2 = b.bn(filters);
                    let projection = (stride != 1 || in_c != filters).then(|| {
                        (
                            b.conv(in_c, filters, 1, stride, Padding::Same),
                            b.bn(filters),
                        )
                    });
                    list.push(Block {
                        conv1,
                        bn1,
                        conv2,
                        bn2,
                        projection,
                    });
                    in_c = filters;
                }
                Op::Stage(list)
            }
        });
    }
    Ok(Network {
        spec: spec.clone(),
        input,
        shapes,
        ops,
        params: b.params,
        stats: b.stats,
        conv_count: b.conv_count,
    })
}

/// Parameter handles on a tape for one forward pass.
struct Bound<'a> {
    vars: &'a [Var],
    stats: &'a mut [RunningStats],
    mode: Mode,
}

impl Bound<'_> {
    fn conv(&self, tape: &mut Tape, x: Var, p: ConvP) -> Result<Var> {
        conv2d(
            tape,
            x,
            self.vars[p.kernel],
            self.vars[p.bias],
            p.stride,
            p.padding,
        )
    }

    fn bn(&mut self, tape: &mut Tape, x: Var, p: BnP) -> Result<Var> {
        batchnorm(
            tape,
            x,
            self.vars[p.gamma],
            self.vars[p.beta],
            &mut self.stats[p.stats],
            self.mode,
            BATCHNORM_EPS,
            BATCHNORM_MOMENTUM,
        )
    }

    fn block(&mut self, tape: &mut Tape, x: Var, blk: &Block) -> Result<Var> {
        let h = self.conv(tape, x, blk.conv1)?;
        let h = self.bn(tape, h, blk.bn1)?;
        let h = tape.relu(h);
        let h = self.conv(tape, h, blk.conv2)?;
        let h = self.bn(tape, h, blk.bn2)?;
        let skip = match blk.projection {
            Some((c, n)) => {
                let s = self.conv(tape, x, c)?;
                self.bn(tape, s, n)?
            }
            None => x,
        };
        let y = tape.add(h, skip)?;
        Ok(tape.relu(y))
    }
}

impl Network {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    /// Inferred shape after every layer, starting with the input.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> &[Arc<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Arc<Tensor>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn conv_count(&self) -> usize {
        self.conv_count
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// True when the final layer is a softmax, which is folded into the loss.
    pub fn fuses_softmax(&self) -> bool {
        matches!(self.ops.last(), Some(Op::Softmax))
    }

    /// Forward pass to pre-softmax logits.
    ///
    /// `x` is `[N, ...input dims]`. Returns the logits and the parameter
    /// leaves (which track gradients only in Train mode).
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Var, Vec<Var>)> {
        let want: Vec<usize> = self.input.dims();
        if tape.shape(x).len() != want.len() + 1 || tape.shape(x)[1..] != want[..] {
            let mut expect = vec![0];
            expect.extend(&want);
            return Err(Error::shape("network input", tape.shape(x), &expect));
        }
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf_shared(Arc::clone(p), mode == Mode::Train))
            .collect();
        let mut bound = Bound {
            vars: &vars,
            stats: &mut self.stats,
            mode,
        };
        let n_ops = if self.ops.last().is_some_and(|o| matches!(o, Op::Softmax)) {
            self.ops.len() - 1
        } else {
            self.ops.len()
        };
        let mut h = x;
        for op in &self.ops[..n_ops] {
            h = match op {
                Op::Conv(p) => bound.conv(tape, h, *p)?,
                Op::BatchNorm(p) => bound.bn(tape, h, *p)?,
                Op::MaxPool => maxpool2d(tape, h)?,
                Op::UpSample => upsample2d(tape, h)?,
                Op::GlobalAvgPool => global_avg_pool(tape, h)?,
                Op::Flatten => {
                    let s = tape.shape(h);
                    let n = s[0];
                    let f = s[1..].iter().product::<usize>();
                    tape.reshape(h, &[n, f])?
                }
                Op::Dropout(rate) => dropout(tape, h, *rate, mode, rng)?,
                Op::Dense { weight, bias } => dense(tape, h, vars[*weight], vars[*bias])?,
                Op::Relu => tape.relu(h),
                Op::Softmax => softmax(tape, h)?,
                Op::Stage(blocks) => {
                    for blk in blocks {
                        h = bound.block(tape, h, blk)?;
                    }
                    h
                }
            };
        }
        Ok((h, vars))
    }

    /// Eval-mode class probabilities for a batch.
    pub fn predict(&mut self, batch: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = self.forward(&mut tape, x, Mode::Eval, &mut rng)?;
        let p = softmax(&mut tape, logits)?;
        Ok(tape.value(p).clone())
    }
}
