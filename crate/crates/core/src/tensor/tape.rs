use std::sync::Arc;

use super::{sgemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded op.
///
/// `backward` receives the op's output value and the gradient flowing into
/// it, and returns one gradient per entry of `inputs()`. Entries whose
/// `needs[i]` is false may be returned as `None`.
pub trait Backward: Send {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> &[Var];
    fn backward(
        &self,
        tape: &Tape,
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    rule: Option<Box<dyn Backward>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
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
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Records a leaf without copying its buffer; used for parameters.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            rule: None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` output with respect to `v`. Absent
    /// for values that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    /// Clears accumulated gradients so `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.consumed = false;
    }

    /// Records the result of an op together with its backward rule.
    pub fn push(&mut self, value: Tensor, rule: impl Backward + 'static) -> Var {
        let requires_grad = rule.inputs().iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            rule: if requires_grad {
                Some(Box::new(rule))
            } else {
                None
            },
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Autodiff(
                "backward already ran on this tape; call reset() first".into(),
            ));
        }
        let out_shape = self.value(output).shape().to_vec();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar output, got shape {out_shape:?}"
            )));
        }
        self.consumed = true;
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        let mut grads = std::mem::take(&mut self.grads);
        grads[output.0] = Some(Tensor::full(&out_shape, 1.0));
        let result = self.propagate(output, &mut grads);
        self.grads = grads;
        result
    }

    fn propagate(&self, output: Var, grads: &mut [Option<Tensor>]) -> Result<()> {
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].as_ref() else {
                continue;
            };
            let inputs = rule.inputs();
            let needs: Vec<bool> = inputs
                .iter()
                .map(|i| self.nodes[i.0].requires_grad)
                .collect();
            let input_grads = rule.backward(self, &node.value, grad, &needs)?;
            debug_assert_eq!(input_grads.len(), inputs.len(), "{}", rule.name());
            for ((&inp, g), need) in inputs.iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                if g.shape() != self.value(inp).shape() {
                    return Err(Error::shape(
                        rule.name(),
                        g.shape(),
                        self.value(inp).shape(),
                    ));
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, MatMul { inputs: [a, b] }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, Add { inputs: [a, b] }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, Mul { inputs: [a, b] }))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(
            value,
            Scale {
                inputs: [a],
                factor,
            },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Relu { inputs: [a] })
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(total as f32), Sum { inputs: [a] })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Reshape { inputs: [a] }))
    }

    /// Adds `bias[C]` along axis 1 of an `[N, C, ...]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let shape = xv.shape();
        if shape.len() < 2 || bv.shape() != [shape[1]] {
            return Err(Error::shape("add_bias", shape, bv.shape()));
        }
        let inner: usize = shape[2..].iter().product();
        let c = shape[1];
        let mut data = xv.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bv.data()[(i / inner) % c];
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, AddBias { inputs: [x, bias] }))
    }
}

/// Runs reverse-mode differentiation from a scalar `output`.
pub fn backward(output: Var, tape: &mut Tape) -> Result<()> {
    tape.backward(output)
}

struct MatMul {
    inputs: [Var; 2],
}

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        tape: &Tape,
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let a = tape.value(self.inputs[0]);
        let b = tape.value(self.inputs[1]);
        let (m, k) = a.dims2()?;
        let n = b.shape()[1];
        // dA = dC · Bᵀ, dB = Aᵀ · dC
        let da = needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            sgemm(m, n, k, grad.data(), false, b.data(), true, &mut out, 0.0);
            Tensor::new(&[m, k], out)
        });
        let db = needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            sgemm(k, m, n, a.data(), true, grad.data(), false, &mut out, 0.0);
            Tensor::new(&[k, n], out)
        });
        Ok(vec![da.transpose()?, db.transpose()?])
    }
}

struct Add {
    inputs: [Var; 2],
}

impl Backward for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        _: &Tape,
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        Ok(needs.iter().map(|&n| n.then(|| grad.clone())).collect())
    }
}

struct Mul {
    inputs: [Var; 2],
}

impl Backward for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        tape: &Tape,
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let a = tape.value(self.inputs[0]);
        let b = tape.value(self.inputs[1]);
        let times = |other: &Tensor| {
            let data = grad
                .data()
                .iter()
                .zip(other.data())
                .map(|(g, o)| g * o)
                .collect();
            Tensor::new(grad.shape(), data)
        };
        Ok(vec![
            needs[0].then(|| times(b)).transpose()?,
            needs[1].then(|| times(a)).transpose()?,
        ])
    }
}

struct Scale {
    inputs: [Var; 1],
    factor: f32,
}

impl Backward for Scale {
    fn name(&self) -> &'static str {
        "scale"
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
        let data = grad.data().iter().map(|g| g * self.factor).collect();
        Ok(vec![Some(Tensor::new(grad.shape(), data)?)])
    }
}

struct Relu {
    inputs: [Var; 1],
}

impl Backward for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        _: &Tape,
        output: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let data = grad
            .data()
            .iter()
            .zip(output.data())
            .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
            .collect();
        Ok(vec![Some(Tensor::new(grad.shape(), data)?)])
    }
}

struct Sum {
    inputs: [Var; 1],
}

impl Backward for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        tape: &Tape,
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let shape = tape.value(self.inputs[0]).shape();
        Ok(vec![Some(Tensor::full(shape, grad.data()[0]))])
    }
}

struct Reshape {
    inputs: [Var; 1],
}

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        tape: &Tape,
        _: &Tensor,
        grad: &Tensor,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(
            grad.reshape(tape.value(self.inputs[0]).shape())?,
        )])
    }
}

struct AddBias {
    inputs: [Var; 2],
}

impl Backward for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(
        &self,
        _: &Tape,
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let shape = grad.shape();
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let db = needs[1].then(|| {
            let mut acc = vec![0.0f64; c];
            for (i, g) in grad.data().iter().enumerate() {
                acc[(i / inner) % c] += *g as f64;
            }
            Tensor::new(&[c], acc.into_iter().map(|v| v as f32).collect())
        });
        Ok(vec![needs[0].then(|| grad.clone()), db.transpose()?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_gradient_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.sum(x);
        backward(y, &mut tape).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let y = tape.sum(sq);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn relu_dead_region_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0), true);
        let r = tape.relu(x);
        let y = tape.sum(r);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Autodiff(_))));
    }

    #[test]
    fn detached_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
        let c = tape.constant(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let p = tape.mul(x, c).unwrap();
        let y = tape.sum(p);
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn second_backward_without_reset_fails() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let y = tape.sum(x);
        tape.backward(y).unwrap();
        assert!(tape.backward(y).is_err());
        tape.reset();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        // y = sum(x + x) → dy/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![0.5, -1.0]).unwrap(), true);
        let s = tape.add(x, x).unwrap();
        let y = tape.sum(s);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn matmul_backward_rules() {
        let mut tape = Tape::new();
        let a = tape.leaf(
            Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap(),
            true,
        );
        let b = tape.leaf(
            Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap(),
            true,
        );
        let c = tape.matmul(a, b).unwrap();
        let y = tape.sum(c);
        tape.backward(y).unwrap();
        // dA = 1·Bᵀ (row sums of B), dB = Aᵀ·1 (column sums of A)
        assert_eq!(tape.grad(a).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn add_bias_broadcasts_over_channel_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2, 1, 2]), true);
        let b = tape.leaf(Tensor::new(&[2], vec![1.0, -1.0]).unwrap(), true);
        let y = tape.add_bias(x, b).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0]
        );
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[4.0, 4.0]);
    }
}
