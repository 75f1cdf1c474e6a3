use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

fn softmax_rows(logits: &Tensor) -> Result<(Vec<f32>, Vec<f64>)> {
    let (n, k) = logits.dims2()?;
    let mut probs = Vec::with_capacity(n * k);
    let mut log_z = Vec::with_capacity(n);
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        probs.extend(row.iter().map(|&v| ((v as f64 - max).exp() / z) as f32));
        log_z.push(max + z.ln());
    }
    Ok((probs, log_z))
}

/// Row-wise softmax of `[N, K]`.
pub fn softmax(tape: &mut Tape, x: Var) -> Result<Var> {
    let (probs, _) = softmax_rows(tape.value(x))?;
    let value = Tensor::new(tape.shape(x), probs)?;
    Ok(tape.push(value, SoftmaxBackward { inputs: [x] }))
}

struct SoftmaxBackward {
    inputs: [Var; 1],
}

impl Backward for SoftmaxBackward {
    fn name(&self) -> &'static str {
        "softmax"
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
        let k = output.shape()[1];
        let mut dx = Vec::with_capacity(grad.len());
        for (y, dy) in output
            .data()
            .chunks_exact(k)
            .zip(grad.data().chunks_exact(k))
        {
            let dot: f64 = y
                .iter()
                .zip(dy)
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            dx.extend(
                y.iter()
                    .zip(dy)
                    .map(|(a, b)| (*a as f64 * (*b as f64 - dot)) as f32),
            );
        }
        Ok(vec![Some(Tensor::new(grad.shape(), dx)?)])
    }
}

/// Mean softmax cross-entropy over the batch, computed from raw logits with
/// a stable log-sum-exp. Returns the scalar loss and the row probabilities.
pub fn softmax_ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<(Var, Tensor)> {
    let lv = tape.value(logits);
    let (n, k) = lv.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_ce_loss: labels",
            &[labels.len()],
            &[n],
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let (probs, log_z) = softmax_rows(lv)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| log_z[i] - lv.data()[i * k + l] as f64)
        .sum();
    let loss = Tensor::scalar((total / n as f64) as f32);
    let probs = Tensor::new(&[n, k], probs)?;
    let var = tape.push(
        loss,
        SoftmaxCeBackward {
            inputs: [logits],
            labels: labels.to_vec(),
            probs: probs.clone(),
        },
    );
    Ok((var, probs))
}

struct SoftmaxCeBackward {
    inputs: [Var; 1],
    labels: Vec<usize>,
    probs: Tensor,
}

impl Backward for SoftmaxCeBackward {
    fn name(&self) -> &'static str {
        "softmax_ce_loss"
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
        let (n, k) = self.probs.dims2()?;
        let scale = grad.data()[0] / n as f32;
        let mut dx = self.probs.data().to_vec();
        for (i, &l) in self.labels.iter().enumerate() {
            dx[i * k + l] -= 1.0;
        }
        dx.iter_mut().for_each(|v| *v *= scale);
        Ok(vec![Some(Tensor::new(&[n, k], dx)?)])
    }
}
