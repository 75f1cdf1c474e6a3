use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

pub const BATCHNORM_EPS: f32 = 1e-3;
pub const BATCHNORM_MOMENTUM: f32 = 0.99;

/// Non-learnable batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Per-channel batch normalisation over axis 1 of `[N,C]` or `[N,C,H,W]`.
///
/// Train mode normalises with batch statistics and folds them into `stats`
/// as `running = momentum·running + (1−momentum)·batch`; Eval mode uses the
/// running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats,
    mode: Mode,
    eps: f32,
    momentum: f32,
) -> Result<Var> {
    let xv = tape.value(x);
    let shape = xv.shape().to_vec();
    if shape.len() != 2 && shape.len() != 4 {
        return Err(Error::shape(
            "batchnorm: expected [N,C] or [N,C,H,W]",
            &shape,
            &[],
        ));
    }
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    for (what, v) in [("batchnorm: gamma", gamma), ("batchnorm: beta", beta)] {
        if tape.shape(v) != [c] {
            return Err(Error::shape(what, tape.shape(v), &[c]));
        }
    }
    if stats.mean.len() != c {
        return Err(Error::shape(
            "batchnorm: running stats",
            &[stats.mean.len()],
            &[c],
        ));
    }

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Config(
                    "batchnorm in train mode needs a batch of at least 2 samples".into(),
                ));
            }
            let count = (n * inner) as f64;
            let mut mean = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            for (i, &v) in xv.data().iter().enumerate() {
                let ch = (i / inner) % c;
                mean[ch] += v as f64;
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for (i, &v) in xv.data().iter().enumerate() {
                let ch = (i / inner) % c;
                let d = v as f64 - mean[ch];
                sq[ch] += d * d;
            }
            let var: Vec<f64> = sq.into_iter().map(|s| s / count).collect();
            let m = momentum as f64;
            for ch in 0..c {
                stats.mean[ch] = (m * stats.mean[ch] as f64 + (1.0 - m) * mean[ch]) as f32;
                stats.var[ch] = (m * stats.var[ch] as f64 + (1.0 - m) * var[ch]) as f32;
            }
            (mean, var)
        }
        Mode::Eval => (
            stats.mean.iter().map(|&v| v as f64).collect(),
            stats.var.iter().map(|&v| v as f64).collect(),
        ),
    };

    let inv_std: Vec<f32> = var
        .iter()
        .map(|v| (1.0 / (v + eps as f64).sqrt()) as f32)
        .collect();
    let (g, b) = (tape.value(gamma).data(), tape.value(beta).data());
    let mut xhat = Vec::with_capacity(xv.len());
    let mut out = Vec::with_capacity(xv.len());
    for (i, &v) in xv.data().iter().enumerate() {
        let ch = (i / inner) % c;
        let h = ((v as f64 - mean[ch]) * inv_std[ch] as f64) as f32;
        xhat.push(h);
        out.push(g[ch] * h + b[ch]);
    }
    let value = Tensor::new(&shape, out)?;
    Ok(tape.push(
        value,
        BatchNormBackward {
            inputs: [x, gamma, beta],
            xhat,
            inv_std,
            channels: c,
            inner,
            mode,
        },
    ))
}

struct BatchNormBackward {
    inputs: [Var; 3],
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    channels: usize,
    inner: usize,
    mode: Mode,
}

impl Backward for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batchnorm"
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
        let (c, inner) = (self.channels, self.inner);
        let gamma = tape.value(self.inputs[1]).data();
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (i, (&dy, &h)) in grad.data().iter().zip(&self.xhat).enumerate() {
            let ch = (i / inner) % c;
            sum_dy[ch] += dy as f64;
            sum_dy_xhat[ch] += (dy * h) as f64;
        }
        let dx = needs[0].then(|| {
            let count = (grad.len() / c) as f64;
            let data = grad
                .data()
                .iter()
                .zip(&self.xhat)
                .enumerate()
                .map(|(i, (&dy, &h))| {
                    let ch = (i / inner) % c;
                    let scale = gamma[ch] as f64 * self.inv_std[ch] as f64;
                    match self.mode {
                        Mode::Eval => (dy as f64 * scale) as f32,
                        Mode::Train => {
                            let centred =
                                dy as f64 - sum_dy[ch] / count - h as f64 * sum_dy_xhat[ch] / count;
                            (scale * centred) as f32
                        }
                    }
                })
                .collect();
            Tensor::new(grad.shape(), data)
        });
        let to_tensor = |v: &[f64]| Tensor::new(&[c], v.iter().map(|&x| x as f32).collect());
        Ok(vec![
            dx.transpose()?,
            needs[1].then(|| to_tensor(&sum_dy_xhat)).transpose()?,
            needs[2].then(|| to_tensor(&sum_dy)).transpose()?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, DEFAULT_GRAD_CHECK_EPS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn forward(
        x: Tensor,
        gamma: &[f32],
        beta: &[f32],
        stats: &mut RunningStats,
        mode: Mode,
        eps: f32,
    ) -> Tensor {
        let c = gamma.len();
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let g = tape.constant(Tensor::new(&[c], gamma.to_vec()).unwrap());
        let b = tape.constant(Tensor::new(&[c], beta.to_vec()).unwrap());
        let y = batchnorm(&mut tape, x, g, b, stats, mode, eps, BATCHNORM_MOMENTUM).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn constant_input_normalises_to_zero() {
        let mut stats = RunningStats::new(2);
        let y = forward(
            Tensor::full(&[4, 2, 3, 3], 5.0),
            &[1.0, 1.0],
            &[0.0, 0.0],
            &mut stats,
            Mode::Train,
            BATCHNORM_EPS,
        );
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_values_map_to_minus_one_and_one() {
        let mut stats = RunningStats::new(1);
        let y = forward(
            Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap(),
            &[1.0],
            &[0.0],
            &mut stats,
            Mode::Train,
            1e-12,
        );
        assert!(
            (y.data()[0] + 1.0).abs() < 1e-6 && (y.data()[1] - 1.0).abs() < 1e-6,
            "{:?}",
            y.data()
        );
        // running stats moved 1% toward the batch: mean 2, var 1
        assert!((stats.mean[0] - 0.02).abs() < 1e-7);
        assert!((stats.var[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let mut stats = RunningStats::new(3);
        let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        let y = forward(x.clone(), &[1.0; 3], &[0.0; 3], &mut stats, Mode::Eval, 0.0);
        assert_eq!(y, x);
    }

    #[test]
    fn batch_of_one_in_train_mode_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let g = tape.constant(Tensor::full(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let mut stats = RunningStats::new(2);
        let r = batchnorm(
            &mut tape,
            x,
            g,
            b,
            &mut stats,
            Mode::Train,
            BATCHNORM_EPS,
            BATCHNORM_MOMENTUM,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn train_output_statistics_follow_gamma_and_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = (0..16 * 3 * 4 * 4)
            .map(|_| rng.gen_range(-4.0..6.0))
            .collect();
        let gamma = [0.5, 2.0, 1.5];
        let beta = [-1.0, 0.25, 3.0];
        let mut stats = RunningStats::new(3);
        let y = forward(
            Tensor::new(&[16, 3, 4, 4], data).unwrap(),
            &gamma,
            &beta,
            &mut stats,
            Mode::Train,
            1e-5,
        );
        for ch in 0..3 {
            let vals: Vec<f64> = y
                .data()
                .iter()
                .enumerate()
                .filter(|(i, _)| (i / 16) % 3 == ch)
                .map(|(_, &v)| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((mean - beta[ch] as f64).abs() < 1e-4, "mean {mean}");
            let g2 = (gamma[ch] as f64).powi(2);
            assert!((var - g2).abs() / g2 < 0.01, "var {var}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand = |shape: &[usize]| {
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
            };
            let shape: &[usize] = if seed % 2 == 0 {
                &[4, 3, 2, 2]
            } else {
                &[6, 3]
            };
            let x = rand(shape);
            let gamma = rand(&[3]);
            let beta = rand(&[3]);
            let probe = rand(shape);
            for mode in [Mode::Train, Mode::Eval] {
                let loss = |t: &mut Tape, x: Var, g: Var, b: Var| {
                    let mut stats = RunningStats {
                        mean: vec![0.1, -0.2, 0.3],
                        var: vec![0.5, 1.5, 2.0],
                    };
                    let y = batchnorm(
                        t,
                        x,
                        g,
                        b,
                        &mut stats,
                        mode,
                        BATCHNORM_EPS,
                        BATCHNORM_MOMENTUM,
                    )?;
                    let r = t.constant(probe.clone());
                    let y = t.mul(y, r)?;
                    Ok(t.sum(y))
                };
                let ex = grad_check(
                    |t, v| {
                        let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
                        loss(t, v, g, b)
                    },
                    &x,
                    DEFAULT_GRAD_CHECK_EPS,
                )
                .unwrap();
                let eg = grad_check(
                    |t, v| {
                        let (x, b) = (t.constant(x.clone()), t.constant(beta.clone()));
                        loss(t, x, v, b)
                    },
                    &gamma,
                    DEFAULT_GRAD_CHECK_EPS,
                )
                .unwrap();
                let eb = grad_check(
                    |t, v| {
                        let (x, g) = (t.constant(x.clone()), t.constant(gamma.clone()));
                        loss(t, x, g, v)
                    },
                    &beta,
                    DEFAULT_GRAD_CHECK_EPS,
                )
                .unwrap();
                assert!(
                    ex < 1e-3 && eg < 1e-3 && eb < 1e-3,
                    "seed {seed} {mode:?}: {ex} {eg} {eb}"
                );
            }
        }
    }
}
