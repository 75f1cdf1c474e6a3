use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sgemm, Backward, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

/// Resolved geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output extent along one axis, with the leading pad for `same` padding
/// (TensorFlow convention: the odd pixel goes to the trailing side).
pub fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

impl ConvGeom {
    pub fn new(
        input: (usize, usize, usize),
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (channels, height, width) = input;
        if stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        let (Some((out_h, pad_top)), Some((out_w, pad_left))) = (
            conv_out_extent(height, kernel.0, stride, padding),
            conv_out_extent(width, kernel.1, stride, padding),
        ) else {
            return Err(Error::shape(
                "conv2d: kernel larger than input",
                &[height, width],
                &[kernel.0, kernel.1],
            ));
        };
        Ok(ConvGeom {
            channels,
            height,
            width,
            filters,
            kh: kernel.0,
            kw: kernel.1,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output position `(oy, ox)` and kernel tap `(i, j)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + i).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + j).checked_sub(self.pad_left)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    /// Unfolds one `[C, H, W]` image into `[C·kh·kw, OH·OW]` columns.
    fn im2col(&self, image: &[f32], cols: &mut [f32]) {
        let p = self.positions();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..][..self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            row[oy * self.out_w + ox] = match self.source(oy, ox, i, j) {
                                Some((y, x)) => plane[y * self.width + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], image: &mut [f32]) {
        let p = self.positions();
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..][..self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(oy, ox, i, j) {
                                plane[y * self.width + x] += row[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of `x[N,C,H,W]` with `kernel[F,C,kh,kw]` plus `bias[F]`.
pub fn conv2d(
    tape: &mut Tape,
    x: Var,
    kernel: Var,
    bias: Var,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let (f, kc, kh, kw) = tape.value(kernel).dims4()?;
    if kc != c {
        return Err(Error::shape(
            "conv2d: channel mismatch",
            tape.shape(x),
            tape.shape(kernel),
        ));
    }
    if tape.shape(bias) != [f] {
        return Err(Error::shape("conv2d: bias", tape.shape(bias), &[f]));
    }
    let geom = ConvGeom::new((c, h, w), f, (kh, kw), stride, padding)?;
    let value = conv_forward_values(
        tape.value(x).data(),
        n,
        &geom,
        tape.value(kernel).data(),
        tape.value(bias).data(),
    );
    let value = Tensor::new(&[n, f, geom.out_h, geom.out_w], value)?;
    Ok(tape.push(
        value,
        Conv2dBackward {
            inputs: [x, kernel, bias],
            geom,
        },
    ))
}

fn conv_forward_values(
    x: &[f32],
    n: usize,
    geom: &ConvGeom,
    kernel: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let (k, p, f) = (geom.patch_len(), geom.positions(), geom.filters);
    let in_len = geom.channels * geom.height * geom.width;
    let mut out = vec![0.0; n * f * p];
    let mut cols = vec![0.0; k * p];
    for s in 0..n {
        geom.im2col(&x[s * in_len..][..in_len], &mut cols);
        let dst = &mut out[s * f * p..][..f * p];
        for (fi, row) in dst.chunks_exact_mut(p).enumerate() {
            row.fill(bias[fi]);
        }
        sgemm(f, k, p, kernel, false, &cols, false, dst, 1.0);
    }
    out
}

struct Conv2dBackward {
    inputs: [Var; 3],
    geom: ConvGeom,
}

impl Backward for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
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
        let geom = &self.geom;
        let x = tape.value(self.inputs[0]);
        let kernel = tape.value(self.inputs[1]);
        let n = x.shape()[0];
        let (k, p, f) = (geom.patch_len(), geom.positions(), geom.filters);
        let in_len = geom.channels * geom.height * geom.width;

        let mut dx = needs[0].then(|| vec![0.0f32; x.len()]);
        let mut dk = needs[1].then(|| vec![0.0f32; kernel.len()]);
        let mut cols = vec![0.0; k * p];
        let mut dcols = vec![0.0; k * p];
        for s in 0..n {
            let dout = &grad.data()[s * f * p..][..f * p];
            if let Some(dk) = dk.as_mut() {
                geom.im2col(&x.data()[s * in_len..][..in_len], &mut cols);
                // dK += dOut · colsᵀ
                sgemm(f, p, k, dout, false, &cols, true, dk, 1.0);
            }
            if let Some(dx) = dx.as_mut() {
                // dCols = Kᵀ · dOut
                sgemm(k, f, p, kernel.data(), true, dout, false, &mut dcols, 0.0);
                geom.col2im(&dcols, &mut dx[s * in_len..][..in_len]);
            }
        }
        #[cfg(any(test, feature = "fault-injection"))]
        if crate::fault::conv_backward_fault() {
            if let Some(dk) = dk.as_mut() {
                dk.iter_mut().for_each(|g| *g *= 1.5);
            }
        }
        let db = needs[2].then(|| {
            let mut acc = vec![0.0f64; f];
            for (i, g) in grad.data().iter().enumerate() {
                acc[(i / p) % f] += *g as f64;
            }
            acc.into_iter().map(|v| v as f32).collect::<Vec<_>>()
        });
        Ok(vec![
            dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
            dk.map(|d| Tensor::new(kernel.shape(), d)).transpose()?,
            db.map(|d| Tensor::new(&[f], d)).transpose()?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Tensor {
        let mut tape = Tape::new();
        let (xv, kv, bv) = (
            tape.constant(x.clone()),
            tape.constant(k.clone()),
            tape.constant(b.clone()),
        );
        let y = conv2d(&mut tape, xv, kv, bv, stride, padding).unwrap();
        tape.value(y).clone()
    }

    /// Direct nested-loop cross-correlation.
    fn naive(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Tensor {
        let (n, c, h, w) = x.dims4().unwrap();
        let (f, _, kh, kw) = k.dims4().unwrap();
        let (oh, pt) = conv_out_extent(h, kh, stride, padding).unwrap();
        let (ow, pl) = conv_out_extent(w, kw, stride, padding).unwrap();
        let mut out = vec![0.0f32; n * f * oh * ow];
        for s in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[fi];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let y = (oy * stride + i) as isize - pt as isize;
                                    let xx = (ox * stride + j) as isize - pl as isize;
                                    if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()
                                        [((s * c + ci) * h + y as usize) * w + xx as usize]
                                        * k.data()[((fi * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((s * f + fi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, f, oh, ow], out).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn hand_computed_valid_convolution() {
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = run(&x, &k, &Tensor::zeros(&[1]), 1, Padding::Valid);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn unit_one_by_one_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 1, 5, 4], &mut rng);
        let y = run(
            &x,
            &Tensor::full(&[1, 1, 1, 1], 1.0),
            &Tensor::zeros(&[1]),
            1,
            Padding::Same,
        );
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_oracle_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 3, 8, 8], &mut rng);
        let k = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        assert!(
            run(&x, &k, &b, 1, Padding::Same).max_abs_diff(&naive(&x, &k, &b, 1, Padding::Same))
                < 1e-5
        );

        for _ in 0..100 {
            let c = rng.gen_range(1..4);
            let f = rng.gen_range(1..4);
            let h = rng.gen_range(3..9);
            let w = rng.gen_range(3..9);
            let kh = rng.gen_range(1..4);
            let stride = rng.gen_range(1..3);
            let padding = if rng.gen_bool(0.5) {
                Padding::Same
            } else {
                Padding::Valid
            };
            let x = random(&[2, c, h, w], &mut rng);
            let k = random(&[f, c, kh, kh], &mut rng);
            let b = random(&[f], &mut rng);
            let got = run(&x, &k, &b, stride, padding);
            let want = naive(&x, &k, &b, stride, padding);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-5);
        }
    }

    #[test]
    fn output_extents() {
        assert_eq!(conv_out_extent(28, 3, 1, Padding::Same), Some((28, 1)));
        assert_eq!(conv_out_extent(32, 1, 2, Padding::Same), Some((16, 0)));
        assert_eq!(conv_out_extent(7, 3, 2, Padding::Same), Some((4, 1)));
        assert_eq!(conv_out_extent(7, 3, 2, Padding::Valid), Some((3, 0)));
        assert_eq!(conv_out_extent(2, 3, 1, Padding::Valid), None);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            conv2d(&mut tape, x, k, b, 1, Padding::Same),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let stride = 1 + (seed as usize % 2);
            let x = random(&[2, 2, 5, 5], &mut rng);
            let k = random(&[3, 2, 3, 3], &mut rng);
            let b = random(&[3], &mut rng);
            let probe = random(
                &[2, 3, 5usize.div_ceil(stride), 5usize.div_ceil(stride)],
                &mut rng,
            );
            // the loss is linear in each argument, so a wider step adds no truncation error
            let eps = 1e-2;
            let loss = |t: &mut Tape, x: Var, k: Var, b: Var| {
                let y = conv2d(t, x, k, b, stride, Padding::Same)?;
                let r = t.constant(probe.clone());
                let y = t.mul(y, r)?;
                Ok(t.sum(y))
            };
            let ex = grad_check(
                |t, v| {
                    let (k, b) = (t.constant(k.clone()), t.constant(b.clone()));
                    loss(t, v, k, b)
                },
                &x,
                eps,
            )
            .unwrap();
            let ek = grad_check(
                |t, v| {
                    let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                    loss(t, x, v, b)
                },
                &k,
                eps,
            )
            .unwrap();
            let eb = grad_check(
                |t, v| {
                    let (x, k) = (t.constant(x.clone()), t.constant(k.clone()));
                    loss(t, x, k, v)
                },
                &b,
                eps,
            )
            .unwrap();
            assert!(
                ex < 1e-3 && ek < 1e-3 && eb < 1e-3,
                "seed {seed}: {ex} {ek} {eb}"
            );
        }
    }
}
