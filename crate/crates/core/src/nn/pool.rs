use crate::error::Result;
use crate::tensor::{Backward, Tape, Tensor, Var};

/// 2×2 max pooling with stride 2. Odd extents are padded on the right/bottom
/// with −∞, so the output is `ceil(H/2) × ceil(W/2)`. Gradients route to the
/// first maximum in row-major window order.
pub fn maxpool2d(tape: &mut Tape, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (n, c, h, w) = xv.dims4()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let src = xv.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (y, xx) = (oy * 2 + dy, ox * 2 + dx);
                        if y >= h || xx >= w {
                            continue;
                        }
                        let idx = base + y * w + xx;
                        if best_idx == usize::MAX || src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let value = Tensor::new(&[n, c, oh, ow], out)?;
    Ok(tape.push(
        value,
        MaxPoolBackward {
            inputs: [x],
            argmax,
        },
    ))
}

struct MaxPoolBackward {
    inputs: [Var; 1],
    argmax: Vec<usize>,
}

impl Backward for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "maxpool2d"
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
        let mut dx = Tensor::zeros(tape.shape(self.inputs[0]));
        let d = dx.data_mut();
        for (g, &idx) in grad.data().iter().zip(&self.argmax) {
            d[idx] += g;
        }
        Ok(vec![Some(dx)])
    }
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2d(tape: &mut Tape, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (n, c, h, w) = xv.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let src = xv.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(plane * oh + y) * ow + xx] = src[(plane * h + y / 2) * w + xx / 2];
            }
        }
    }
    let value = Tensor::new(&[n, c, oh, ow], out)?;
    Ok(tape.push(value, UpsampleBackward { inputs: [x] }))
}

struct UpsampleBackward {
    inputs: [Var; 1],
}

impl Backward for UpsampleBackward {
    fn name(&self) -> &'static str {
        "upsample2d"
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
        let (n, c, h, w) = tape.value(self.inputs[0]).dims4()?;
        let ow = 2 * w;
        let mut dx = vec![0.0; n * c * h * w];
        for plane in 0..n * c {
            for (i, g) in grad.data()[plane * 4 * h * w..][..4 * h * w]
                .iter()
                .enumerate()
            {
                let (y, xx) = (i / ow, i % ow);
                dx[(plane * h + y / 2) * w + xx / 2] += g;
            }
        }
        Ok(vec![Some(Tensor::new(&[n, c, h, w], dx)?)])
    }
}

/// Mean over the spatial axes: `[N,C,H,W] → [N,C]`.
pub fn global_avg_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (n, c, h, w) = xv.dims4()?;
    let area = h * w;
    let out = xv
        .data()
        .chunks_exact(area)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / area as f64) as f32)
        .collect();
    let value = Tensor::new(&[n, c], out)?;
    Ok(tape.push(value, GapBackward { inputs: [x] }))
}

struct GapBackward {
    inputs: [Var; 1],
}

impl Backward for GapBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
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
        let shape = tape.shape(self.inputs[0]);
        let area = shape[2] * shape[3];
        let scale = 1.0 / area as f32;
        let dx = grad
            .data()
            .iter()
            .flat_map(|g| std::iter::repeat_n(g * scale, area))
            .collect();
        Ok(vec![Some(Tensor::new(shape, dx)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, DEFAULT_GRAD_CHECK_EPS};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pool(x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = maxpool2d(&mut tape, v).unwrap();
        tape.value(y).clone()
    }

    fn naive_pool(x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4().unwrap();
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = vec![f32::NEG_INFINITY; n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    let o = &mut out[(p * oh + y / 2) * ow + xx / 2];
                    *o = o.max(x.data()[(p * h + y) * w + xx]);
                }
            }
        }
        Tensor::new(&[n, c, oh, ow], out).unwrap()
    }

    /// 2×2 stride-2 average pool, used only as the algebraic inverse of upsampling.
    fn avg_pool(x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4().unwrap();
        let mut out = vec![0.0; n * c * (h / 2) * (w / 2)];
        for p in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * (h / 2) + y / 2) * (w / 2) + xx / 2] +=
                        x.data()[(p * h + y) * w + xx] / 4.0;
                }
            }
        }
        Tensor::new(&[n, c, h / 2, w / 2], out).unwrap()
    }

    #[test]
    fn single_window() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pool(&x).data(), &[4.0]);
    }

    #[test]
    fn constant_input_routes_gradient_to_first_element() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 4, 4], 7.0), true);
        let y = maxpool2d(&mut tape, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 7.0));
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap().data();
        let expect: Vec<f32> = (0..16)
            .map(|i| {
                if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(g, expect.as_slice());
    }

    #[test]
    fn odd_extent_pads_with_negative_infinity() {
        let x = Tensor::new(&[1, 1, 3, 3], vec![-5.0; 9]).unwrap();
        let y = pool(&x);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == -5.0));
    }

    #[test]
    fn matches_naive_window_scan_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let h = rng.gen_range(1..10);
            let w = rng.gen_range(1..10);
            let data = (0..2 * 3 * h * w)
                .map(|_| rng.gen_range(-3.0..3.0))
                .collect();
            let x = Tensor::new(&[2, 3, h, w], data).unwrap();
            assert_eq!(pool(&x), naive_pool(&x));
        }
        let data = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[1, 1, 8, 8], data).unwrap();
        assert_eq!(pool(&x), naive_pool(&x));
    }

    #[test]
    fn upsample_replicates_blocks() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let y = upsample2d(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0; 4]);

        let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = upsample2d(&mut tape, x).unwrap();
        #[rustfmt::skip]
        let expect = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(tape.value(y).data(), &expect);
        assert_eq!(&avg_pool(tape.value(y)), tape.value(x));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // distinct values spaced 0.05 apart keep every window away from ties
            let mut vals: Vec<f32> = (0..80).map(|i| i as f32 * 0.05 - 2.0).collect();
            vals.shuffle(&mut rng);
            let x = Tensor::new(&[2, 2, 5, 4], vals).unwrap();
            let probe_small: Vec<f32> = (0..2 * 2 * 3 * 2)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let probe_big: Vec<f32> = (0..2 * 2 * 10 * 8)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let probe_gap: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let weighted = |t: &mut Tape, y: Var, probe: &[f32]| {
                let r = t.constant(Tensor::new(t.shape(y), probe.to_vec()).unwrap());
                let m = t.mul(y, r)?;
                Ok(t.sum(m))
            };
            let e_pool = grad_check(
                |t, v| {
                    let y = maxpool2d(t, v)?;
                    weighted(t, y, &probe_small)
                },
                &x,
                DEFAULT_GRAD_CHECK_EPS,
            )
            .unwrap();
            let e_up = grad_check(
                |t, v| {
                    let y = upsample2d(t, v)?;
                    weighted(t, y, &probe_big)
                },
                &x,
                DEFAULT_GRAD_CHECK_EPS,
            )
            .unwrap();
            let e_gap = grad_check(
                |t, v| {
                    let y = global_avg_pool(t, v)?;
                    weighted(t, y, &probe_gap)
                },
                &x,
                DEFAULT_GRAD_CHECK_EPS,
            )
            .unwrap();
            assert!(
                e_pool < 1e-3 && e_up < 1e-3 && e_gap < 1e-3,
                "{e_pool} {e_up} {e_gap}"
            );
        }
    }
}
