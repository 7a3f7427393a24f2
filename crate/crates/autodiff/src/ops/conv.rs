use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Patch matrix `[C·kh·kw × H'·W']`, zero outside the padded input.
    fn im2col<T: Element>(&self, input: &[T]) -> Vec<T> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let mut cols = vec![T::zero(); self.patch() * oh * ow];
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let src = &input[(c * self.height + iy as usize) * self.width..];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Element>(&self, cols: &[T]) -> Vec<T> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let mut out = vec![T::zero(); self.channels * self.height * self.width];
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let base = (c * self.height + iy as usize) * self.width;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                out[base + ix as usize] = out[base + ix as usize] + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

struct Conv2d {
    geom: Conv2dGeometry,
    has_bias: bool,
}

impl<T: Element> BackwardOp<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let (input, kernel) = (inputs[0], inputs[1]);
        let spatial = g.out_height() * g.out_width();
        let patch = g.patch();
        let cols = g.im2col(input.data());

        // dK = G · colsᵀ
        let mut gk = vec![T::zero(); g.out_channels * patch];
        T::gemm(g.out_channels, spatial, patch, grad.data(), false, &cols, true, T::zero(), &mut gk);
        // dcols = Kᵀ · G
        let mut gcols = vec![T::zero(); patch * spatial];
        T::gemm(patch, g.out_channels, spatial, kernel.data(), true, grad.data(), false, T::zero(), &mut gcols);
        let gi = g.col2im(&gcols);

        let mut out = vec![
            Some(Tensor::new(input.shape().to_vec(), gi).unwrap()),
            Some(Tensor::new(kernel.shape().to_vec(), gk).unwrap()),
        ];
        if self.has_bias {
            let gb = grad.data().chunks(spatial).map(|row| row.iter().copied().sum()).collect();
            out.push(Some(Tensor::new(vec![g.out_channels], gb).unwrap()));
        }
        out
    }
}

impl<T: Element> Tape<T> {
    /// Direct 2-D convolution of a `[C×H×W]` input with a `[O×C×kh×kw]`
    /// kernel and optional `[O]` bias, zero padding `pad` on every side.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (iv, kv) = (self.get(input)?, self.get(kernel)?);
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: iv.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        };
        if iv.rank() != 3 || kv.rank() != 4 || kv.shape()[1] != iv.shape()[0] {
            return Err(mismatch());
        }
        let (kh, kw) = (kv.shape()[2], kv.shape()[3]);
        if kh % 2 == 0 || kw % 2 == 0 || stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} must be odd and stride positive"),
            });
        }
        let geom = Conv2dGeometry {
            channels: iv.shape()[0],
            height: iv.shape()[1],
            width: iv.shape()[2],
            out_channels: kv.shape()[0],
            kh,
            kw,
            stride,
            pad,
        };
        if geom.height + 2 * pad < kh || geom.width + 2 * pad < kw {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: "output extent < 1".into(),
            });
        }
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let spatial = oh * ow;
        let cols = geom.im2col(iv.data());
        let mut out = vec![T::zero(); geom.out_channels * spatial];
        T::gemm(geom.out_channels, geom.patch(), spatial, kv.data(), false, &cols, false, T::zero(), &mut out);
        let mut parents = vec![input, kernel];
        if let Some(b) = bias {
            let bv = self.get(b)?;
            if bv.shape() != [geom.out_channels] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    lhs: vec![geom.out_channels],
                    rhs: bv.shape().to_vec(),
                });
            }
            for (row, &bias) in out.chunks_mut(spatial).zip(bv.data()) {
                for v in row {
                    *v = *v + bias;
                }
            }
            parents.push(b);
        }
        let v = Tensor::new(vec![geom.out_channels, oh, ow], out)?;
        self.record(
            v,
            &parents,
            Conv2d {
                geom,
                has_bias: bias.is_some(),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(input: &Tensor<f64>, kernel: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (o, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![o, oh, ow]);
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += input.get(&[ic, iy as usize, ix as usize]) * kernel.get(&[oc, ic, ky, kx]);
                                }
                            }
                        }
                    }
                    let idx = out.flat_index(&[oc, oy, ox]);
                    out.data_mut()[idx] = acc;
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = Rng::new(3);
        let x = random(&[1, 5, 4], &mut rng);
        let mut t = Tape::<f64>::new();
        let xi = t.constant(x.clone());
        let k = t.constant(Tensor::ones(vec![1, 1, 1, 1]));
        let y = t.conv2d(xi, k, None, 1, 0).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = Rng::new(4);
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros(vec![2, 6, 6]));
        let k = t.constant(random(&[3, 2, 3, 3], &mut rng));
        let y = t.conv2d(x, k, None, 2, 1).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = Rng::new(5);
        for &(c, h, w, o, stride, pad) in &[(1, 8, 8, 2, 1, 1), (3, 7, 9, 4, 2, 1), (2, 5, 5, 1, 1, 0), (2, 8, 8, 3, 2, 2)] {
            let x = random(&[c, h, w], &mut rng);
            let k = random(&[o, c, 3, 3], &mut rng);
            let mut t = Tape::<f64>::new();
            let xi = t.constant(x.clone());
            let ki = t.constant(k.clone());
            let y = t.conv2d(xi, ki, None, stride, pad).unwrap();
            let expected = naive(&x, &k, stride, pad);
            assert_eq!(t.value(y).shape(), expected.shape());
            assert!(t.value(y).max_abs_diff(&expected) < 1e-12);
        }
    }

    #[test]
    fn output_shape_formula() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros(vec![1, 64, 64]));
        let k = t.constant(Tensor::zeros(vec![4, 1, 3, 3]));
        let y = t.conv2d(x, k, None, 2, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[4, 32, 32]);
    }

    #[test]
    fn too_small_input_is_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros(vec![1, 1, 1]));
        let k = t.constant(Tensor::zeros(vec![1, 1, 5, 5]));
        assert!(t.conv2d(x, k, None, 1, 0).is_err());
    }
}
