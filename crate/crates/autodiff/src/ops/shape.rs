use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

/// `(outer, axis, inner)` extents of `shape` split around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

fn narrow_data<T: Element>(t: &Tensor<T>, axis: usize, start: usize, len: usize) -> Vec<T> {
    let (outer, extent, inner) = split(t.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * extent * inner;
        out.extend_from_slice(&t.data()[base + start * inner..base + (start + len) * inner]);
    }
    out
}

struct Concat {
    axis: usize,
}

impl<T: Element> BackwardOp<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut start = 0;
        inputs
            .iter()
            .map(|x| {
                let len = x.shape()[self.axis];
                let g = narrow_data(grad, self.axis, start, len);
                start += len;
                Some(Tensor::new(x.shape().to_vec(), g).unwrap())
            })
            .collect()
    }
}

struct Narrow {
    axis: usize,
    start: usize,
}

impl<T: Element> BackwardOp<T> for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let (outer, extent, inner) = split(x.shape(), self.axis);
        let len = grad.shape()[self.axis];
        let mut g = vec![T::zero(); x.numel()];
        for o in 0..outer {
            let src = &grad.data()[o * len * inner..(o + 1) * len * inner];
            let base = o * extent * inner + self.start * inner;
            g[base..base + len * inner].copy_from_slice(src);
        }
        vec![Some(Tensor::new(x.shape().to_vec(), g).unwrap())]
    }
}

struct Reshape;

impl<T: Element> BackwardOp<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), grad.data().to_vec()).unwrap())]
    }
}

fn transpose_data<T: Element>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

struct Transpose;

impl<T: Element> BackwardOp<T> for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (r, c) = (inputs[0].shape()[0], inputs[0].shape()[1]);
        vec![Some(Tensor::new(vec![r, c], transpose_data(grad.data(), c, r)).unwrap())]
    }
}

struct SumAll;

impl<T: Element> BackwardOp<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(inputs[0].shape().to_vec(), grad.item()))]
    }
}

struct ReduceAxis<T> {
    axis: usize,
    /// 1 for sum, 1/extent for mean.
    factor: T,
}

impl<T: Element> BackwardOp<T> for ReduceAxis<T> {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let (outer, extent, inner) = split(x.shape(), self.axis);
        let gd = grad.data();
        let mut g = vec![T::zero(); x.numel()];
        for o in 0..outer {
            for a in 0..extent {
                for i in 0..inner {
                    g[(o * extent + a) * inner + i] = gd[o * inner + i] * self.factor;
                }
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), g).unwrap())]
    }
}

impl<T: Element> Tape<T> {
    /// Order-preserving concatenation along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: "no inputs".into(),
            });
        };
        let ref_shape = self.get(first)?.shape().to_vec();
        check_axis("concat", &ref_shape, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.get(p)?.shape();
            let compatible = s.len() == ref_shape.len()
                && s.iter().zip(&ref_shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: ref_shape,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = ref_shape.clone();
        shape[axis] = total;
        let (outer, _, inner) = split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.get(p)?;
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(shape, out)?;
        self.record(v, parts, Concat { axis })
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.get(x)?;
        check_axis("narrow", xv.shape(), axis)?;
        if len == 0 || start + len > xv.shape()[axis] {
            return Err(TensorError::InvalidArgument {
                op: "narrow",
                msg: format!("range {start}..{} exceeds extent {}", start + len, xv.shape()[axis]),
            });
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(shape, narrow_data(xv, axis, start, len))?;
        self.record(v, &[x], Narrow { axis, start })
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.get(x)?.clone().reshape(shape)?;
        self.record(v, &[x], Reshape)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.get(x)?;
        if xv.rank() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose",
                msg: format!("expected rank 2, got {:?}", xv.shape()),
            });
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let v = Tensor::new(vec![c, r], transpose_data(xv.data(), r, c))?;
        self.record(v, &[x], Transpose)
    }

    /// Sum of all elements, rank-0 result.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.get(x)?.sum());
        self.record(v, &[x], SumAll)
    }

    /// Mean of all elements, rank-0 result.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.get(x)?.numel();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::from_usize(n))
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let xv = self.get(x)?;
        check_axis(if mean { "reduce_mean" } else { "reduce_sum" }, xv.shape(), axis)?;
        let (outer, extent, inner) = split(xv.shape(), axis);
        let factor = if mean {
            T::one() / T::from_usize(extent)
        } else {
            T::one()
        };
        let d = xv.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + d[(o * extent + a) * inner + i];
                }
            }
        }
        if mean {
            for v in out.iter_mut() {
                *v = *v * factor;
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        self.record(v, &[x], ReduceAxis { axis, factor })
    }

    /// Arithmetic mean along `axis`, which is removed from the shape.
    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }
}
