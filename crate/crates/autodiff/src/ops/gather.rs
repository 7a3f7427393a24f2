use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

/// Sparse row-mixing plan in compressed-row form: output row `m` is
/// `Σ weights[j] · src[indices[j]]` for `j in offsets[m]..offsets[m+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMix<T> {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Element> Default for RowMix<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> RowMix<T> {
    pub fn new() -> Self {
        RowMix {
            offsets: vec![0],
            indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Plan selecting one source row per output row with weight 1.
    pub fn select(indices: &[usize]) -> Self {
        let mut mix = Self::new();
        for &i in indices {
            mix.push_row([(i, T::one())]);
        }
        mix
    }

    pub fn push_row(&mut self, terms: impl IntoIterator<Item = (usize, T)>) {
        for (i, w) in terms {
            self.indices.push(i);
            self.weights.push(w);
        }
        self.offsets.push(self.indices.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, m: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.offsets[m]..self.offsets[m + 1];
        self.indices[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }

    /// Applies the plan to a row-major `[R×C]` buffer.
    pub fn apply(&self, src: &[T], cols: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows() * cols];
        for (m, dst) in out.chunks_mut(cols).enumerate() {
            for (i, w) in self.row(m) {
                let s = &src[i * cols..(i + 1) * cols];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d = *d + w * v;
                }
            }
        }
        out
    }
}

struct GatherRows<T> {
    mix: RowMix<T>,
}

impl<T: Element> BackwardOp<T> for GatherRows<T> {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let src = inputs[0];
        let cols = src.shape()[1];
        let mut g = vec![T::zero(); src.numel()];
        for (m, gm) in grad.data().chunks(cols).enumerate() {
            for (i, w) in self.mix.row(m) {
                let dst = &mut g[i * cols..(i + 1) * cols];
                for (d, &v) in dst.iter_mut().zip(gm) {
                    *d = *d + w * v;
                }
            }
        }
        vec![Some(Tensor::new(src.shape().to_vec(), g).unwrap())]
    }
}

impl<T: Element> Tape<T> {
    /// Weighted row gather from a `[R×C]` source; rows with no terms are zero.
    pub fn gather_rows(&mut self, src: Var, mix: RowMix<T>) -> Result<Var> {
        let sv = self.get(src)?;
        if sv.rank() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: format!("source must be rank 2, got {:?}", sv.shape()),
            });
        }
        let (rows, cols) = (sv.shape()[0], sv.shape()[1]);
        if let Some(max) = mix.max_index() {
            if max >= rows {
                return Err(TensorError::InvalidArgument {
                    op: "gather_rows",
                    msg: format!("row {max} out of range for {rows} rows"),
                });
            }
        }
        if mix.rows() == 0 {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: "empty plan".into(),
            });
        }
        let v = Tensor::new(vec![mix.rows(), cols], mix.apply(sv.data(), cols))?;
        self.record(v, &[src], GatherRows { mix })
    }
}
