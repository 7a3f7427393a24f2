use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

struct Matmul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Element> BackwardOp<T> for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b) = (inputs[0], inputs[1]);
        // dA = G · Bᵀ, dB = Aᵀ · G
        let mut ga = vec![T::zero(); m * k];
        T::gemm(m, n, k, grad.data(), false, b.data(), true, T::zero(), &mut ga);
        let mut gb = vec![T::zero(); k * n];
        T::gemm(k, m, n, a.data(), true, grad.data(), false, T::zero(), &mut gb);
        vec![
            Some(Tensor::new(vec![m, k], ga).unwrap()),
            Some(Tensor::new(vec![k, n], gb).unwrap()),
        ]
    }
}

impl<T: Element> Tape<T> {
    /// `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.get(a)?, self.get(b)?);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, av.data(), false, bv.data(), false, T::zero(), &mut out);
        let v = Tensor::new(vec![m, n], out)?;
        self.record(v, &[a, b], Matmul { m, k, n })
    }

    /// Fully connected layer `x · w + b` with `w: [in×out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }
}
