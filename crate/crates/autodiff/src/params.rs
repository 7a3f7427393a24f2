use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Ordered registry of named trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Element> {
    params: Vec<Param<T>>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Scales every present gradient, used to average over a batch.
    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                for v in g.data_mut() {
                    *v = *v * factor;
                }
            }
        }
    }

    /// Records every parameter as a gradient-carrying leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect(),
        }
    }

    /// Records every parameter as a constant, for inference without
    /// gradients.
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect(),
        }
    }

    /// Adds the gradients from one backward pass. Bound parameters that the
    /// root does not depend on receive an explicit zero.
    pub fn accumulate(&mut self, bound: &Bound, grads: &mut Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
            match p.grad.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => p.grad = Some(g),
            }
        }
    }

    pub fn require_grads(&self) -> Result<()> {
        match self.params.iter().find(|p| p.grad.is_none()) {
            Some(p) => Err(TensorError::MissingGrad(p.name.clone())),
            None => Ok(()),
        }
    }
}

/// Tape handles for a [`ParamSet`], index-aligned with it.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles supplied by the caller, one per parameter in registry order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_accumulate_round_trip() {
        let mut ps = ParamSet::<f64>::new();
        let a = ps.add("a", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = ps.add("b", Tensor::scalar(5.0));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let x = bound.var(a);
            let sq = tape.mul(x, x).unwrap();
            let s = tape.sum(sq).unwrap();
            let mut g = tape.backward(s).unwrap();
            ps.accumulate(&bound, &mut g);
        }
        assert_eq!(ps.get(a).grad.as_ref().unwrap().data(), &[4.0, 8.0]);
        // unused parameter gets an explicit zero
        assert_eq!(ps.get(b).grad.as_ref().unwrap().data(), &[0.0]);
        ps.scale_grads(0.5);
        assert_eq!(ps.get(a).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn missing_grad_is_reported() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::scalar(1.0));
        assert_eq!(ps.require_grads().unwrap_err(), TensorError::MissingGrad("w".into()));
    }
}
