use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }
}

/// Moment buffers plus hyperparameters. Update rules follow the common
/// framework conventions: Adam with bias correction and L2 weight decay
/// folded into the gradient; SGD with a momentum buffer seeded by the first
/// gradient.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Element> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            lr,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        params.require_grads()?;
        if self.first.len() != params.len() {
            self.first = vec![None; params.len()];
            self.second = vec![None; params.len()];
        }
        self.step += 1;
        let lr = self.lr;
        let wd = self.weight_decay;
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad.as_ref().ok_or_else(|| TensorError::MissingGrad(p.name.clone()))?;
            let n = p.value.numel();
            let shape = p.value.shape().to_vec();
            let effective = |j: usize, value: &[T]| grad.data()[j].as_f64() + wd * value[j].as_f64();
            match self.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    let fresh = self.first[i].is_none();
                    let buf = self.first[i].get_or_insert_with(|| Tensor::zeros(shape.clone()));
                    let value = p.value.data_mut();
                    for j in 0..n {
                        let g = effective(j, value);
                        let b = if fresh || momentum == 0.0 {
                            g
                        } else {
                            momentum * buf.data()[j].as_f64() + g
                        };
                        buf.data_mut()[j] = T::from_f64(b);
                        value[j] = T::from_f64(value[j].as_f64() - lr * b);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let t = self.step as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let m = self.first[i].get_or_insert_with(|| Tensor::zeros(shape.clone()));
                    let v = self.second[i].get_or_insert_with(|| Tensor::zeros(shape.clone()));
                    let value = p.value.data_mut();
                    for j in 0..n {
                        let g = effective(j, value);
                        let mj = beta1 * m.data()[j].as_f64() + (1.0 - beta1) * g;
                        let vj = beta2 * v.data()[j].as_f64() + (1.0 - beta2) * g * g;
                        m.data_mut()[j] = T::from_f64(mj);
                        v.data_mut()[j] = T::from_f64(vj);
                        let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
                        value[j] = T::from_f64(value[j].as_f64() - update);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: Option<f64>) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::scalar(value));
        ps.get_mut(id).grad = grad.map(Tensor::scalar);
        ps
    }

    #[test]
    fn plain_sgd_step() {
        let mut ps = single(1.0, Some(1.0));
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.0), 0.1, 0.0);
        opt.step(&mut ps).unwrap();
        assert!((ps.iter().next().unwrap().value.item() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = single(0.37, Some(0.0));
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.9), 0.5, 0.0);
        opt.step(&mut ps).unwrap();
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.iter().next().unwrap().value.item(), 0.37);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut ps = single(0.0, Some(1.0));
        let mut opt = Optimizer::new(OptimizerKind::adam(), 1e-3, 0.0);
        opt.step(&mut ps).unwrap();
        // m̂ = 1, v̂ = 1  =>  Δ = lr / (1 + eps)
        let p = ps.iter().next().unwrap().value.item();
        assert!((p + 1e-3).abs() < 1e-6, "{p}");
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut ps = single(0.0, Some(1.0));
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.9), 0.1, 0.0);
        opt.step(&mut ps).unwrap(); // buf = 1, p = -0.1
        opt.step(&mut ps).unwrap(); // buf = 1.9, p = -0.29
        assert!((ps.iter().next().unwrap().value.item() + 0.29).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_enters_gradient() {
        let mut ps = single(2.0, Some(0.0));
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.0), 0.1, 5e-4);
        opt.step(&mut ps).unwrap();
        assert!((ps.iter().next().unwrap().value.item() - (2.0 - 0.1 * 1e-3)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut ps = single(1.0, None);
        let mut opt = Optimizer::<f64>::new(OptimizerKind::adam(), 1e-3, 0.0);
        assert!(matches!(opt.step(&mut ps), Err(TensorError::MissingGrad(_))));
    }
}
