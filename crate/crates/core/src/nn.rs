//! Fully connected building blocks registered in a [`ParamSet`].

use autodiff::{Bound, Element, ParamId, ParamSet, Rng, Tape, Tensor, Var};

use crate::Result;

/// Uniform `±1/√fan_in` initialization.
pub fn init_uniform<T: Element>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    rng.uniform_tensor(shape, 1.0 / (fan_in as f64).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Element>(params: &mut ParamSet<T>, rng: &mut Rng, name: &str, input: usize, output: usize) -> Self {
        let weight = params.add(format!("{name}.weight"), init_uniform(rng, &[input, output], input));
        let bias = params.add(format!("{name}.bias"), init_uniform(rng, &[output], input));
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        Ok(tape.linear(x, bound.var(self.weight), bound.var(self.bias))?)
    }

    pub fn num_scalars(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Stack of linear layers with relu between consecutive layers and no
/// activation on the output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first and output last.
    pub fn new<T: Element>(params: &mut ParamSet<T>, rng: &mut Rng, name: &str, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = tape.relu(x)?;
            }
            x = layer.forward(tape, bound, x)?;
        }
        Ok(x)
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(Linear::num_scalars).sum()
    }
}

/// Scalar count of an MLP with the given layer boundaries.
pub fn mlp_scalars(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
