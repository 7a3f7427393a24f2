use crate::branches;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::fault;
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Tanh,
    Exp,
    Sin,
    Cos,
    Relu,
    Neg,
    Log,
}

impl UnaryFn {
    fn name(self) -> &'static str {
        match self {
            UnaryFn::Tanh => "tanh",
            UnaryFn::Exp => "exp",
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Relu => "relu",
            UnaryFn::Neg => "neg",
            UnaryFn::Log => "log",
        }
    }

    fn apply<T: Element>(self, x: T) -> T {
        match self {
            UnaryFn::Tanh => x.tanh(),
            UnaryFn::Exp => x.exp(),
            UnaryFn::Sin => x.sin(),
            UnaryFn::Cos => x.cos(),
            UnaryFn::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryFn::Neg => -x,
            UnaryFn::Log => x.ln(),
        }
    }

    fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            UnaryFn::Tanh => {
                let d = T::one() - y * y;
                if fault::tanh_backward_flipped() {
                    -d
                } else {
                    d
                }
            }
            UnaryFn::Exp => y,
            UnaryFn::Sin => x.cos(),
            UnaryFn::Cos => -x.sin(),
            UnaryFn::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            UnaryFn::Neg => -T::one(),
            UnaryFn::Log => T::one() / x,
        }
    }
}

struct Unary(UnaryFn);

impl<T: Element> BackwardOp<T> for Unary {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0].data();
        let y = output.data();
        let g: Vec<T> = grad
            .data()
            .iter()
            .enumerate()
            .map(|(i, &g)| g * self.0.derivative(x[i], y[i]))
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), g).unwrap())]
    }
}

struct Affine<T> {
    scale: T,
}

impl<T: Element> BackwardOp<T> for Affine<T> {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.map(|g| g * self.scale))]
    }
}

/// Piecewise op with one gradient factor per element: 1 on the identity
/// piece, 0 on a constant piece.
struct Piecewise {
    name: &'static str,
    pass: Vec<bool>,
}

impl<T: Element> BackwardOp<T> for Piecewise {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = grad
            .data()
            .iter()
            .zip(&self.pass)
            .map(|(&g, &p)| if p { g } else { T::zero() })
            .collect();
        vec![Some(Tensor::new(grad.shape().to_vec(), g).unwrap())]
    }
}

struct StopGrad;

impl<T: Element> BackwardOp<T> for StopGrad {
    fn name(&self) -> &'static str {
        "stop_grad"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, _: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![None]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryFn {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryFn {
    fn name(self) -> &'static str {
        match self {
            BinaryFn::Add => "add",
            BinaryFn::Sub => "sub",
            BinaryFn::Mul => "mul",
            BinaryFn::Div => "div",
        }
    }
}

struct Binary(BinaryFn);

impl<T: Element> BackwardOp<T> for Binary {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let ia = operand_index(output.shape(), a.shape());
        let ib = operand_index(output.shape(), b.shape());
        let (ad, bd) = (a.data(), b.data());
        let mut ga = vec![T::zero(); a.numel()];
        let mut gb = vec![T::zero(); b.numel()];
        for (i, &g) in grad.data().iter().enumerate() {
            let (ia, ib) = (ia.at(i), ib.at(i));
            let (da, db) = match self.0 {
                BinaryFn::Add => (g, g),
                BinaryFn::Sub => (g, -g),
                BinaryFn::Mul => (g * bd[ib], g * ad[ia]),
                BinaryFn::Div => {
                    let inv = T::one() / bd[ib];
                    (g * inv, -g * ad[ia] * inv * inv)
                }
            };
            ga[ia] = ga[ia] + da;
            gb[ib] = gb[ib] + db;
        }
        vec![
            Some(Tensor::new(a.shape().to_vec(), ga).unwrap()),
            Some(Tensor::new(b.shape().to_vec(), gb).unwrap()),
        ]
    }
}

/// Maps output flat indices to an operand's flat indices.
enum OperandIndex {
    /// Operand shape is a suffix of the output shape: index modulo length.
    Cyclic(usize),
    Table(Vec<usize>),
}

impl OperandIndex {
    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            OperandIndex::Cyclic(n) => i % n,
            OperandIndex::Table(t) => t[i],
        }
    }
}

fn operand_index(out: &[usize], operand: &[usize]) -> OperandIndex {
    let n: usize = operand.iter().product();
    if out[out.len() - operand.len()..] == *operand {
        return OperandIndex::Cyclic(n);
    }
    let offset = out.len() - operand.len();
    let op_strides = crate::tensor::strides(operand);
    let total: usize = out.iter().product();
    let mut table = Vec::with_capacity(total);
    let mut idx = vec![0usize; out.len()];
    for _ in 0..total {
        let mut flat = 0;
        for (d, &extent) in operand.iter().enumerate() {
            if extent != 1 {
                flat += idx[offset + d] * op_strides[d];
            }
        }
        table.push(flat);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    OperandIndex::Table(table)
}

/// Output shape under trailing-dimension alignment: dimensions are
/// compared from the right and must be equal or 1; missing leading
/// dimensions are taken from the longer shape.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < a.len() { a[a.len() - 1 - i] } else { 1 };
        let db = if i < b.len() { b[b.len() - 1 - i] } else { 1 };
        out[rank - 1 - i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

impl<T: Element> Tape<T> {
    pub fn unary(&mut self, x: Var, f: UnaryFn) -> Result<Var> {
        let v = self.get(x)?.map(|v| f.apply(v));
        self.record(v, &[x], Unary(f))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryFn::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryFn::Exp)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryFn::Sin)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryFn::Cos)
    }

    /// Rectifier; the piece of each element follows [`branches`].
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.get(x)?;
        let d = xv.data();
        let b = branches::choose("relu", d.len(), |i| (d[i] > T::zero()) as u8)?;
        let y: Vec<T> = d.iter().zip(&b).map(|(&v, &b)| if b == 1 { v } else { T::zero() }).collect();
        let y = Tensor::new(xv.shape().to_vec(), y)?;
        let pass = b.iter().map(|&b| b == 1).collect();
        self.record(y, &[x], Piecewise { name: "relu", pass })
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryFn::Neg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryFn::Log)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let v = self.get(x)?.map(|v| scale * v + shift);
        self.record(v, &[x], Affine { scale })
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    /// Componentwise clamp; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let xv = self.get(x)?;
        let d = xv.data();
        let b = branches::choose("clamp", d.len(), |i| {
            if d[i] < lo {
                0
            } else if d[i] > hi {
                2
            } else {
                1
            }
        })?;
        let y: Vec<T> = d
            .iter()
            .zip(&b)
            .map(|(&v, &b)| match b {
                0 => lo,
                1 => v,
                _ => hi,
            })
            .collect();
        let y = Tensor::new(xv.shape().to_vec(), y)?;
        let pass = b.iter().map(|&b| b == 1).collect();
        self.record(y, &[x], Piecewise { name: "clamp", pass })
    }

    /// Identity forward; contributes nothing to any ancestor in backward.
    pub fn stop_grad(&mut self, x: Var) -> Result<Var> {
        let v = self.get(x)?.clone();
        self.record(v, &[x], StopGrad)
    }

    pub fn binary(&mut self, a: Var, b: Var, f: BinaryFn) -> Result<Var> {
        let (av, bv) = (self.get(a)?, self.get(b)?);
        let shape = broadcast_shape(f.name(), av.shape(), bv.shape())?;
        let (ad, bd) = (av.data(), bv.data());
        if f == BinaryFn::Div {
            if let Some(index) = bd.iter().position(|v| v.is_zero()) {
                return Err(TensorError::DivByZero { index });
            }
        }
        let ia = operand_index(&shape, av.shape());
        let ib = operand_index(&shape, bv.shape());
        let n: usize = shape.iter().product();
        let out: Vec<T> = (0..n)
            .map(|i| {
                let (x, y) = (ad[ia.at(i)], bd[ib.at(i)]);
                match f {
                    BinaryFn::Add => x + y,
                    BinaryFn::Sub => x - y,
                    BinaryFn::Mul => x * y,
                    BinaryFn::Div => x / y,
                }
            })
            .collect();
        let v = Tensor::new(shape, out)?;
        self.record(v, &[a, b], Binary(f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryFn::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryFn::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryFn::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryFn::Div)
    }
}
