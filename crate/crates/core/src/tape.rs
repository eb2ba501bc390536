//! Reverse-mode differentiation over an append-only tape.
//!
//! A [`Tape`] is built for one forward pass. Every call to [`Tape::apply`]
//! evaluates a [`Primitive`] eagerly, records the result together with its
//! input handles, and returns a [`Var`]. [`Tape::backward`] walks the nodes
//! once in reverse append order.
//!
//! Broadcasting is limited to [`Primitive::AddRow`] (vector added to each
//! matrix row); scalars are spread explicitly with [`Primitive::Gather`].

use std::fmt;

use crate::entmax::{self, SimplexVector};
use crate::error::{MesinError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    MatMul,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Concatenate vectors.
    Concat,
    /// Pick entries of the flattened input; indices may repeat.
    Gather(Vec<usize>),
    /// Sum of all entries, as a length-one vector.
    Sum,
    Tanh,
    Sigmoid,
    Relu,
    Log,
    /// `scale * x + shift`, elementwise.
    Affine { scale: f64, shift: f64 },
    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    Clamp { lo: f64, hi: f64 },
    /// Matrix `[r,c]` plus vector `[c]` added to every row.
    AddRow,
    Transpose,
    /// Stack equal-length vectors as the rows of a matrix.
    Stack,
    /// Multiply by a fixed mask (already scaled by `1 / keep`).
    Dropout { mask: Vec<f64> },
    Softmax,
    Entmax { gamma: f64 },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "hadamard",
            Primitive::Concat => "concat",
            Primitive::Gather(_) => "gather",
            Primitive::Sum => "sum",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::Log => "log",
            Primitive::Affine { .. } => "affine",
            Primitive::Clamp { .. } => "clamp",
            Primitive::AddRow => "add_row",
            Primitive::Transpose => "transpose",
            Primitive::Stack => "stack",
            Primitive::Dropout { .. } => "dropout",
            Primitive::Softmax => "softmax",
            Primitive::Entmax { .. } => "entmax",
        }
    }
}

/// User-defined operation with its own backward rule.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradient with respect to each input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, upstream: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Constant,
    Parameter,
    Prim(Primitive),
    Custom(Box<dyn CustomOp>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Constant => write!(f, "constant"),
            Op::Parameter => write!(f, "parameter"),
            Op::Prim(p) => write!(f, "{}", p.name()),
            Op::Custom(c) => write!(f, "custom:{}", c.name()),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    parameters: Vec<Var>,
}

impl Gradients {
    /// Gradient with respect to any node; zeros if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// `(parameter handle, gradient)` for every parameter registered on the tape.
    pub fn parameters(&self) -> impl Iterator<Item = (Var, Tensor)> + '_ {
        self.parameters.iter().map(|&v| (v, self.wrt(v)))
    }
}

fn shape_err(op: &'static str, detail: String) -> MesinError {
    MesinError::shape(op, detail)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, Vec::new())
    }

    /// A trainable leaf; its gradient is reported by [`Gradients::parameters`].
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Parameter, Vec::new())
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Var {
        self.nodes.push(Node { value, op, inputs });
        Var(self.nodes.len() - 1)
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(&prim, &values)?;
        if !out.is_finite() {
            return Err(MesinError::NumericFailure {
                op: prim.name().to_string(),
            });
        }
        Ok(self.push(out, Op::Prim(prim), inputs.to_vec()))
    }

    pub fn apply_custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = op.forward(&values)?;
        if !out.is_finite() {
            return Err(MesinError::NumericFailure {
                op: op.name().to_string(),
            });
        }
        Ok(self.push(out, Op::Custom(op), inputs.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn gather(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Gather(indices), &[x])
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.gather(x, (start..start + len).collect())
    }

    /// Repeat a length-one tensor `n` times.
    pub fn broadcast_scalar(&mut self, x: Var, n: usize) -> Result<Var> {
        self.gather(x, vec![0; n])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[x])
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.apply(Primitive::Affine { scale, shift }, &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Primitive::Clamp { lo, hi }, &[x])
    }

    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        self.apply(Primitive::AddRow, &[m, v])
    }

    pub fn transpose(&mut self, m: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[m])
    }

    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        self.apply(Primitive::Stack, rows)
    }

    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        self.apply(Primitive::Dropout { mask }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn entmax(&mut self, x: Var, gamma: f64) -> Result<Var> {
        self.apply(Primitive::Entmax { gamma }, &[x])
    }

    /// `W x + b` for a matrix `W` and vectors `x`, `b`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    /// Gradients of a scalar `loss` with respect to every node before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(MesinError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));

        for idx in (0..n).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let input_grads = match &node.op {
                Op::Constant | Op::Parameter => {
                    grads[idx] = Some(upstream);
                    continue;
                }
                Op::Prim(prim) => {
                    let inputs: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    backward_rule(prim, &inputs, &node.value, &upstream)
                }
                Op::Custom(op) => {
                    let inputs: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    op.backward(&inputs, &node.value, &upstream)
                }
            };
            for (input, g) in node.inputs.iter().zip(input_grads) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(upstream);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let parameters = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Parameter))
            .map(|(i, _)| Var(i))
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            parameters,
        })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(
            op,
            format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
        ))
    }
}

fn arity(prim: &Primitive, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() == n {
        Ok(())
    } else {
        Err(shape_err(
            prim.name(),
            format!("expected {n} inputs, got {}", inputs.len()),
        ))
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn forward(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let name = prim.name();
    match prim {
        Primitive::MatMul => {
            arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if !a.is_matrix() {
                return Err(shape_err(name, format!("left operand {:?} is not a matrix", a.shape())));
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            if b.shape()[0] != k || b.rank() > 2 {
                return Err(shape_err(
                    name,
                    format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
                ));
            }
            let ad = a.data();
            let bd = b.data();
            if b.is_vector() {
                let out = (0..m)
                    .map(|i| {
                        let row = &ad[i * k..(i + 1) * k];
                        row.iter().zip(bd).map(|(x, y)| x * y).sum()
                    })
                    .collect();
                Ok(Tensor::from_parts(vec![m], out))
            } else {
                let n = b.shape()[1];
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = ad[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &bd[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
                Ok(Tensor::from_parts(vec![m, n], out))
            }
        }
        Primitive::Add => {
            arity(prim, inputs, 2)?;
            same_shape(name, inputs[0], inputs[1])?;
            Ok(zip_map(inputs[0], inputs[1], |x, y| x + y))
        }
        Primitive::Sub => {
            arity(prim, inputs, 2)?;
            same_shape(name, inputs[0], inputs[1])?;
            Ok(zip_map(inputs[0], inputs[1], |x, y| x - y))
        }
        Primitive::Mul => {
            arity(prim, inputs, 2)?;
            same_shape(name, inputs[0], inputs[1])?;
            Ok(zip_map(inputs[0], inputs[1], |x, y| x * y))
        }
        Primitive::Concat => {
            if inputs.is_empty() {
                return Err(shape_err(name, "no inputs".into()));
            }
            if let Some(bad) = inputs.iter().find(|t| !t.is_vector()) {
                return Err(shape_err(name, format!("operand {:?} is not a vector", bad.shape())));
            }
            let data: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
            Ok(Tensor::from_parts(vec![data.len()], data))
        }
        Primitive::Gather(idx) => {
            arity(prim, inputs, 1)?;
            let x = inputs[0];
            if idx.is_empty() {
                return Err(shape_err(name, "empty index list".into()));
            }
            if let Some(bad) = idx.iter().find(|&&i| i >= x.len()) {
                return Err(shape_err(
                    name,
                    format!("index {bad} out of range for {:?}", x.shape()),
                ));
            }
            let d = x.data();
            Ok(Tensor::from_parts(vec![idx.len()], idx.iter().map(|&i| d[i]).collect()))
        }
        Primitive::Sum => {
            arity(prim, inputs, 1)?;
            Ok(Tensor::from_parts(vec![1], vec![inputs[0].data().iter().sum()]))
        }
        Primitive::Tanh => {
            arity(prim, inputs, 1)?;
            Ok(map(inputs[0], f64::tanh))
        }
        Primitive::Sigmoid => {
            arity(prim, inputs, 1)?;
            Ok(map(inputs[0], sigmoid))
        }
        Primitive::Relu => {
            arity(prim, inputs, 1)?;
            Ok(map(inputs[0], |v| v.max(0.0)))
        }
        Primitive::Log => {
            arity(prim, inputs, 1)?;
            Ok(map(inputs[0], f64::ln))
        }
        Primitive::Affine { scale, shift } => {
            arity(prim, inputs, 1)?;
            Ok(map(inputs[0], |v| scale * v + shift))
        }
        Primitive::Clamp { lo, hi } => {
            arity(prim, inputs, 1)?;
            Ok(map(inputs[0], |v| v.clamp(*lo, *hi)))
        }
        Primitive::AddRow => {
            arity(prim, inputs, 2)?;
            let (m, v) = (inputs[0], inputs[1]);
            if !m.is_matrix() || !v.is_vector() || m.shape()[1] != v.len() {
                return Err(shape_err(
                    name,
                    format!("cannot add row {:?} to matrix {:?}", v.shape(), m.shape()),
                ));
            }
            let c = v.len();
            let vd = v.data();
            let data = m
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + vd[i % c])
                .collect();
            Ok(Tensor::from_parts(m.shape().to_vec(), data))
        }
        Primitive::Transpose => {
            arity(prim, inputs, 1)?;
            let m = inputs[0];
            if !m.is_matrix() {
                return Err(shape_err(name, format!("operand {:?} is not a matrix", m.shape())));
            }
            Ok(transpose(m))
        }
        Primitive::Stack => {
            if inputs.is_empty() {
                return Err(shape_err(name, "no rows".into()));
            }
            let c = inputs[0].len();
            if let Some(bad) = inputs.iter().find(|t| !t.is_vector() || t.len() != c) {
                return Err(shape_err(
                    name,
                    format!("row {:?} does not match length {c}", bad.shape()),
                ));
            }
            let data: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
            Ok(Tensor::from_parts(vec![inputs.len(), c], data))
        }
        Primitive::Dropout { mask } => {
            arity(prim, inputs, 1)?;
            let x = inputs[0];
            if mask.len() != x.len() {
                return Err(shape_err(
                    name,
                    format!("mask length {} for input {:?}", mask.len(), x.shape()),
                ));
            }
            Ok(Tensor::from_parts(
                x.shape().to_vec(),
                x.data().iter().zip(mask).map(|(a, m)| a * m).collect(),
            ))
        }
        Primitive::Softmax => {
            arity(prim, inputs, 1)?;
            let x = vector_input(name, inputs[0])?;
            let p = entmax::softmax(x)?;
            Ok(Tensor::from_parts(vec![p.len()], p.into_inner()))
        }
        Primitive::Entmax { gamma } => {
            arity(prim, inputs, 1)?;
            let x = vector_input(name, inputs[0])?;
            let p = entmax::alpha_entmax(x, *gamma)?;
            Ok(Tensor::from_parts(vec![p.len()], p.into_inner()))
        }
    }
}

fn vector_input<'a>(name: &'static str, t: &'a Tensor) -> Result<&'a [f64]> {
    if t.is_vector() {
        Ok(t.data())
    } else {
        Err(shape_err(name, format!("operand {:?} is not a vector", t.shape())))
    }
}

fn transpose(m: &Tensor) -> Tensor {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let d = m.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], out)
}

fn backward_rule(prim: &Primitive, inputs: &[&Tensor], out: &Tensor, g: &Tensor) -> Vec<Tensor> {
    match prim {
        Primitive::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let ad = a.data();
            let bd = b.data();
            let gd = g.data();
            if b.is_vector() {
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k];
                for i in 0..m {
                    let gi = gd[i];
                    let row = &ad[i * k..(i + 1) * k];
                    let grow = &mut ga[i * k..(i + 1) * k];
                    for j in 0..k {
                        grow[j] = gi * bd[j];
                        gb[j] += row[j] * gi;
                    }
                }
                vec![
                    Tensor::from_parts(vec![m, k], ga),
                    Tensor::from_parts(vec![k], gb),
                ]
            } else {
                let n = b.shape()[1];
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let av = ad[i * k + p];
                        let gbrow = &mut gb[p * n..(p + 1) * n];
                        for (o, gv) in gbrow.iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
                vec![
                    Tensor::from_parts(vec![m, k], ga),
                    Tensor::from_parts(vec![k, n], gb),
                ]
            }
        }
        Primitive::Add => vec![g.clone(), g.clone()],
        Primitive::Sub => vec![g.clone(), map(g, |v| -v)],
        Primitive::Mul => vec![
            zip_map(g, inputs[1], |x, y| x * y),
            zip_map(g, inputs[0], |x, y| x * y),
        ],
        Primitive::Concat => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|t| {
                    let part = g.data()[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    Tensor::from_parts(t.shape().to_vec(), part)
                })
                .collect()
        }
        Primitive::Gather(idx) => {
            let mut gx = Tensor::zeros(inputs[0].shape());
            let d = gx.data_mut();
            for (&i, gv) in idx.iter().zip(g.data()) {
                d[i] += gv;
            }
            vec![gx]
        }
        Primitive::Sum => {
            let gv = g.data()[0];
            vec![Tensor::from_parts(
                inputs[0].shape().to_vec(),
                vec![gv; inputs[0].len()],
            )]
        }
        Primitive::Tanh => vec![zip_map(g, out, |gv, y| gv * (1.0 - y * y))],
        Primitive::Sigmoid => vec![zip_map(g, out, |gv, y| gv * y * (1.0 - y))],
        Primitive::Relu => vec![zip_map(g, inputs[0], |gv, x| if x > 0.0 { gv } else { 0.0 })],
        Primitive::Log => vec![zip_map(g, inputs[0], |gv, x| gv / x)],
        Primitive::Affine { scale, .. } => vec![map(g, |gv| gv * scale)],
        Primitive::Clamp { lo, hi } => vec![zip_map(g, inputs[0], |gv, x| {
            if x < *lo || x > *hi {
                0.0
            } else {
                gv
            }
        })],
        Primitive::AddRow => {
            let c = inputs[1].len();
            let mut gv = vec![0.0; c];
            for (i, x) in g.data().iter().enumerate() {
                gv[i % c] += x;
            }
            vec![g.clone(), Tensor::from_parts(vec![c], gv)]
        }
        Primitive::Transpose => vec![transpose(g)],
        Primitive::Stack => {
            let c = inputs[0].len();
            (0..inputs.len())
                .map(|r| Tensor::from_parts(vec![c], g.data()[r * c..(r + 1) * c].to_vec()))
                .collect()
        }
        Primitive::Dropout { mask } => vec![Tensor::from_parts(
            g.shape().to_vec(),
            g.data().iter().zip(mask).map(|(a, m)| a * m).collect(),
        )],
        Primitive::Softmax => {
            let p = SimplexVector::new(out.data().to_vec()).expect("softmax output on simplex");
            let gx = entmax::softmax_backward(&p, g.data()).expect("matching lengths");
            vec![Tensor::from_parts(vec![gx.len()], gx)]
        }
        Primitive::Entmax { gamma } => {
            let p = SimplexVector::new(out.data().to_vec()).expect("entmax output on simplex");
            let gx = entmax::alpha_entmax_backward(&p, g.data(), *gamma).expect("matching lengths");
            vec![Tensor::from_parts(vec![gx.len()], gx)]
        }
    }
}
