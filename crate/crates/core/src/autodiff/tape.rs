//! Reverse-mode gradient tape.
//!
//! Every primitive appends one node holding its forward value and the
//! operand handles its backward rule needs. Nodes are only ever appended, so
//! operands always precede their consumers and a single reverse sweep visits
//! each node once.

use std::collections::HashMap;

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};
use crate::losses::kernel::{self, KernelSpec};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Location of a trainable matrix: `(group index, matrix index within group)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub group: usize,
    pub index: usize,
}

impl ParamId {
    pub fn new(group: usize, index: usize) -> Self {
        Self { group, index }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    GradReverse(Var, f64),
    Sum(Var),
    SumSquares(Var),
    ConcatRows(Vec<Var>),
    SoftmaxXentSum { logits: Var, labels: Vec<usize> },
    SigmoidXentSum { logits: Var, targets: DenseMatrix },
    Mmd { a: Var, b: Var, kernel: KernelSpec },
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Option<f64> {
        self.value(v).item()
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers a trainable matrix. Registering the same id twice returns the
    /// existing node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId, value: &DenseMatrix) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a `1 x cols` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut out = xv.clone();
        let cols = out.cols();
        for (i, o) in out.values_mut().iter_mut().enumerate() {
            *o += bv.values()[i % cols];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x · W + b`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(weight).shape());
        if xs.1 != ws.0 {
            return Err(Error::Shape {
                op: "affine",
                left: xs,
                right: ws,
            });
        }
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Identity forward; the backward pass multiplies the incoming gradient
    /// by `-lambda`.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::GradReverse(a, lambda))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().map(|x| x * x).sum();
        self.push(DenseMatrix::scalar(s), Op::SumSquares(a))
    }

    /// Stacks nodes with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_rows needs at least one input".into()));
        }
        let values: Vec<&DenseMatrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = DenseMatrix::vstack(&values)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Adds a list of scalar nodes left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Option<Var>> {
        let mut iter = terms.iter().copied();
        let Some(mut acc) = iter.next() else {
            return Ok(None);
        };
        for t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(Some(acc))
    }

    /// Summed softmax cross entropy `Σ_i -log softmax(z_i)[y_i]`.
    pub fn softmax_xent_sum(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if labels.len() != z.rows() {
            return Err(Error::Config(format!(
                "softmax loss: {} labels for {} rows",
                labels.len(),
                z.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= z.cols()) {
            return Err(Error::Config(format!(
                "softmax loss: label {bad} out of range for {} classes",
                z.cols()
            )));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            total += log_sum_exp(row) - row[y];
        }
        Ok(self.push(
            DenseMatrix::scalar(total),
            Op::SoftmaxXentSum {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Summed per-unit sigmoid cross entropy against `targets` in `[0, 1]`.
    pub fn sigmoid_xent_sum(&mut self, logits: Var, targets: DenseMatrix) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::Shape {
                op: "sigmoid_xent",
                left: z.shape(),
                right: targets.shape(),
            });
        }
        let total = z
            .values()
            .iter()
            .zip(targets.values())
            .map(|(&o, &p)| softplus(o) - p * o)
            .sum();
        Ok(self.push(
            DenseMatrix::scalar(total),
            Op::SigmoidXentSum { logits, targets },
        ))
    }

    /// Biased squared MMD between the row sets of `a` and `b`.
    pub fn mmd(&mut self, a: Var, b: Var, kernel: &KernelSpec) -> Result<Var> {
        let value = kernel::mmd_squared_value(self.value(a), self.value(b), kernel)?;
        Ok(self.push(
            DenseMatrix::scalar(value),
            Op::Mmd {
                a,
                b,
                kernel: kernel.clone(),
            },
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let grads = lower;
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(grads, *a, ga);
                    accumulate(grads, *b, gb);
                }
                Op::AddBias(x, bias) => {
                    let cols = g.cols();
                    let mut gb = DenseMatrix::zeros(1, cols);
                    for r in 0..g.rows() {
                        for (o, v) in gb.values_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *bias, gb);
                    accumulate(grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(grads, *b, g.clone());
                    accumulate(grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(grads, *b, g.map(|v| -v));
                    accumulate(grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(grads, *a, ga);
                }
                Op::GradReverse(a, lambda) => {
                    accumulate(grads, *a, g.map(|v| -lambda * v));
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(grads, *a, DenseMatrix::filled(r, c, g.values()[0]));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.values()[0];
                    accumulate(grads, *a, self.value(*a).map(|x| s * x));
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let idx: Vec<usize> = (start..start + rows).collect();
                        accumulate(grads, p, g.select_rows(&idx));
                        start += rows;
                    }
                }
                Op::SoftmaxXentSum { logits, labels } => {
                    let scale = g.values()[0];
                    let z = self.value(*logits);
                    let mut gz = DenseMatrix::zeros(z.rows(), z.cols());
                    for (i, &y) in labels.iter().enumerate() {
                        let row = z.row(i);
                        let lse = log_sum_exp(row);
                        for (c, &zc) in row.iter().enumerate() {
                            let p = (zc - lse).exp();
                            let target = if c == y { 1.0 } else { 0.0 };
                            gz.set(i, c, scale * (p - target));
                        }
                    }
                    accumulate(grads, *logits, gz);
                }
                Op::SigmoidXentSum { logits, targets } => {
                    let scale = g.values()[0];
                    let gz = self
                        .value(*logits)
                        .zip_map(targets, |o, p| scale * (sigmoid(o) - p));
                    accumulate(grads, *logits, gz);
                }
                Op::Mmd { a, b, kernel } => {
                    let scale = g.values()[0];
                    let (ga, gb) =
                        kernel::mmd_squared_grad(self.value(*a), self.value(*b), kernel);
                    accumulate(grads, *a, ga.map(|v| v * scale));
                    accumulate(grads, *b, gb.map(|v| v * scale));
                }
            }
        }

        let mut by_param = HashMap::new();
        let mut by_var = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if let Some(g) = grads[idx].take() {
                if let Op::Param(id) = node.op {
                    by_param.insert(id, g.clone());
                }
                by_var.insert(Var(idx), g);
            }
        }
        Ok(Gradients { by_param, by_var })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], target: Var, g: DenseMatrix) {
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, DenseMatrix>,
    by_var: HashMap<Var, DenseMatrix>,
}

impl Gradients {
    /// Gradient for a registered parameter, if the root depended on it.
    pub fn param(&self, id: ParamId) -> Option<&DenseMatrix> {
        self.by_param.get(&id)
    }

    /// Gradient with respect to any node reached by the sweep.
    pub fn wrt(&self, v: Var) -> Option<&DenseMatrix> {
        self.by_var.get(&v)
    }

    /// Gradient for a parameter, zero-filled to `shape` when untouched.
    pub fn param_or_zeros(&self, id: ParamId, shape: (usize, usize)) -> DenseMatrix {
        self.param(id)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(shape.0, shape.1))
    }
}
