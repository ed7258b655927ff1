//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a [`Tape`] in evaluation order; every node
//! refers only to earlier nodes, so the tape is already topologically
//! sorted and [`Tape::backward`] is a single reverse sweep.

use super::loss::{self, LossKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// Matrix plus a row vector broadcast over rows.
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Square(usize),
    Sum(usize),
    Loss(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node reachable from the differentiated root.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.shape() != [cols] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} for {cols} columns",
                b.shape()
            )));
        }
        let mut out = self.value(x).clone();
        let bias_data = b.data().to_vec();
        for r in 0..rows {
            for (o, bv) in out.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(&bias_data) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x.0, bias.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        self.push(out, Op::Scale(a.0, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a.0))
    }

    /// Mean classification loss over the rows of `logits`.
    pub fn loss(&mut self, logits: Var, labels: &[usize], kind: LossKind) -> Result<Var> {
        let (value, grad) = loss::loss_and_grad(kind, self.value(logits), labels)?;
        Ok(self.push(Tensor::scalar(value), Op::Loss(logits.0, grad)))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.nodes[*b].value.transpose()?)?;
                    let gb = self.nodes[*a].value.transpose()?.matmul(&g)?;
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::AddBias(x, b) => {
                    let (rows, cols) = g.dims2()?;
                    let mut gb = vec![0.0; cols];
                    for r in 0..rows {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut adj, *b, Tensor::new(vec![cols], gb)?)?;
                    accumulate(&mut adj, *x, g.clone())?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&self.nodes[*b].value, |x, y| x * y)?;
                    let gb = g.zip_map(&self.nodes[*a].value, |x, y| x * y)?;
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::Scale(a, k) => accumulate(&mut adj, *a, g.scale(*k))?,
                Op::Relu(a) => {
                    let ga = g.zip_map(&self.nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::Square(a) => {
                    let ga = g.zip_map(&self.nodes[*a].value, |gv, x| 2.0 * x * gv)?;
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::Sum(a) => {
                    let s = g.item();
                    accumulate(&mut adj, *a, Tensor::full(self.nodes[*a].value.shape(), s))?;
                }
                Op::Loss(logits, dlogits) => {
                    accumulate(&mut adj, *logits, dlogits.scale(g.item()))?;
                }
            }
            adj[i] = Some(g);
        }
        Ok(Gradients(adj))
    }
}

fn accumulate(adj: &mut [Option<Tensor>], idx: usize, g: Tensor) -> Result<()> {
    match &mut adj[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
