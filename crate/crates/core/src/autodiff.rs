//! Reverse-mode automatic differentiation over a flat tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so walking the tape backwards is a valid topological
//! order for the adjoint sweep. Constants (`requires_grad == false`) never
//! receive gradients, and nothing downstream of only constants does either.

use crate::error::{Error, Result};
use crate::tensor::{silu_grad, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Tanh(Var),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Mse {
        pred: Var,
        target: Tensor,
        row_weights: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Element-wise operations sharing one entry point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Hadamard,
    Scale(f64),
    Silu,
    Tanh,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].grad
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = Tensor::zeros(n.value.rows(), n.value.cols());
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, the batched linear-layer product.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = || b.ok_or_else(|| Error::Contract(format!("{op:?} needs two operands")));
        let (value, node_op, rg) = match op {
            Elementwise::Add => {
                let b = binary()?;
                (self.value(a).add(self.value(b))?, Op::Add(a, b), self.any_grad(&[a, b]))
            }
            Elementwise::Sub => {
                let b = binary()?;
                (self.value(a).sub(self.value(b))?, Op::Sub(a, b), self.any_grad(&[a, b]))
            }
            Elementwise::Hadamard => {
                let b = binary()?;
                (
                    self.value(a).hadamard(self.value(b))?,
                    Op::Hadamard(a, b),
                    self.any_grad(&[a, b]),
                )
            }
            Elementwise::Scale(s) => (self.value(a).scale(s), Op::Scale(a, s), self.any_grad(&[a])),
            Elementwise::Silu => (self.value(a).silu(), Op::Silu(a), self.any_grad(&[a])),
            Elementwise::Tanh => (self.value(a).tanh(), Op::Tanh(a), self.any_grad(&[a])),
        };
        Ok(self.push(value, node_op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, Some(b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Hadamard, a, Some(b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).silu();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Silu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).tanh();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Broadcast-adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat_cols(&refs)?
        };
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(table).gather_rows(idx)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(value, Op::GatherRows(table, idx.to_vec()), rg))
    }

    /// Mean of squared residuals over all entries.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.weighted_mse(pred, target, None)
    }

    /// `Σᵢ wᵢ Σⱼ (predᵢⱼ − targetᵢⱼ)² / (rows·cols)`; `None` means every `wᵢ = 1`.
    pub fn weighted_mse(&mut self, pred: Var, target: &Tensor, row_weights: Option<&[f64]>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::dim("mse", p.shape(), target.shape()));
        }
        if let Some(w) = row_weights {
            if w.len() != p.rows() {
                return Err(Error::dim("mse row weights", (p.rows(), 1), (w.len(), 1)));
            }
        }
        let count = p.len().max(1) as f64;
        let mut total = 0.0;
        for r in 0..p.rows() {
            let mut row_sum = 0.0;
            for (a, b) in p.row(r).iter().zip(target.row(r)) {
                let d = a - b;
                row_sum += d * d;
            }
            total += row_weights.map_or(1.0, |w| w[r]) * row_sum;
        }
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::Mse {
                pred,
                target: target.clone(),
                row_weights: row_weights.map(<[f64]>::to_vec),
            },
            rg,
        ))
    }

    /// Accumulates `d loss / d node` into the gradient of every reachable
    /// node that requires one. Repeated calls add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Tensor>> = vec![None; n];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let Some(upstream) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let contributions = self.local_grads(i, &upstream)?;
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut adj[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            self.nodes[i].grad.add_assign(&upstream);
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, up: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    out.push((*a, up.matmul_nt(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, val(*a).matmul_tn(up)?));
                }
            }
            Op::MatMulNt(a, b) => {
                // c = a bᵀ: da = dc b, db = dcᵀ a
                if needs(*a) {
                    out.push((*a, up.matmul(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, up.matmul_tn(val(*a))?));
                }
            }
            Op::Transpose(a) => out.push((*a, up.transpose())),
            Op::Add(a, b) => {
                out.push((*a, up.clone()));
                out.push((*b, up.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, up.clone()));
                out.push((*b, up.scale(-1.0)));
            }
            Op::Hadamard(a, b) => {
                if needs(*a) {
                    out.push((*a, up.hadamard(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, up.hadamard(val(*a))?));
                }
            }
            Op::Scale(a, s) => out.push((*a, up.scale(*s))),
            Op::Silu(a) => out.push((*a, up.hadamard(&val(*a).map(silu_grad))?)),
            Op::Tanh(a) => {
                let d = node.value.map(|t| 1.0 - t * t);
                out.push((*a, up.hadamard(&d)?));
            }
            Op::AddRow(a, bias) => {
                out.push((*a, up.clone()));
                if needs(*bias) {
                    out.push((*bias, up.sum_rows()));
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        out.push((p, up.slice_cols(start, start + w)));
                    }
                    start += w;
                }
            }
            Op::GatherRows(table, idx) => {
                let t = val(*table);
                let mut g = Tensor::zeros(t.rows(), t.cols());
                for (r, &row) in idx.iter().enumerate() {
                    let cols = t.cols();
                    let dst = &mut g.data_mut()[row * cols..(row + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(up.row(r)) {
                        *d += s;
                    }
                }
                out.push((*table, g));
            }
            Op::Mse {
                pred,
                target,
                row_weights,
            } => {
                let p = val(*pred);
                let count = p.len().max(1) as f64;
                let u = up.item();
                let mut g = p.sub(target)?;
                let cols = g.cols();
                for (r, row) in g.data_mut().chunks_exact_mut(cols.max(1)).enumerate() {
                    let w = row_weights.as_ref().map_or(1.0, |w| w[r]);
                    for v in row {
                        *v *= 2.0 * w * u / count;
                    }
                }
                out.push((*pred, g));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn scalar_regression_gradient() {
        // loss = (w x - y)^2, d/dw = 2 x (w x - y)
        let (w0, x0, y0) = (0.7, 1.9, -0.4);
        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(w0));
        let x = g.constant(Tensor::scalar(x0));
        let wx = g.matmul(w, x).unwrap();
        let loss = g.mse(wx, &Tensor::scalar(y0)).unwrap();
        g.backward(loss).unwrap();
        let expect = 2.0 * x0 * (w0 * x0 - y0);
        assert!((g.grad(w).item() - expect).abs() < 1e-14);
        assert_eq!(g.grad(x).item(), 0.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let a = g.param(t(&[&[0.3, -1.2], &[0.5, 2.0]]));
        let b = g.param(t(&[&[1.0], &[-0.7]]));
        let c = g.matmul(a, b).unwrap();
        let h = g.tanh(c);
        let loss = g.mse(h, &t(&[&[0.1], &[0.2]])).unwrap();
        g.backward(loss).unwrap();
        let ga = g.grad(a).clone();
        let gb = g.grad(b).clone();
        g.backward(loss).unwrap();
        assert!(g.grad(a).bit_eq(&ga.scale(2.0)));
        assert!(g.grad(b).bit_eq(&gb.scale(2.0)));
        g.zero_grad();
        assert!(g.grad(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let p = g.param(t(&[&[1.0, 1.0]]));
        let same = g.mse(p, &t(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let l = g.mse(p, &t(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        assert!(g.mse(p, &Tensor::zeros(2, 1)).is_err());
    }

    #[test]
    fn elementwise_identities() {
        let mut g = Graph::new();
        let x = g.param(t(&[&[0.5, -3.0, 2.0]]));
        let z = g.constant(Tensor::zeros(1, 3));
        let s = g.add(x, z).unwrap();
        assert!(g.value(s).bit_eq(g.value(x)));
        let zero = g.constant(Tensor::zeros(1, 1));
        let y = g.silu(zero);
        assert_eq!(g.value(y).item(), 0.0);
        assert!(g.elementwise(Elementwise::Add, x, None).is_err());
        let bad = g.constant(Tensor::zeros(2, 3));
        assert!(matches!(g.hadamard(x, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tanh_derivative_at_half() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.5));
        let y = g.tanh(x);
        // d/dy of mse(y, y0) is 2(y - y0); choose y0 = y - 0.5 so the factor is 1
        let target = Tensor::scalar(g.value(y).item() - 0.5);
        let loss = g.mse(y, &target).unwrap();
        g.backward(loss).unwrap();
        let expect = 1.0 - 0.5f64.tanh().powi(2);
        assert!((g.grad(x).item() - expect).abs() < 1e-15);
        assert!((expect - 0.786448).abs() < 1e-6);
    }
}
