//! Reverse-mode differentiation tape.
//!
//! Every operation appends a [`TapeNode`] whose parents have strictly
//! smaller ids, so the node list is already a topological order and the
//! backward sweep is a single reverse pass.

use std::collections::BTreeMap;

use super::ops::{self, LossTarget, ReduceKind, UnaryKind};
use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Constant,
    Parameter(String),
    MatMul,
    Add,
    Mul,
    Scale(f64),
    AddBias,
    Unary(UnaryKind),
    Softmax,
    Reduce { kind: ReduceKind, axis: usize },
    Embedding { ids: Vec<usize> },
    Conv1d,
    Concat { axis: usize },
    Stack { axis: usize },
    Select { axis: usize, index: usize },
    Reshape,
    Loss(LossTarget),
}

#[derive(Debug, Clone)]
pub struct TapeNode {
    pub id: usize,
    pub op: Op,
    pub parent_ids: Vec<usize>,
    pub value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    by_param: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `var`; zeros when `var` does not reach it.
    pub fn wrt(&self, var: Var, tape: &Tape) -> Tensor {
        self.per_node[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).dims()))
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.by_param
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.by_param
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[TapeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, parents: &[Var], value: Tensor) -> Var {
        let id = self.nodes.len();
        self.nodes.push(TapeNode {
            id,
            op,
            parent_ids: parents.iter().map(|p| p.0).collect(),
            value,
        });
        Var(id)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, &[], value)
    }

    /// Leaf whose gradient is reported under `name`.
    pub fn parameter(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(Op::Parameter(name.into()), &[], value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul, &[a, b], v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add, &[a, b], v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul, &[a, b], v))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, TensorError> {
        let v = ops::scale(self.value(a), k)?;
        Ok(self.push(Op::Scale(k), &[a], v))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let v = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(Op::AddBias, &[x, bias], v))
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var, TensorError> {
        let v = ops::apply_unary(kind, self.value(x))?;
        Ok(self.push(Op::Unary(kind), &[x], v))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = ops::softmax(self.value(x))?;
        Ok(self.push(Op::Softmax, &[x], v))
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axis: usize) -> Result<Var, TensorError> {
        let v = ops::reduce(kind, self.value(x), axis)?;
        Ok(self.push(Op::Reduce { kind, axis }, &[x], v))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let v = ops::embedding_lookup(self.value(table), ids)?;
        Ok(self.push(Op::Embedding { ids: ids.to_vec() }, &[table], v))
    }

    pub fn conv1d(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var, TensorError> {
        let v = ops::conv1d(self.value(x), self.value(filters), self.value(bias))?;
        Ok(self.push(Op::Conv1d, &[x, filters, bias], v))
    }

    pub fn rnn_step(
        &mut self,
        x: Var,
        h_prev: Var,
        w: Var,
        u: Var,
        b: Var,
    ) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        let hu = self.matmul(h_prev, u)?;
        let sum = self.add(xw, hu)?;
        let pre = self.add_bias(sum, b)?;
        self.unary(UnaryKind::Tanh, pre)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat(&values, axis)?;
        Ok(self.push(Op::Concat { axis }, parts, v))
    }

    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::stack(&values, axis)?;
        Ok(self.push(Op::Stack { axis }, parts, v))
    }

    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var, TensorError> {
        let v = ops::select(self.value(x), axis, index)?;
        Ok(self.push(Op::Select { axis, index }, &[x], v))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(x).reshape(dims)?;
        Ok(self.push(Op::Reshape, &[x], v))
    }

    pub fn loss(&mut self, prediction: Var, target: LossTarget) -> Result<Var, TensorError> {
        let v = ops::compute_loss(self.value(prediction), &target)?;
        Ok(self.push(Op::Loss(target), &[prediction], v))
    }

    /// Exact reverse-mode gradients of the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar root, node {} has dims {:?}",
                root.0,
                root_value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.dims(), 1.0));

        for node in self.nodes[..=root.0].iter().rev() {
            let Some(g) = grads[node.id].take() else {
                continue;
            };
            let contributions = self.node_backward(node, &g);
            grads[node.id] = Some(g);
            for (pid, contrib) in node.parent_ids.iter().zip(contributions) {
                match &mut grads[*pid] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let mut by_param: BTreeMap<String, Tensor> = BTreeMap::new();
        for node in &self.nodes {
            if let Op::Parameter(name) = &node.op {
                let g = grads[node.id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.dims()));
                match by_param.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        by_param.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(Gradients {
            per_node: grads,
            by_param,
        })
    }

    /// Gradient contributions of `node` to each of its parents, in order.
    fn node_backward(&self, node: &TapeNode, g: &Tensor) -> Vec<Tensor> {
        let parent = |i: usize| &self.nodes[node.parent_ids[i]].value;
        match &node.op {
            Op::Constant | Op::Parameter(_) => vec![],
            Op::MatMul => {
                let (a, b) = (parent(0), parent(1));
                vec![
                    ops::matmul(g, &ops::transpose(b)).expect("matmul backward"),
                    ops::matmul(&ops::transpose(a), g).expect("matmul backward"),
                ]
            }
            Op::Add => vec![g.clone(), g.clone()],
            Op::Mul => {
                let (a, b) = (parent(0), parent(1));
                let ga = g.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(a.data()).map(|(x, y)| x * y).collect();
                vec![
                    Tensor::from_parts(a.dims().to_vec(), ga),
                    Tensor::from_parts(b.dims().to_vec(), gb),
                ]
            }
            Op::Scale(k) => vec![g.map(|v| v * k)],
            Op::AddBias => {
                let n = parent(1).len();
                let mut gb = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (acc, v) in gb.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                vec![g.clone(), Tensor::from_parts(vec![n], gb)]
            }
            Op::Unary(kind) => vec![ops::unary_backward(*kind, parent(0), &node.value, g)],
            Op::Softmax => vec![ops::softmax_backward(&node.value, g)],
            Op::Reduce { kind, axis } => vec![ops::reduce_backward(*kind, parent(0), *axis, g)],
            Op::Embedding { ids } => vec![ops::embedding_backward(parent(0), ids, g)],
            Op::Conv1d => {
                let (dx, df, db) = ops::conv1d_backward(parent(0), parent(1), g);
                vec![dx, df, db]
            }
            Op::Concat { axis } => {
                let parts: Vec<&Tensor> = (0..node.parent_ids.len()).map(parent).collect();
                ops::concat_backward(&parts, *axis, g)
            }
            Op::Stack { axis } => (0..node.parent_ids.len())
                .map(|i| ops::select(g, *axis, i).expect("stack backward"))
                .collect(),
            Op::Select { axis, index } => {
                vec![ops::select_backward(parent(0), *axis, *index, g)]
            }
            Op::Reshape => vec![g.reshape(parent(0).dims()).expect("reshape backward")],
            Op::Loss(target) => vec![ops::loss_backward(parent(0), target, g.item())],
        }
    }
}
