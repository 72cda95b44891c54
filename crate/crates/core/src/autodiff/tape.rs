use std::sync::Arc;

use crate::distributions::{Bijector, Family};
use crate::interpreter::Matrix;
use crate::numeric::{self, Arith, Shape, Unary};

pub(crate) type NodeId = usize;

/// Node storage; constants borrow data arguments without copying them.
#[derive(Debug, Clone)]
pub(crate) enum Buf {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
    Matrix(Arc<Matrix>),
}

impl Buf {
    pub(crate) fn as_slice(&self) -> &[f64] {
        match self {
            Buf::Owned(v) => v,
            Buf::Shared(v) => v,
            Buf::Matrix(m) => m.data(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Slice of the parameter vector starting at the given position.
    Input(usize),
    Const,
    Unary(Unary, NodeId),
    Binary(Arith, NodeId, NodeId),
    /// Matrix node times vector node.
    MatVec(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    Gather(NodeId, Vec<usize>),
    Stack(Vec<NodeId>),
    SetIndex { base: NodeId, value: NodeId, at: usize },
    Density { family: Family, x: NodeId, params: Vec<NodeId> },
    BijInverse(Bijector, NodeId),
    LogJac(Bijector, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Buf,
    shape: Shape,
    /// Depends on at least one input.
    active: bool,
}

/// Record of one forward evaluation, replayed backwards for the gradient.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    terms: Vec<(NodeId, f64)>,
    theta_len: usize,
}

impl Tape {
    pub(crate) fn new(theta_len: usize) -> Self {
        Self {
            nodes: Vec::new(),
            terms: Vec::new(),
            theta_len,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn value(&self, id: NodeId) -> &[f64] {
        self.nodes[id].value.as_slice()
    }

    pub(crate) fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    fn parents(op: &Op) -> Vec<NodeId> {
        match op {
            Op::Input(_) | Op::Const => Vec::new(),
            Op::Unary(_, a) | Op::Transpose(a) | Op::Sum(a) | Op::Gather(a, _) => vec![*a],
            Op::BijInverse(_, a) | Op::LogJac(_, a) => vec![*a],
            Op::Binary(_, a, b) | Op::MatVec(a, b) => vec![*a, *b],
            Op::SetIndex { base, value, .. } => vec![*base, *value],
            Op::Stack(ps) => ps.clone(),
            Op::Density { x, params, .. } => std::iter::once(*x).chain(params.iter().copied()).collect(),
        }
    }

    pub(crate) fn push(&mut self, op: Op, value: Buf, shape: Shape) -> NodeId {
        debug_assert_eq!(value.as_slice().len(), shape.len());
        let active = matches!(op, Op::Input(_)) || Self::parents(&op).iter().any(|&p| self.nodes[p].active);
        self.nodes.push(Node {
            op,
            value,
            shape,
            active,
        });
        self.nodes.len() - 1
    }

    pub(crate) fn input(&mut self, start: usize, value: Vec<f64>, shape: Shape) -> NodeId {
        self.push(Op::Input(start), Buf::Owned(value), shape)
    }

    pub(crate) fn constant(&mut self, value: Buf, shape: Shape) -> NodeId {
        self.push(Op::Const, value, shape)
    }

    /// Marks a scalar node as contributing `weight * value` to logp.
    pub(crate) fn add_term(&mut self, id: NodeId, weight: f64) {
        if self.nodes[id].active {
            self.terms.push((id, weight));
        }
    }

    /// Reverse sweep: gradient of the weighted term sum with respect to θ.
    pub(crate) fn reverse(&self) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta_len];
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| if n.active { vec![0.0; n.shape.len()] } else { Vec::new() })
            .collect();
        for &(id, w) in &self.terms {
            adj[id][0] += w;
        }
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if !node.active {
                continue;
            }
            let g = std::mem::take(&mut adj[id]);
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let out = node.value.as_slice();
            let active = |p: NodeId| self.nodes[p].active;
            match &node.op {
                Op::Const => {}
                Op::Input(start) => {
                    for (k, v) in g.iter().enumerate() {
                        grad[start + k] += v;
                    }
                }
                Op::Unary(f, a) => {
                    let av = self.value(*a);
                    numeric::unary_vjp(*f, av, out, &g, &mut adj[*a]);
                }
                Op::Binary(op, a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (mut ga, mut gb) = (std::mem::take(&mut adj[*a]), std::mem::take(&mut adj[*b]));
                    numeric::binary_vjp(
                        *op,
                        av,
                        bv,
                        out,
                        &g,
                        active(*a).then_some(ga.as_mut_slice()),
                        (active(*b) && a != b).then_some(gb.as_mut_slice()),
                    );
                    if a == b && active(*b) {
                        // x op x: apply the second-operand rule to the same buffer
                        numeric::binary_vjp(*op, av, bv, out, &g, None, Some(ga.as_mut_slice()));
                    }
                    adj[*a] = ga;
                    if a != b {
                        adj[*b] = gb;
                    }
                }
                Op::MatVec(m, v) => {
                    let Shape::Matrix(rows, cols) = self.shape(*m) else {
                        unreachable!("matvec on a non-matrix")
                    };
                    let (mv, vv) = (self.value(*m), self.value(*v));
                    if active(*m) {
                        let gm = &mut adj[*m];
                        for i in 0..rows {
                            for j in 0..cols {
                                gm[i * cols + j] += g[i] * vv[j];
                            }
                        }
                    }
                    if active(*v) {
                        let gv = &mut adj[*v];
                        for i in 0..rows {
                            let row = &mv[i * cols..(i + 1) * cols];
                            for j in 0..cols {
                                gv[j] += g[i] * row[j];
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let ga = &mut adj[*a];
                    match self.shape(*a) {
                        Shape::Matrix(rows, cols) => {
                            for i in 0..rows {
                                for j in 0..cols {
                                    ga[i * cols + j] += g[j * rows + i];
                                }
                            }
                        }
                        _ => ga.iter_mut().zip(&g).for_each(|(x, v)| *x += v),
                    }
                }
                Op::Sum(a) => adj[*a].iter_mut().for_each(|x| *x += g[0]),
                Op::Gather(a, idx) => {
                    let ga = &mut adj[*a];
                    for (k, &i) in idx.iter().enumerate() {
                        ga[i] += g[k];
                    }
                }
                Op::Stack(ps) => {
                    for (k, &p) in ps.iter().enumerate() {
                        if active(p) {
                            adj[p][0] += g[k];
                        }
                    }
                }
                Op::SetIndex { base, value, at } => {
                    if active(*base) {
                        let gb = &mut adj[*base];
                        for (k, v) in g.iter().enumerate() {
                            if k != *at {
                                gb[k] += v;
                            }
                        }
                    }
                    if active(*value) {
                        adj[*value][0] += g[*at];
                    }
                }
                Op::Density { family, x, params } => {
                    let pv: Vec<&[f64]> = params.iter().map(|&p| self.value(p)).collect();
                    let (gx, gp) = numeric::density_vjp(*family, self.value(*x), &pv, g[0]);
                    if active(*x) {
                        adj[*x].iter_mut().zip(&gx).for_each(|(a, v)| *a += v);
                    }
                    for (&p, gpk) in params.iter().zip(&gp) {
                        if active(p) {
                            adj[p].iter_mut().zip(gpk).for_each(|(a, v)| *a += v);
                        }
                    }
                }
                Op::BijInverse(b, y) => {
                    let gy = b.inverse_vjp(self.value(*y), &g);
                    adj[*y].iter_mut().zip(&gy).for_each(|(a, v)| *a += v);
                }
                Op::LogJac(b, y) => {
                    let gy = b.logjac_gradient(self.value(*y));
                    adj[*y].iter_mut().zip(&gy).for_each(|(a, v)| *a += v * g[0]);
                }
            }
        }
        grad
    }
}
