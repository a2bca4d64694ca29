//! Reverse-mode accumulation over the recorded graph.
//!
//! Nodes are ordered by creation id, which is a topological order; backward
//! visits the reachable nodes in reverse creation order, each exactly once.
//! Every rule is written with differentiable tensor ops, so running it with
//! `create_graph` records the gradient computation itself.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::{with_grad_mode, Op, Tensor};
use crate::Elem;

/// Gradients keyed by tensor identity.
pub struct Grads<T: Elem> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Elem> Grads<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&t.id())
    }

    /// Gradient of `t`, or zeros if the loss does not depend on it.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Tensor<T> {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn sorted_nodes<T: Elem>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut seen = HashSet::new();
    let mut stack = vec![root.clone()];
    let mut nodes = Vec::new();
    seen.insert(root.id());
    while let Some(t) = stack.pop() {
        if let Some(op) = t.op() {
            for inp in op.inputs() {
                if inp.tracks_grad() && seen.insert(inp.id()) {
                    stack.push(inp.clone());
                }
            }
        }
        nodes.push(t);
    }
    nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));
    nodes
}

fn run<T: Elem>(
    loss: &Tensor<T>,
    create_graph: bool,
    keep: impl Fn(&Tensor<T>) -> bool,
) -> Result<HashMap<usize, Tensor<T>>> {
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    if !loss.tracks_grad() {
        return Err(Error::NotOnGraph);
    }
    with_grad_mode(create_graph, || {
        let nodes = sorted_nodes(loss);
        let mut pending: HashMap<usize, Tensor<T>> = HashMap::new();
        let mut kept = HashMap::new();
        pending.insert(loss.id(), Tensor::ones(loss.shape()));
        for node in &nodes {
            let Some(gy) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(op) = node.op() {
                if create_graph && matches!(op, Op::CrossEntropy(..)) {
                    return Err(Error::HigherOrderUnsupported(op.name()));
                }
                for (input, g) in input_grads(op, node, &gy)? {
                    if !input.tracks_grad() {
                        continue;
                    }
                    let acc = match pending.remove(&input.id()) {
                        Some(prev) => prev.add(&g)?,
                        None => g,
                    };
                    pending.insert(input.id(), acc);
                }
            }
            if keep(node) {
                kept.insert(node.id(), gy);
            }
        }
        Ok(kept)
    })
}

/// Gradients of a single-element `loss` with respect to every tracked leaf.
///
/// With `create_graph`, the returned gradients are themselves graph nodes and
/// can be differentiated again.
pub fn backward<T: Elem>(loss: &Tensor<T>, create_graph: bool) -> Result<Grads<T>> {
    let map = run(loss, create_graph, |t| t.requires_grad())?;
    Ok(Grads { map })
}

/// Gradients of `loss` with respect to `wrt` (zeros where there is no path).
pub fn grad<T: Elem>(
    loss: &Tensor<T>,
    wrt: &[&Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Tensor<T>>> {
    let ids: HashSet<usize> = wrt.iter().map(|t| t.id()).collect();
    let map = run(loss, create_graph, |t| ids.contains(&t.id()))?;
    Ok(wrt
        .iter()
        .map(|t| {
            map.get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}

fn mask<T: Elem>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
    Tensor::from_vec(x.data().iter().map(|&v| f(v)).collect(), x.shape())
}

type GradFn<'a, T> = &'a dyn Fn() -> Result<Tensor<T>>;

/// Evaluates the gradient rules whose input is on the graph.
fn only_tracked<T: Elem>(rules: [(&Tensor<T>, GradFn<'_, T>); 2]) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let mut v = Vec::with_capacity(2);
    for (input, rule) in rules {
        if input.tracks_grad() {
            v.push((input.clone(), rule()?));
        }
    }
    Ok(v)
}

fn input_grads<T: Elem>(
    op: &Op<T>,
    out: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let one = T::one();
    let zero = T::zero();
    let grads = match op {
        Op::Add(a, b) => vec![(a.clone(), gy.clone()), (b.clone(), gy.clone())],
        Op::Sub(a, b) => vec![(a.clone(), gy.clone()), (b.clone(), gy.neg()?)],
        Op::Mul(a, b) => vec![(a.clone(), gy.mul(b)?), (b.clone(), gy.mul(a)?)],
        Op::Div(a, b) => {
            let ga = gy.div(b)?;
            let gb = ga.mul(out)?.neg()?;
            vec![(a.clone(), ga), (b.clone(), gb)]
        }
        Op::Affine(x, s) => vec![(x.clone(), gy.scale(*s)?)],
        Op::Exp(x) => vec![(x.clone(), gy.mul(out)?)],
        Op::Log(x) => vec![(x.clone(), gy.div(x)?)],
        Op::Tanh(x) => {
            let d = out.square()?.affine(-one, one)?;
            vec![(x.clone(), gy.mul(&d)?)]
        }
        Op::Powf(x, p) => {
            let d = x.powf(*p - one)?.scale(*p)?;
            vec![(x.clone(), gy.mul(&d)?)]
        }
        Op::Sqrt(x) => {
            let d = out.recip_or_zero()?.scale(T::lit(0.5))?;
            vec![(x.clone(), gy.mul(&d)?)]
        }
        Op::RecipOrZero(x) => {
            let d = out.square()?.neg()?;
            vec![(x.clone(), gy.mul(&d)?)]
        }
        Op::Abs(x) => {
            let m = mask(x, |v| {
                if v > zero {
                    one
                } else if v < zero {
                    -one
                } else {
                    zero
                }
            })?;
            vec![(x.clone(), gy.mul(&m)?)]
        }
        Op::Relu(x) => {
            let m = mask(x, |v| if v > zero { one } else { zero })?;
            vec![(x.clone(), gy.mul(&m)?)]
        }
        Op::LeakyRelu(x, slope) => {
            let s = *slope;
            let m = mask(x, |v| if v > zero { one } else { s })?;
            vec![(x.clone(), gy.mul(&m)?)]
        }
        Op::Linear(x, map) => vec![(x.clone(), gy.linear_map(map.adjoint())?)],
        Op::MatMul(a, b) => {
            let mut v = Vec::with_capacity(2);
            if a.tracks_grad() {
                v.push((a.clone(), gy.matmul(&b.transpose()?)?));
            }
            if b.tracks_grad() {
                v.push((b.clone(), a.transpose()?.matmul(gy)?));
            }
            v
        }
        Op::Concat(parts, axis) => {
            let mut start = 0;
            let mut v = Vec::with_capacity(parts.len());
            for p in parts {
                let len = p.shape()[*axis];
                if p.tracks_grad() {
                    v.push((p.clone(), gy.narrow(*axis, start, len)?));
                }
                start += len;
            }
            v
        }
        // each conv-family op differentiates into the other two
        Op::Conv(x, w, g) => only_tracked([
            (x, &|| gy.conv_input_grad_raw(w, *g)),
            (w, &|| x.conv_weight_grad_raw(gy, *g)),
        ])?,
        Op::ConvInputGrad(gin, w, g) => only_tracked([
            (gin, &|| gy.conv_raw(w, *g)),
            (w, &|| gy.conv_weight_grad_raw(gin, *g)),
        ])?,
        Op::ConvWeightGrad(x, gin, g) => only_tracked([
            (x, &|| gin.conv_input_grad_raw(gy, *g)),
            (gin, &|| x.conv_raw(gy, *g)),
        ])?,
        Op::CrossEntropy(logits, dlogits) => {
            let d = Tensor::from_vec(dlogits.as_ref().clone(), logits.shape())?;
            vec![(logits.clone(), d.mul(gy)?)]
        }
    };
    Ok(grads)
}
