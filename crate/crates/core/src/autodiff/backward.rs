use std::collections::HashSet;

use crate::error::{Error, Result};

use super::ops::{stable_sigmoid, Op};
use super::tensor::Tensor;

// Post-order over the recorded graph: every node appears after all of its
// inputs, so the reversed order visits each node before its inputs.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(op) = node.op() {
            for parent in op.parents() {
                if parent.requires_grad() && !visited.contains(&parent.id()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
    }
    order
}

impl Tensor {
    /// Reverse-mode pass from a scalar root. Accumulates `d root / d t` into
    /// every reachable tensor with `requires_grad`, adding to (not replacing)
    /// any gradient already present.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let Some(op) = node.op() else { continue };
            let Some(grad) = node.grad() else { continue };
            propagate(node, op, &grad);
        }
        Ok(())
    }
}

fn propagate(node: &Tensor, op: &Op, g: &[f64]) {
    match op {
        Op::Add(a, b) => {
            if a.requires_grad() {
                a.accumulate_grad(g);
            }
            if b.requires_grad() {
                b.accumulate_grad(g);
            }
        }
        Op::Sub(a, b) => {
            if a.requires_grad() {
                a.accumulate_grad(g);
            }
            if b.requires_grad() {
                let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                b.accumulate_grad(&neg);
            }
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                let bd = b.data();
                let ga: Vec<f64> = g.iter().zip(bd.iter()).map(|(&gi, &bi)| gi * bi).collect();
                drop(bd);
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                let ad = a.data();
                let gb: Vec<f64> = g.iter().zip(ad.iter()).map(|(&gi, &ai)| gi * ai).collect();
                drop(ad);
                b.accumulate_grad(&gb);
            }
        }
        Op::Div(a, b) => {
            if a.requires_grad() {
                let bd = b.data();
                let ga: Vec<f64> = g.iter().zip(bd.iter()).map(|(&gi, &bi)| gi / bi).collect();
                drop(bd);
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                // d(a/b)/db = -y/b
                let bd = b.data();
                let y = node.data();
                let gb: Vec<f64> = g
                    .iter()
                    .zip(y.iter().zip(bd.iter()))
                    .map(|(&gi, (&yi, &bi))| -gi * yi / bi)
                    .collect();
                drop(y);
                drop(bd);
                b.accumulate_grad(&gb);
            }
        }
        Op::Max(a, b) => {
            // Ties split evenly, matching the central-difference limit.
            let weights: Vec<(f64, f64)> = {
                let ad = a.data();
                let bd = b.data();
                ad.iter()
                    .zip(bd.iter())
                    .map(|(&ai, &bi)| {
                        if ai > bi {
                            (1.0, 0.0)
                        } else if ai < bi {
                            (0.0, 1.0)
                        } else {
                            (0.5, 0.5)
                        }
                    })
                    .collect()
            };
            if a.requires_grad() {
                let ga: Vec<f64> = g.iter().zip(&weights).map(|(&gi, w)| gi * w.0).collect();
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                let gb: Vec<f64> = g.iter().zip(&weights).map(|(&gi, w)| gi * w.1).collect();
                b.accumulate_grad(&gb);
            }
        }
        Op::Tanh(a) => {
            let y = node.data();
            let ga: Vec<f64> = g
                .iter()
                .zip(y.iter())
                .map(|(&gi, &yi)| gi * (1.0 - yi * yi))
                .collect();
            drop(y);
            a.accumulate_grad(&ga);
        }
        Op::Sigmoid(a) => {
            let y = node.data();
            let ga: Vec<f64> = g
                .iter()
                .zip(y.iter())
                .map(|(&gi, &yi)| gi * yi * (1.0 - yi))
                .collect();
            drop(y);
            a.accumulate_grad(&ga);
        }
        Op::Softplus(a) => {
            let x = a.data();
            let ga: Vec<f64> = g
                .iter()
                .zip(x.iter())
                .map(|(&gi, &xi)| gi * stable_sigmoid(xi))
                .collect();
            drop(x);
            a.accumulate_grad(&ga);
        }
        Op::Exp(a) => {
            let y = node.data();
            let ga: Vec<f64> = g.iter().zip(y.iter()).map(|(&gi, &yi)| gi * yi).collect();
            drop(y);
            a.accumulate_grad(&ga);
        }
        Op::Log(a) => {
            let x = a.data();
            let ga: Vec<f64> = g.iter().zip(x.iter()).map(|(&gi, &xi)| gi / xi).collect();
            drop(x);
            a.accumulate_grad(&ga);
        }
        Op::Abs(a) => {
            let x = a.data();
            let ga: Vec<f64> = g
                .iter()
                .zip(x.iter())
                .map(|(&gi, &xi)| gi * if xi > 0.0 { 1.0 } else if xi < 0.0 { -1.0 } else { 0.0 })
                .collect();
            drop(x);
            a.accumulate_grad(&ga);
        }
        Op::Sqrt(a) => {
            let y = node.data();
            let ga: Vec<f64> = g
                .iter()
                .zip(y.iter())
                .map(|(&gi, &yi)| gi / (2.0 * yi))
                .collect();
            drop(y);
            a.accumulate_grad(&ga);
        }
        Op::Sum(a) => {
            let ga = vec![g[0]; a.numel()];
            a.accumulate_grad(&ga);
        }
        Op::Mean(a) => {
            let ga = vec![g[0] / a.numel() as f64; a.numel()];
            a.accumulate_grad(&ga);
        }
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = if b.shape().len() == 2 { b.shape()[1] } else { 1 };
            if a.requires_grad() {
                let bd = b.data();
                let mut ga = vec![0.0; m * k];
                if n == 1 {
                    // dA = g (outer) b
                    for i in 0..m {
                        let gi = g[i];
                        let row = &mut ga[i * k..(i + 1) * k];
                        for (slot, &bv) in row.iter_mut().zip(bd.iter()) {
                            *slot = gi * bv;
                        }
                    }
                } else {
                    // dA = G B^T
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &mut ga[i * k..(i + 1) * k];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            arow[p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                }
                drop(bd);
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                let ad = a.data();
                let mut gb = vec![0.0; k * n];
                if n == 1 {
                    // dB = A^T g, accumulated row by row
                    for i in 0..m {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let arow = &ad[i * k..(i + 1) * k];
                        for (slot, &av) in gb.iter_mut().zip(arow) {
                            *slot += gi * av;
                        }
                    }
                } else {
                    for i in 0..m {
                        let arow = &ad[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (p, &aip) in arow.iter().enumerate() {
                            if aip == 0.0 {
                                continue;
                            }
                            let brow = &mut gb[p * n..(p + 1) * n];
                            for (slot, &gv) in brow.iter_mut().zip(grow) {
                                *slot += aip * gv;
                            }
                        }
                    }
                }
                drop(ad);
                b.accumulate_grad(&gb);
            }
        }
        Op::Concat { inputs, axis } => {
            let shape = node.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let total_axis = shape[*axis];
            let mut offset = 0;
            for t in inputs {
                let d = t.shape()[*axis];
                if t.requires_grad() {
                    let mut gt = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = o * total_axis * inner + offset * inner;
                        gt.extend_from_slice(&g[base..base + d * inner]);
                    }
                    t.accumulate_grad(&gt);
                }
                offset += d;
            }
        }
        Op::Slice { input, axis, start } => {
            let in_shape = input.shape();
            let dim = in_shape[*axis];
            let len = node.shape()[*axis];
            let outer: usize = in_shape[..*axis].iter().product();
            let inner: usize = in_shape[*axis + 1..].iter().product();
            let mut gi = vec![0.0; input.numel()];
            for o in 0..outer {
                let dst = o * dim * inner + start * inner;
                let src = o * len * inner;
                gi[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            input.accumulate_grad(&gi);
        }
        Op::Broadcast(a) => {
            let src_shape = a.shape();
            let out_shape = node.shape();
            let rank = out_shape.len();
            let mut src_strides = vec![0usize; rank];
            let mut acc = 1;
            for d in (0..rank).rev() {
                src_strides[d] = if src_shape[d] == 1 { 0 } else { acc };
                acc *= src_shape[d];
            }
            let mut ga = vec![0.0; a.numel()];
            let mut idx = vec![0usize; rank];
            for &gv in g.iter() {
                let mut off = 0;
                for d in 0..rank {
                    off += idx[d] * src_strides[d];
                }
                ga[off] += gv;
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            a.accumulate_grad(&ga);
        }
    }
}
