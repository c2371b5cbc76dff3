//! Minimal reverse-mode autodiff over [`Tensor`].
//!
//! A [`Graph`] is a tape: every op pushes one node holding its value, its
//! parent ids, and a closure that maps the upstream gradient to parent
//! gradients. `backward` walks the tape once in reverse. Graphs are built per
//! batch and dropped after the step.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Tensor, &[Rc<Tensor>], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<Var>,
    parent_values: Vec<Rc<Tensor>>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients per tape node after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    fn push(&self, value: Tensor, parents: Vec<Var>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let parent_values = parents.iter().map(|p| Rc::clone(&nodes[p.0].value)).collect();
        nodes.push(Node { value: Rc::new(value), parents, parent_values, backward });
        Var(nodes.len() - 1)
    }

    /// Leaf node. Gradients are accumulated for leaves too; parameters are
    /// bound this way and their gradients read back by id.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, vec![], None)
    }

    /// Leaf that shares storage with the caller.
    pub fn leaf_rc(&self, value: Rc<Tensor>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents: vec![], parent_values: vec![], backward: None });
        Var(nodes.len() - 1)
    }

    /// Identity with no parents: blocks backpropagation.
    pub fn stop_gradient(&self, v: Var) -> Var {
        let value = self.value(v);
        self.leaf_rc(value)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(&self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).sub(&self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![g.clone(), g.scale(-1.0)])),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).mul(&self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, p, _| vec![g.mul(&p[1]), g.mul(&p[0])])),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, vec![a], Some(Box::new(move |g, _, _| vec![g.scale(c)])))
    }

    /// Broadcast-add a 1xN bias row onto every row of an MxN tensor.
    pub fn add_row(&self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut out = (*av).clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + bv.get(0, c);
                out.set(r, c, v);
            }
        }
        self.push(
            out,
            vec![a, bias],
            Some(Box::new(|g, _, _| {
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        db.set(0, c, db.get(0, c) + g.get(r, c));
                    }
                }
                vec![g.clone(), db]
            })),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(&self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, p, _| vec![g.matmul_nt(&p[1]), p[0].matmul_tn(g)])),
        )
    }

    /// C = A * B^T.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(&self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, p, _| vec![g.matmul(&p[1]), g.matmul_tn(&p[0])])),
        )
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, vec![a], Some(Box::new(|g, _, _| vec![g.transpose()])))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(
            out,
            vec![a],
            Some(Box::new(|g, _, y| vec![g.zip(y, |g, y| g * (1.0 - y * y))])),
        )
    }

    /// Elementwise natural log; caller guarantees strictly positive input.
    pub fn ln(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(
            out,
            vec![a],
            Some(Box::new(|g, p, _| vec![g.zip(&p[0], |g, x| g / x)])),
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let row = av.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            let exps: Vec<f64> = row.iter().map(|&x| {
                let e = (x - m).exp();
                denom += e;
                e
            }).collect();
            for (c, e) in exps.iter().enumerate() {
                out.set(r, c, e / denom);
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(|g, _, y| {
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let s: f64 = g.row(r).iter().zip(y.row(r)).map(|(g, y)| g * y).sum();
                    for c in 0..g.cols() {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - s));
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Mean over rows: MxN -> 1xN.
    pub fn mean_rows(&self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.rows() as f64;
        let mut out = Tensor::zeros(1, av.cols());
        for r in 0..av.rows() {
            for c in 0..av.cols() {
                out.set(0, c, out.get(0, c) + av.get(r, c) / m);
            }
        }
        let rows = av.rows();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut dx = Tensor::zeros(rows, g.cols());
                for r in 0..rows {
                    for c in 0..g.cols() {
                        dx.set(r, c, g.get(0, c) / rows as f64);
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Sum of all entries: MxN -> 1x1.
    pub fn sum_all(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(
            out,
            vec![a],
            Some(Box::new(|g, p, _| {
                let gv = g.item();
                vec![p[0].map(|_| gv)]
            })),
        )
    }

    /// Concatenate along columns; all inputs must share the row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&v| self.value(v)).collect();
        let rows = values[0].rows();
        let widths: Vec<usize> = values.iter().map(|v| {
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            v.cols()
        }).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            let mut off = 0;
            for v in &values {
                for c in 0..v.cols() {
                    out.set(r, off + c, v.get(r, c));
                }
                off += v.cols();
            }
        }
        self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    let mut dx = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        for c in 0..w {
                            dx.set(r, c, g.get(r, off + c));
                        }
                    }
                    grads.push(dx);
                    off += w;
                }
                grads
            })),
        )
    }

    /// L2-normalize each row. Errors when a row has (near-)zero norm;
    /// `side` names the offending operand in the message.
    pub fn l2_normalize_rows(&self, a: Var, side: &str) -> Result<Var> {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let norm: f64 = av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Numeric(format!(
                    "cannot L2-normalize {side}: row {r} has zero norm"
                )));
            }
            for c in 0..av.cols() {
                out.set(r, c, av.get(r, c) / norm);
            }
        }
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(|g, p, y| {
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let norm: f64 = p[0].row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(g, y)| g * y).sum();
                    for c in 0..g.cols() {
                        dx.set(r, c, (g.get(r, c) - y.get(r, c) * dot) / norm);
                    }
                }
                vec![dx]
            })),
        ))
    }

    /// Dot product of two 1xN rows -> 1x1.
    pub fn dot(&self, a: Var, b: Var) -> Var {
        let out = Tensor::scalar(self.value(a).dot(&self.value(b)));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, p, _| {
                let gv = g.item();
                vec![p[1].scale(gv), p[0].scale(gv)]
            })),
        )
    }

    /// Numerically stable binary cross-entropy on a single logit.
    pub fn bce_with_logits(&self, logit: Var, target: f64) -> Var {
        let x = self.value(logit).item();
        let loss = x.max(0.0) - x * target + (-x.abs()).exp().ln_1p();
        self.push(
            Tensor::scalar(loss),
            vec![logit],
            Some(Box::new(move |g, p, _| {
                let x = p[0].item();
                let sig = 1.0 / (1.0 + (-x).exp());
                vec![Tensor::scalar(g.item() * (sig - target))]
            })),
        )
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward target must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&grad, &node.parent_values, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[parent.0] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn chain_through_matmul_and_tanh() {
        // f(W) = sum(tanh(x W)); df/dW checked against finite differences.
        let g = Graph::new();
        let x = g.leaf(Tensor::from_vec(1, 2, vec![0.3, -0.7]).unwrap());
        let w0 = Tensor::from_vec(2, 2, vec![0.1, 0.2, -0.4, 0.5]).unwrap();
        let w = g.leaf(w0.clone());
        let y = g.tanh(g.matmul(x, w));
        let loss = g.sum_all(y);
        let grads = g.backward(loss);
        let dw = grads.get(w).unwrap().clone();

        let eps = 1e-6;
        for i in 0..4 {
            let f = |delta: f64| {
                let mut wp = w0.clone();
                wp.data_mut()[i] += delta;
                let g2 = Graph::new();
                let x2 = g2.leaf(Tensor::from_vec(1, 2, vec![0.3, -0.7]).unwrap());
                let wv = g2.leaf(wp);
                let y2 = g2.tanh(g2.matmul(x2, wv));
                g2.value(g2.sum_all(y2)).item()
            };
            let num = (f(eps) - f(-eps)) / (2.0 * eps);
            assert_close(dw.data()[i], num, 1e-8);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_grad_is_orthogonal_to_ones() {
        let g = Graph::new();
        let x = g.leaf(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let y = g.softmax_rows(x);
        let yv = g.value(y);
        for r in 0..2 {
            assert_close(yv.row(r).iter().sum::<f64>(), 1.0, 1e-12);
        }
        let loss = g.dot(g.mean_rows(y), g.leaf(Tensor::row_vector(vec![1.0, -2.0, 0.5])));
        let grads = g.backward(loss);
        let dx = grads.get(x).unwrap();
        // softmax gradient rows are orthogonal to the all-ones direction
        for r in 0..2 {
            assert_close(dx.row(r).iter().sum::<f64>(), 0.0, 1e-12);
        }
    }

    #[test]
    fn stop_gradient_blocks_parents() {
        let g = Graph::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let blocked = g.stop_gradient(a);
        let b = g.leaf(Tensor::scalar(3.0));
        let loss = g.mul(blocked, b);
        let grads = g.backward(loss);
        assert!(grads.get(a).is_none());
        assert_close(grads.get(b).unwrap().item(), 2.0, 1e-15);
    }

    #[test]
    fn bce_matches_manual_values() {
        let g = Graph::new();
        let logit = g.leaf(Tensor::scalar(0.8));
        let loss = g.bce_with_logits(logit, 1.0);
        let expected = -(1.0f64 / (1.0 + (-0.8f64).exp())).ln();
        assert_close(g.value(loss).item(), expected, 1e-12);
        let grads = g.backward(loss);
        let sig = 1.0 / (1.0 + (-0.8f64).exp());
        assert_close(grads.get(logit).unwrap().item(), sig - 1.0, 1e-12);
    }

    #[test]
    fn l2_normalize_zero_row_is_an_error() {
        let g = Graph::new();
        let x = g.leaf(Tensor::zeros(1, 3));
        let err = g.l2_normalize_rows(x, "video side").unwrap_err();
        assert!(err.to_string().contains("video side"));
    }
}
