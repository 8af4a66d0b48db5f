//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive evaluates eagerly, appends one node to the tape and returns
//! a [`Var`] handle. Nodes are only ever appended, so the tape is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use fgcl::nn::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::row(&[1.0, -2.0, 3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(&tape, x).data(), &[2.0, -4.0, 6.0]);
//! ```

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norms below this are floored in [`Tape::cosine_similarity`].
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Sum(Var),
    Cosine(Var, Var),
    LogSumExpRow(Var),
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
        mask: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitives for one forward pass. Single-threaded by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn checked(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
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

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op) -> Result<Var> {
        let value = checked(op, value)?;
        self.nodes.push(Node { value, op: kind });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input. Parameters and constants are both leaves; whether a
    /// leaf's gradient is used is up to the caller.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.value(x).add_row(self.value(bias))?;
        self.push("add_row", out, Op::AddRow(x, bias))
    }

    pub fn scalar_scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push("scalar_scale", out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    /// Column-wise mean: `m × n` to `1 × n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rows() == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let out = self.value(x).mean_rows();
        self.push("mean_rows", out, Op::MeanRows(x))
    }

    /// Stacks operands vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no operands"));
        };
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{} columns vs {cols}", t.cols()),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        self.push("transpose", out, Op::Transpose(x))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    /// `<a, b> / (|a| |b|)` for two `1 × h` rows, norms floored at
    /// [`COSINE_NORM_FLOOR`].
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != 1 || ta.shape() != tb.shape() {
            return Err(Error::shape(
                "cosine_similarity",
                format!("{:?} vs {:?}, expected two 1xh rows", ta.shape(), tb.shape()),
            ));
        }
        let na = dot(ta.data(), ta.data()).sqrt().max(COSINE_NORM_FLOOR);
        let nb = dot(tb.data(), tb.data()).sqrt().max(COSINE_NORM_FLOOR);
        let out = Tensor::scalar(dot(ta.data(), tb.data()) / (na * nb));
        self.push("cosine_similarity", out, Op::Cosine(a, b))
    }

    /// Numerically stable per-row log-sum-exp: `m × n` to `m × 1`.
    pub fn logsumexp_row(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.cols() == 0 {
            return Err(Error::shape("logsumexp_row", "no columns"));
        }
        let mut out = Tensor::zeros(t.rows(), 1);
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            out.set(r, 0, m + s.ln());
        }
        self.push("logsumexp_row", out, Op::LogSumExpRow(x))
    }

    /// Mean sigmoid cross-entropy over the unmasked entries of a `1 × T` row
    /// of logits. At least one entry must be observed.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64], mask: &[bool]) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 || z.cols() != labels.len() || labels.len() != mask.len() {
            return Err(Error::shape(
                "bce_with_logits",
                format!(
                    "logits {:?}, {} labels, {} mask entries",
                    z.shape(),
                    labels.len(),
                    mask.len()
                ),
            ));
        }
        let observed = mask.iter().filter(|&&m| m).count();
        if observed == 0 {
            return Err(Error::arg("bce_with_logits: every task is masked"));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(labels)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&zi, &y), _)| softplus(zi) - y * zi)
            .sum();
        let out = Tensor::scalar(total / observed as f64);
        self.push(
            "bce_with_logits",
            out,
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (target, contrib) in self.local_grads(node, &g)? {
                match &mut grads[target.0] {
                    Some(acc) => acc.accumulate(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        if !grads.iter().flatten().all(Tensor::all_finite) {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => vec![
                (*a, g.matmul(&val(*b).transpose())?),
                (*b, val(*a).transpose().matmul(g)?),
            ],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), "mul", |x, y| x * y)?),
                (*b, g.zip_map(val(*a), "mul", |x, y| x * y)?),
            ],
            Op::AddRow(x, bias) => {
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in db.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                vec![(*x, g.clone()), (*bias, db)]
            }
            Op::Scale(x, s) => vec![(*x, g.map(|v| v * s))],
            Op::Relu(x) => vec![(
                *x,
                g.zip_map(val(*x), "relu", |gi, xi| if xi > 0.0 { gi } else { 0.0 })?,
            )],
            Op::Sigmoid(x) => vec![(
                *x,
                g.zip_map(&node.value, "sigmoid", |gi, y| gi * y * (1.0 - y))?,
            )],
            Op::MeanRows(x) => {
                let t = val(*x);
                let n = t.rows() as f64;
                let mut dx = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    for c in 0..t.cols() {
                        dx.set(r, c, g.get(0, c) / n);
                    }
                }
                vec![(*x, dx)]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    out.push((p, Tensor::from_vec(rows, cols, slice)?));
                    offset += rows;
                }
                out
            }
            Op::Transpose(x) => vec![(*x, g.transpose())],
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, Tensor::filled(r, c, g.item()?))]
            }
            Op::Cosine(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let s = node.value.item()?;
                let gs = g.item()?;
                let ra = dot(ta.data(), ta.data()).sqrt();
                let rb = dot(tb.data(), tb.data()).sqrt();
                let na = ra.max(COSINE_NORM_FLOOR);
                let nb = rb.max(COSINE_NORM_FLOOR);
                let side = |own: &Tensor, other: &Tensor, raw: f64, n: f64| {
                    // d/d own of <own, other> / (|own| |other|); a floored norm is constant.
                    let radial = if raw > COSINE_NORM_FLOOR { s / (n * n) } else { 0.0 };
                    own.zip_map(other, "cosine_similarity", |o, t| {
                        gs * (t / (na * nb) - radial * o)
                    })
                };
                vec![(*a, side(ta, tb, ra, na)?), (*b, side(tb, ta, rb, nb)?)]
            }
            Op::LogSumExpRow(x) => {
                let t = val(*x);
                let mut dx = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let lse = node.value.get(r, 0);
                    let gr = g.get(r, 0);
                    for c in 0..t.cols() {
                        dx.set(r, c, gr * (t.get(r, c) - lse).exp());
                    }
                }
                vec![(*x, dx)]
            }
            Op::BceWithLogits {
                logits,
                labels,
                mask,
            } => {
                let z = val(*logits);
                let gs = g.item()?;
                let observed = mask.iter().filter(|&&m| m).count() as f64;
                let data = z
                    .data()
                    .iter()
                    .zip(labels)
                    .zip(mask)
                    .map(|((&zi, &y), &m)| {
                        if m {
                            gs * (sigmoid(zi) - y) / observed
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(*logits, Tensor::from_vec(1, z.cols(), data)?)]
            }
        })
    }
}

/// Result of [`Tape::backward`]: one optional gradient per recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when `v` is off the loss path.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Tensor::zeros(r, c)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        // subgradient at 0 is 0
        assert_eq!(g.wrt(&tape, x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cosine_of_self_is_one() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::row(&[0.3, -4.0, 12.5]));
        let s = tape.cosine_similarity(v, v).unwrap();
        assert!((tape.value(s).item().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(1, 3));
        let v = tape.leaf(Tensor::row(&[1.0, 2.0, 3.0]));
        let s = tape.cosine_similarity(z, v).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 0.0);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(&tape, z).all_finite());
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::row(&[0.0]));
        let l = tape.bce_with_logits(z, &[1.0], &[true]).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_ignores_masked_tasks() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::row(&[0.0, 50.0]));
        let l = tape.bce_with_logits(z, &[1.0, 0.0], &[true, false]).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(&tape, z).data()[1], 0.0);
        assert!(tape.bce_with_logits(z, &[1.0, 0.0], &[false, false]).is_err());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(&tape, x).data(), &[3.0, -4.0, 0.5, 6.0]);
    }

    #[test]
    fn matmul_adjoint_is_ones_times_bt() {
        let a_val = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b_val = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![3.0, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let a = tape.leaf(a_val);
        let b = tape.leaf(b_val.clone());
        let ab = tape.matmul(a, b).unwrap();
        let l = tape.sum(ab).unwrap();
        let g = tape.backward(l).unwrap();
        let expected = Tensor::filled(2, 2, 1.0).matmul(&b_val.transpose()).unwrap();
        assert_eq!(g.wrt(&tape, a), expected);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Argument(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        let unused = tape.leaf(Tensor::row(&[5.0]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&tape, unused).data(), &[0.0]);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1e308]));
        let err = tape.scalar_scale(x, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "scalar_scale" }));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        match tape.matmul(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
