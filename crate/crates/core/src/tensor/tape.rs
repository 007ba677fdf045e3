use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec { w: usize, x: usize },
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Relu { a: usize },
    AvgPool { a: usize, window: usize },
    Reshape { a: usize },
    Select { a: usize, index: usize },
    Sum { a: usize },
    Dot { a: usize, b: usize },
    SoftmaxXent { logits: usize, label: usize },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Single-use record of primitive operations.
///
/// Nodes are appended in evaluation order, so operands always precede the
/// node that consumes them. Borrowed constants (network weights during
/// probing) are recorded without copying.
#[derive(Debug)]
pub struct Tape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Traceability);
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node<'a>> {
        let i = self.check(v)?;
        Ok(&self.nodes[i])
    }

    /// Differentiable input owned by the tape.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Differentiable input borrowed from the caller.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Non-differentiable input borrowed from the caller.
    pub fn constant(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(self.node(v)?.value.as_ref())
    }

    fn unary(&mut self, a: Var, f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>) -> Result<Var> {
        let node = self.node(a)?;
        let rg = node.requires_grad;
        let (value, op) = f(node.value.as_ref())?;
        Ok(self.push(Cow::Owned(value), op, rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var> {
        let na = self.node(a)?;
        let nb = self.node(b)?;
        let rg = na.requires_grad || nb.requires_grad;
        let (value, op) = f(na.value.as_ref(), nb.value.as_ref())?;
        Ok(self.push(Cow::Owned(value), op, rg))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wi, xi) = (w.index, x.index);
        self.binary(w, x, |wv, xv| Ok((wv.matvec(xv)?, Op::MatVec { w: wi, x: xi })))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (a.index, b.index);
        self.binary(a, b, |av, bv| Ok((av.matmul(bv)?, Op::MatMul { a: ai, b: bi })))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (a.index, b.index);
        self.binary(a, b, |av, bv| Ok((av.add(bv)?, Op::Add { a: ai, b: bi })))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ai = a.index;
        self.unary(a, |av| Ok((av.scale(factor), Op::Scale { a: ai, factor })))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ai = a.index;
        self.unary(a, |av| Ok((av.relu(), Op::Relu { a: ai })))
    }

    pub fn average_pool(&mut self, a: Var, window: usize) -> Result<Var> {
        let ai = a.index;
        self.unary(a, |av| Ok((av.average_pool(window)?, Op::AvgPool { a: ai, window })))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ai = a.index;
        self.unary(a, |av| Ok((av.reshape(shape)?, Op::Reshape { a: ai })))
    }

    /// Scalar element `index` of the flattened value.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let ai = a.index;
        self.unary(a, |av| {
            let v = *av.data().get(index).ok_or(Error::Range {
                what: "select",
                index,
                limit: av.len(),
            })?;
            Ok((Tensor::scalar(v), Op::Select { a: ai, index }))
        })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = a.index;
        self.unary(a, |av| Ok((Tensor::scalar(av.sum()), Op::Sum { a: ai })))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (a.index, b.index);
        self.binary(a, b, |av, bv| Ok((Tensor::scalar(av.dot(bv)?), Op::Dot { a: ai, b: bi })))
    }

    /// Softmax cross-entropy `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let li = logits.index;
        self.unary(logits, |lv| {
            if label >= lv.len() {
                return Err(Error::Range {
                    what: "label",
                    index: label,
                    limit: lv.len(),
                });
            }
            let lse = log_sum_exp(lv.data());
            Ok((Tensor::scalar(lse - lv.data()[label]), Op::SoftmaxXent { logits: li, label }))
        })
    }

    /// Gradients of scalar `output` with respect to every differentiable
    /// node. Consumes the tape.
    pub fn gradients(self, output: Var) -> Result<Gradients> {
        self.sweep(output, 0)
    }

    /// `∂output/∂target`, shaped like `target`. Consumes the tape.
    pub fn backward(self, output: Var, target: Var) -> Result<Tensor> {
        let t = self.check(target)?;
        let shape = self.nodes[t].value.shape().to_vec();
        let grads = self.sweep(output, t)?;
        Ok(grads.grads[t]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&shape)))
    }

    fn sweep(self, output: Var, floor: usize) -> Result<Gradients> {
        let out = self.check(output)?;
        if self.nodes[out].value.len() != 1 {
            return Err(Error::dim("backward", self.nodes[out].value.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out] = Some(Tensor::scalar(1.0));

        for i in (floor..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            let wanted = |j: usize| j >= floor && self.nodes[j].requires_grad;
            let val = |j: usize| self.nodes[j].value.as_ref();
            match self.nodes[i].op {
                Op::Leaf => {}
                Op::MatVec { w, x } => {
                    if wanted(w) {
                        let xv = val(x);
                        let cols = xv.len();
                        let mut gw = vec![0.0; g.len() * cols];
                        for (r, &gr) in g.data().iter().enumerate() {
                            for (c, &xc) in xv.data().iter().enumerate() {
                                gw[r * cols + c] = gr * xc;
                            }
                        }
                        accumulate(&mut grads, w, Tensor::new(val(w).shape().to_vec(), gw)?)?;
                    }
                    if wanted(x) {
                        let gx = val(w).matvec_transposed(&g)?.reshape(val(x).shape().to_vec())?;
                        accumulate(&mut grads, x, gx)?;
                    }
                }
                Op::MatMul { a, b } => {
                    if wanted(a) {
                        accumulate(&mut grads, a, g.matmul(&val(b).transpose()?)?)?;
                    }
                    if wanted(b) {
                        accumulate(&mut grads, b, val(a).transpose()?.matmul(&g)?)?;
                    }
                }
                Op::Add { a, b } => {
                    if wanted(a) {
                        accumulate(&mut grads, a, g.clone())?;
                    }
                    if wanted(b) {
                        accumulate(&mut grads, b, g.clone())?;
                    }
                }
                Op::Scale { a, factor } => {
                    if wanted(a) {
                        accumulate(&mut grads, a, g.scale(factor))?;
                    }
                }
                Op::Relu { a } => {
                    if wanted(a) {
                        let ga = g.zip_with(val(a), "relu_backward", |gi, ai| if ai > 0.0 { gi } else { 0.0 })?;
                        accumulate(&mut grads, a, ga)?;
                    }
                }
                Op::AvgPool { a, window } => {
                    if wanted(a) {
                        let inv = 1.0 / window as f64;
                        let ga: Vec<f64> = (0..val(a).len()).map(|j| g.data()[j / window] * inv).collect();
                        accumulate(&mut grads, a, Tensor::new(val(a).shape().to_vec(), ga)?)?;
                    }
                }
                Op::Reshape { a } => {
                    if wanted(a) {
                        accumulate(&mut grads, a, g.reshape(val(a).shape().to_vec())?)?;
                    }
                }
                Op::Select { a, index } => {
                    if wanted(a) {
                        let mut ga = Tensor::zeros(val(a).shape());
                        ga.data[index] = g.data()[0];
                        accumulate(&mut grads, a, ga)?;
                    }
                }
                Op::Sum { a } => {
                    if wanted(a) {
                        let s = g.data()[0];
                        accumulate(&mut grads, a, val(a).map(|_| s))?;
                    }
                }
                Op::Dot { a, b } => {
                    let s = g.data()[0];
                    if wanted(a) {
                        let gb = val(b).scale(s).reshape(val(a).shape().to_vec())?;
                        accumulate(&mut grads, a, gb)?;
                    }
                    if wanted(b) {
                        let ga = val(a).scale(s).reshape(val(b).shape().to_vec())?;
                        accumulate(&mut grads, b, ga)?;
                    }
                }
                Op::SoftmaxXent { logits, label } => {
                    if wanted(logits) {
                        let lv = val(logits);
                        let lse = log_sum_exp(lv.data());
                        let s = g.data()[0];
                        let gl: Vec<f64> = lv
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(j, &z)| s * ((z - lse).exp() - if j == label { 1.0 } else { 0.0 }))
                            .collect();
                        accumulate(&mut grads, logits, Tensor::new(lv.shape().to_vec(), gl)?)?;
                    }
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients { tape: self.id, grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], j: usize, g: Tensor) -> Result<()> {
    grads[j] = Some(match grads[j].take() {
        Some(prev) => prev.add(&g)?,
        None => g,
    });
    Ok(())
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Result of a full backward sweep.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Result<Option<&Tensor>> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(Error::Traceability);
        }
        Ok(self.grads[v.index].as_ref())
    }
}
