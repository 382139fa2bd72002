use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Real, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub(crate) enum UnaryKind {
    Gelu,
    Sigmoid,
    Tanh,
    Sin,
    Cos,
    Exp,
    Ln,
    LogSigmoid,
}

/// A recorded operation together with whatever its backward rule needs.
pub(crate) enum Op<F> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow { x: usize, row: usize },
    MulRow { x: usize, row: usize },
    Scale { x: usize, c: F },
    AddScalar { x: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { x: usize, rows: usize, cols: usize },
    Reshape { x: usize },
    Unary { x: usize, kind: UnaryKind },
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<F>, inv_std: Vec<F>, cols: usize },
    Gather { table: usize, idx: Vec<usize>, cols: usize },
    Concat { parts: Vec<(usize, usize)>, outer: usize, inner: usize },
    Slice { x: usize, outer: usize, len_in: usize, start: usize, len: usize, inner: usize },
    Dropout { x: usize, mask: Vec<F> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<F>, cols: usize },
    MaskedFill { x: usize, mask: Vec<bool> },
    SumAxis { x: usize, outer: usize, len: usize, inner: usize },
    SumAll { x: usize },
    MaxAxis { x: usize, argmax: Vec<usize> },
    NormLast { x: usize, norms: Vec<F>, cols: usize },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow { .. } => "add_row",
            Op::MulRow { .. } => "mul_row",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::Unary { .. } => "unary",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather_rows",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Dropout { .. } => "dropout",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::MaskedFill { .. } => "masked_fill",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll { .. } => "sum",
            Op::MaxAxis { .. } => "max_axis",
            Op::NormLast { .. } => "l2_norm",
        }
    }
}

struct Node<F> {
    value: Rc<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// Ordered record of operations for one forward pass.
///
/// Node ids are assigned in recording order, so every input id is smaller than
/// the id of the operation consuming it and `backward` is a single reverse sweep.
pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
    leaf_grads: RefCell<Vec<Option<Vec<F>>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real> {
    pub(crate) tape: &'t Tape<F>,
    pub(crate) id: usize,
}

impl<F: Real> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Gradients are kept for leaves with `requires_grad`.
    pub fn leaf(&self, tensor: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value: Rc::new(tensor),
                op: Op::Leaf,
                requires_grad,
            });
            nodes.len() - 1
        };
        Var { tape: self, id }
    }

    pub fn constant(&self, tensor: Tensor<F>) -> Var<'_, F> {
        self.leaf(tensor, false)
    }

    pub fn param(&self, tensor: Tensor<F>) -> Var<'_, F> {
        self.leaf(tensor, true)
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn push(&self, value: Tensor<F>, op: Op<F>, inputs: &[usize]) -> Result<Var<'_, F>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
            nodes.push(Node {
                value: Rc::new(value),
                op,
                requires_grad,
            });
            nodes.len() - 1
        };
        Ok(Var { tape: self, id })
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_, F>) -> Option<Vec<F>> {
        self.leaf_grads.borrow().get(var.id).cloned().flatten()
    }

    pub fn zero_grads(&self) {
        self.leaf_grads.borrow_mut().clear();
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward: loss must be a scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![F::one()]);
        let mut leaf_out: Vec<(usize, Vec<F>)> = Vec::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let y = node.value.data();
            macro_rules! slot {
                ($i:expr) => {{
                    let i = $i;
                    if nodes[i].requires_grad {
                        let n = nodes[i].value.numel();
                        Some(grads[i].get_or_insert_with(|| vec![F::zero(); n]))
                    } else {
                        None
                    }
                }};
            }
            let val = |i: usize| nodes[i].value.data();
            match &node.op {
                Op::Leaf => leaf_out.push((id, g)),
                Op::Add(a, b) => {
                    if let Some(buf) = slot!(*a) {
                        add_into(buf, &g);
                    }
                    if let Some(buf) = slot!(*b) {
                        add_into(buf, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(buf) = slot!(*a) {
                        add_into(buf, &g);
                    }
                    if let Some(buf) = slot!(*b) {
                        buf.iter_mut().zip(&g).for_each(|(o, &d)| *o = *o - d);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if let Some(buf) = slot!(*a) {
                        for i in 0..g.len() {
                            buf[i] = buf[i] + g[i] * bv[i];
                        }
                    }
                    if let Some(buf) = slot!(*b) {
                        for i in 0..g.len() {
                            buf[i] = buf[i] + g[i] * av[i];
                        }
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if let Some(buf) = slot!(*a) {
                        for i in 0..g.len() {
                            buf[i] = buf[i] + g[i] / bv[i];
                        }
                    }
                    if let Some(buf) = slot!(*b) {
                        for i in 0..g.len() {
                            buf[i] = buf[i] - g[i] * av[i] / (bv[i] * bv[i]);
                        }
                    }
                }
                Op::AddRow { x, row } => {
                    if let Some(buf) = slot!(*x) {
                        add_into(buf, &g);
                    }
                    if let Some(buf) = slot!(*row) {
                        let n = buf.len();
                        for (i, &d) in g.iter().enumerate() {
                            buf[i % n] = buf[i % n] + d;
                        }
                    }
                }
                Op::MulRow { x, row } => {
                    let (xv, rv) = (val(*x), val(*row));
                    let n = rv.len();
                    if let Some(buf) = slot!(*x) {
                        for (i, &d) in g.iter().enumerate() {
                            buf[i] = buf[i] + d * rv[i % n];
                        }
                    }
                    if let Some(buf) = slot!(*row) {
                        for (i, &d) in g.iter().enumerate() {
                            buf[i % n] = buf[i % n] + d * xv[i];
                        }
                    }
                }
                Op::Scale { x, c } => {
                    if let Some(buf) = slot!(*x) {
                        buf.iter_mut().zip(&g).for_each(|(o, &d)| *o = *o + d * *c);
                    }
                }
                Op::AddScalar { x } | Op::Reshape { x } => {
                    if let Some(buf) = slot!(*x) {
                        add_into(buf, &g);
                    }
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let (av, bv) = (val(*a), val(*b));
                    if let Some(buf) = slot!(*a) {
                        // dA = dC · Bᵀ
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                let s: F = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                                buf[i * k + p] = buf[i * k + p] + s;
                            }
                        }
                    }
                    if let Some(buf) = slot!(*b) {
                        // dB = Aᵀ · dC
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = av[i * k + p];
                                if aip == F::zero() {
                                    continue;
                                }
                                let out = &mut buf[p * n..(p + 1) * n];
                                out.iter_mut().zip(grow).for_each(|(o, &d)| *o = *o + aip * d);
                            }
                        }
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    if let Some(buf) = slot!(*x) {
                        for r in 0..*rows {
                            for c in 0..*cols {
                                buf[r * cols + c] = buf[r * cols + c] + g[c * rows + r];
                            }
                        }
                    }
                }
                Op::Unary { x, kind } => {
                    let xv = val(*x);
                    if let Some(buf) = slot!(*x) {
                        for i in 0..g.len() {
                            buf[i] = buf[i] + g[i] * unary_derivative(*kind, xv[i], y[i]);
                        }
                    }
                }
                Op::Softmax { x, outer, len, inner } => {
                    if let Some(buf) = slot!(*x) {
                        for o in 0..*outer {
                            for j in 0..*inner {
                                let at = |l: usize| (o * len + l) * inner + j;
                                let dot: F = (0..*len).map(|l| g[at(l)] * y[at(l)]).sum();
                                for l in 0..*len {
                                    let i = at(l);
                                    buf[i] = buf[i] + y[i] * (g[i] - dot);
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std, cols } => {
                    let cols = *cols;
                    let gv = val(*gain);
                    if let Some(buf) = slot!(*gain) {
                        for (i, &d) in g.iter().enumerate() {
                            buf[i % cols] = buf[i % cols] + d * xhat[i];
                        }
                    }
                    if let Some(buf) = slot!(*bias) {
                        for (i, &d) in g.iter().enumerate() {
                            buf[i % cols] = buf[i % cols] + d;
                        }
                    }
                    if let Some(buf) = slot!(*x) {
                        let nf = F::of(cols as f64);
                        for (r, &istd) in inv_std.iter().enumerate() {
                            let base = r * cols;
                            let gh: Vec<F> = (0..cols).map(|c| g[base + c] * gv[c]).collect();
                            let mean_gh = gh.iter().copied().sum::<F>() / nf;
                            let mean_ghx = (0..cols).map(|c| gh[c] * xhat[base + c]).sum::<F>() / nf;
                            for c in 0..cols {
                                let i = base + c;
                                buf[i] = buf[i] + istd * (gh[c] - mean_gh - xhat[i] * mean_ghx);
                            }
                        }
                    }
                }
                Op::Gather { table, idx, cols } => {
                    if let Some(buf) = slot!(*table) {
                        for (r, &src) in idx.iter().enumerate() {
                            let out = &mut buf[src * cols..(src + 1) * cols];
                            out.iter_mut()
                                .zip(&g[r * cols..(r + 1) * cols])
                                .for_each(|(o, &d)| *o = *o + d);
                        }
                    }
                }
                Op::Concat { parts, outer, inner } => {
                    let total: usize = parts.iter().map(|p| p.1).sum();
                    let mut offset = 0;
                    for &(pid, plen) in parts {
                        if let Some(buf) = slot!(pid) {
                            for o in 0..*outer {
                                let src = (o * total + offset) * inner;
                                let dst = o * plen * inner;
                                let width = plen * inner;
                                add_into(&mut buf[dst..dst + width], &g[src..src + width]);
                            }
                        }
                        offset += plen;
                    }
                }
                Op::Slice { x, outer, len_in, start, len, inner } => {
                    if let Some(buf) = slot!(*x) {
                        for o in 0..*outer {
                            let dst = (o * len_in + start) * inner;
                            let src = o * len * inner;
                            let width = len * inner;
                            add_into(&mut buf[dst..dst + width], &g[src..src + width]);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(buf) = slot!(*x) {
                        for i in 0..g.len() {
                            buf[i] = buf[i] + g[i] * mask[i];
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs, cols } => {
                    if let Some(buf) = slot!(*logits) {
                        let scale = g[0] / F::of(targets.len() as f64);
                        for (r, &t) in targets.iter().enumerate() {
                            for c in 0..*cols {
                                let i = r * cols + c;
                                let onehot = if c == t { F::one() } else { F::zero() };
                                buf[i] = buf[i] + scale * (probs[i] - onehot);
                            }
                        }
                    }
                }
                Op::MaskedFill { x, mask } => {
                    if let Some(buf) = slot!(*x) {
                        for i in 0..g.len() {
                            if !mask[i] {
                                buf[i] = buf[i] + g[i];
                            }
                        }
                    }
                }
                Op::SumAxis { x, outer, len, inner } => {
                    if let Some(buf) = slot!(*x) {
                        for o in 0..*outer {
                            for l in 0..*len {
                                for j in 0..*inner {
                                    let i = (o * len + l) * inner + j;
                                    buf[i] = buf[i] + g[o * inner + j];
                                }
                            }
                        }
                    }
                }
                Op::SumAll { x } => {
                    if let Some(buf) = slot!(*x) {
                        buf.iter_mut().for_each(|o| *o = *o + g[0]);
                    }
                }
                Op::MaxAxis { x, argmax } => {
                    if let Some(buf) = slot!(*x) {
                        for (o, &src) in argmax.iter().enumerate() {
                            buf[src] = buf[src] + g[o];
                        }
                    }
                }
                Op::NormLast { x, norms, cols } => {
                    let xv = val(*x);
                    if let Some(buf) = slot!(*x) {
                        for (r, &nr) in norms.iter().enumerate() {
                            if nr == F::zero() {
                                continue;
                            }
                            for c in 0..*cols {
                                let i = r * cols + c;
                                buf[i] = buf[i] + g[r] * xv[i] / nr;
                            }
                        }
                    }
                }
            }
        }
        drop(nodes);

        let mut store = self.leaf_grads.borrow_mut();
        for (id, g) in leaf_out {
            if store.len() <= id {
                store.resize(id + 1, None);
            }
            match &mut store[id] {
                Some(acc) => add_into(acc, &g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(o, &d)| *o = *o + d);
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

pub(crate) fn unary_forward<F: Real>(kind: UnaryKind, x: F) -> F {
    match kind {
        UnaryKind::Gelu => {
            let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
            F::of(0.5) * x * (F::one() + u.tanh())
        }
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Sin => x.sin(),
        UnaryKind::Cos => x.cos(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::LogSigmoid => log_sigmoid(x),
    }
}

fn unary_derivative<F: Real>(kind: UnaryKind, x: F, y: F) -> F {
    match kind {
        UnaryKind::Gelu => {
            let c = F::of(GELU_C);
            let a = F::of(GELU_A);
            let t = (c * (x + a * x * x * x)).tanh();
            let half = F::of(0.5);
            half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
        }
        UnaryKind::Sigmoid => y * (F::one() - y),
        UnaryKind::Tanh => F::one() - y * y,
        UnaryKind::Sin => x.cos(),
        UnaryKind::Cos => -x.sin(),
        UnaryKind::Exp => y,
        UnaryKind::Ln => F::one() / x,
        UnaryKind::LogSigmoid => sigmoid(-x),
    }
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `log σ(x)` without overflow: `min(x, 0) - ln(1 + e^{-|x|})`.
pub(crate) fn log_sigmoid<F: Real>(x: F) -> F {
    x.min(F::zero()) - (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_accumulate_over_shared_uses() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
        // y = sum(x * x + x)
        let y = x.mul(x).unwrap().add(x).unwrap().sum().unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let p = tape.param(Tensor::scalar(5.0));
        tape.backward(c.mul(p).unwrap()).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(p).unwrap(), vec![2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[3]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn non_finite_values_are_caught_at_the_op() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(0.0));
        assert!(matches!(x.ln(), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn zero_grads_clears_leaves() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.0));
        tape.backward(x.scale(4.0).unwrap()).unwrap();
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.len(), 2);
    }
}
