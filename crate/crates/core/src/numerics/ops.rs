use std::rc::Rc;

use rand::Rng;

use super::tape::{unary_forward, Op, UnaryKind};
use super::{axis_split, Real, Result, Tape, Tensor, TensorError, Var};

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn rank2(op: &'static str, t: &Tensor<impl Real>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::Contract(format!("{op}: expected a rank-2 tensor, got {s:?}"))),
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<F>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.value().data().to_vec()
    }

    pub fn item(&self) -> F {
        self.value().item()
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.tape.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    fn binary(self, other: Var<'t, F>, op: &'static str, f: impl Fn(F, F) -> F) -> Result<(Tensor<F>, usize, usize)> {
        let (a, b) = (self.value(), other.value());
        same_shape(op, &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((Tensor::from_parts(a.shape().to_vec(), data), self.id, other.id))
    }

    pub fn add(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (out, a, b) = self.binary(other, "add", |x, y| x + y)?;
        self.tape.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (out, a, b) = self.binary(other, "sub", |x, y| x - y)?;
        self.tape.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (out, a, b) = self.binary(other, "mul", |x, y| x * y)?;
        self.tape.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (out, a, b) = self.binary(other, "div", |x, y| x / y)?;
        self.tape.push(out, Op::Div(a, b), &[a, b])
    }

    fn row_broadcast(self, row: Var<'t, F>, op: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (x, r) = (self.value(), row.value());
        let n = r.numel();
        if x.shape().last() != Some(&n) || r.rank() != 1 {
            return Err(TensorError::Shape {
                op,
                lhs: x.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let data = x.data().iter().enumerate().map(|(i, &v)| f(v, r.data()[i % n])).collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }

    /// Adds a rank-1 `row` to every slice along the last axis.
    pub fn add_row(self, row: Var<'t, F>) -> Result<Var<'t, F>> {
        let out = self.row_broadcast(row, "add_row", |x, r| x + r)?;
        self.tape.push(out, Op::AddRow { x: self.id, row: row.id }, &[self.id, row.id])
    }

    pub fn mul_row(self, row: Var<'t, F>) -> Result<Var<'t, F>> {
        let out = self.row_broadcast(row, "mul_row", |x, r| x * r)?;
        self.tape.push(out, Op::MulRow { x: self.id, row: row.id }, &[self.id, row.id])
    }

    pub fn scale(self, c: F) -> Result<Var<'t, F>> {
        let x = self.value();
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v * c).collect());
        self.tape.push(out, Op::Scale { x: self.id, c }, &[self.id])
    }

    pub fn neg(self) -> Result<Var<'t, F>> {
        self.scale(-F::one())
    }

    pub fn add_scalar(self, c: F) -> Result<Var<'t, F>> {
        let x = self.value();
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v + c).collect());
        self.tape.push(out, Op::AddScalar { x: self.id }, &[self.id])
    }

    pub fn matmul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = rank2("matmul", &a)?;
        let (k2, n) = rank2("matmul", &b)?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = vec![F::zero(); m * n];
        let (ad, bd) = (a.data(), b.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == F::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o = *o + aip * bv);
            }
        }
        let op = Op::MatMul {
            a: self.id,
            b: other.id,
            m,
            k,
            n,
        };
        self.tape.push(Tensor::from_parts(vec![m, n], out), op, &[self.id, other.id])
    }

    pub fn transpose(self) -> Result<Var<'t, F>> {
        let x = self.value();
        let (rows, cols) = rank2("transpose", &x)?;
        let d = x.data();
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = d[r * cols + c];
            }
        }
        let op = Op::Transpose { x: self.id, rows, cols };
        self.tape.push(Tensor::from_parts(vec![cols, rows], out), op, &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        if shape.iter().product::<usize>() != x.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        self.tape.push(out, Op::Reshape { x: self.id }, &[self.id])
    }

    fn unary(self, kind: UnaryKind) -> Result<Var<'t, F>> {
        let x = self.value();
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().map(|&v| unary_forward(kind, v)).collect(),
        );
        self.tape.push(out, Op::Unary { x: self.id, kind }, &[self.id])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::Gelu)
    }

    pub fn sigmoid(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sin(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::Sin)
    }

    pub fn cos(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::Cos)
    }

    pub fn exp(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::Exp)
    }

    pub fn ln(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::Ln)
    }

    pub fn log_sigmoid(self) -> Result<Var<'t, F>> {
        self.unary(UnaryKind::LogSigmoid)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, F>> {
        self.softmax_impl(axis, None)
    }

    /// Softmax restricted to entries where `keep` is true. Masked entries are
    /// exactly zero; a slice with no kept entry is all zeros.
    pub fn masked_softmax(self, axis: usize, keep: &[bool]) -> Result<Var<'t, F>> {
        self.softmax_impl(axis, Some(keep))
    }

    fn softmax_impl(self, axis: usize, keep: Option<&[bool]>) -> Result<Var<'t, F>> {
        let x = self.value();
        let (outer, len, inner) = axis_split("softmax", x.shape(), axis)?;
        if let Some(k) = keep {
            if k.len() != x.numel() {
                return Err(TensorError::Shape {
                    op: "masked_softmax",
                    lhs: x.shape().to_vec(),
                    rhs: vec![k.len()],
                });
            }
        }
        let kept = |i: usize| keep.is_none_or(|k| k[i]);
        let d = x.data();
        let mut out = vec![F::zero(); d.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |l: usize| (o * len + l) * inner + j;
                let mut max = F::neg_infinity();
                for l in 0..len {
                    if kept(at(l)) {
                        max = max.max(d[at(l)]);
                    }
                }
                if max == F::neg_infinity() {
                    continue;
                }
                let mut total = F::zero();
                for l in 0..len {
                    let i = at(l);
                    if kept(i) {
                        out[i] = (d[i] - max).exp();
                        total = total + out[i];
                    }
                }
                for l in 0..len {
                    out[at(l)] = out[at(l)] / total;
                }
            }
        }
        let op = Op::Softmax {
            x: self.id,
            outer,
            len,
            inner,
        };
        self.tape.push(Tensor::from_parts(x.shape().to_vec(), out), op, &[self.id])
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(self, gain: Var<'t, F>, bias: Var<'t, F>, eps: F) -> Result<Var<'t, F>> {
        let x = self.value();
        let cols = *x.shape().last().ok_or_else(|| TensorError::Contract("layer_norm: rank 0".into()))?;
        let (g, b) = (gain.value(), bias.value());
        if g.shape() != [cols] || b.shape() != [cols] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let rows = x.numel() / cols;
        let nf = F::of(cols as f64);
        let d = x.data();
        let mut xhat = vec![F::zero(); d.len()];
        let mut inv_std = vec![F::zero(); rows];
        let mut out = vec![F::zero(); d.len()];
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let istd = F::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..cols {
                let i = r * cols + c;
                xhat[i] = (d[i] - mean) * istd;
                out[i] = xhat[i] * g.data()[c] + b.data()[c];
            }
        }
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            inv_std,
            cols,
        };
        self.tape
            .push(Tensor::from_parts(x.shape().to_vec(), out), op, &[self.id, gain.id, bias.id])
    }

    /// Selects rows of a rank-2 table. The backward pass scatter-adds.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t, F>> {
        let t = self.value();
        let (rows, cols) = rank2("gather_rows", &t)?;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let op = Op::Gather {
            table: self.id,
            idx: idx.to_vec(),
            cols,
        };
        self.tape.push(Tensor::from_parts(vec![idx.len(), cols], out), op, &[self.id])
    }

    pub fn concat(parts: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat: no inputs".into()))?;
        let tape = first.tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        let (outer, _, inner) = axis_split("concat", &base, axis)?;
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let width = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * width..(o + 1) * width]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let op = Op::Concat {
            parts: parts.iter().zip(&values).map(|(p, v)| (p.id, v.shape()[axis])).collect(),
            outer,
            inner,
        };
        tape.push(Tensor::from_parts(shape, out), op, &ids)
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let (outer, len_in, inner) = axis_split("slice", x.shape(), axis)?;
        if start + len > len_in {
            return Err(TensorError::Index {
                op: "slice",
                index: start + len,
                len: len_in,
            });
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * len_in + start) * inner;
            out.extend_from_slice(&x.data()[from..from + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let op = Op::Slice {
            x: self.id,
            outer,
            len_in,
            start,
            len,
            inner,
        };
        self.tape.push(Tensor::from_parts(shape, out), op, &[self.id])
    }

    pub fn split(self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t, F>>> {
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &s in sizes {
            parts.push(self.slice(axis, start, s)?);
            start += s;
        }
        let len = self.value().shape().get(axis).copied().unwrap_or(0);
        if start != len {
            return Err(TensorError::Contract(format!(
                "split: sizes sum to {start}, axis has length {len}"
            )));
        }
        Ok(parts)
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout(self, rate: f64, rng: &mut impl Rng) -> Result<Var<'t, F>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Contract(format!("dropout: rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = F::of(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let op = Op::Dropout { x: self.id, mask };
        self.tape.push(Tensor::from_parts(x.shape().to_vec(), out), op, &[self.id])
    }

    /// Mean cross-entropy of rank-2 `logits` against target class indices.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let (rows, cols) = rank2("cross_entropy", &x)?;
        if rows != targets.len() || rows == 0 {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: x.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![F::zero(); rows * cols];
        let mut loss = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    len: cols,
                });
            }
            let row = x.row(r);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let total: F = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for c in 0..cols {
                probs[r * cols + c] = (row[c] - log_z).exp();
            }
            loss = loss + log_z - row[t];
        }
        let loss = loss / F::of(rows as f64);
        let op = Op::CrossEntropy {
            logits: self.id,
            targets: targets.to_vec(),
            probs,
            cols,
        };
        self.tape.push(Tensor::scalar(loss), op, &[self.id])
    }

    /// Replaces entries where `mask` is true with `value`.
    pub fn masked_fill(self, mask: &[bool], value: F) -> Result<Var<'t, F>> {
        let x = self.value();
        if mask.len() != x.numel() {
            return Err(TensorError::Shape {
                op: "masked_fill",
                lhs: x.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = x
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let op = Op::MaskedFill {
            x: self.id,
            mask: mask.to_vec(),
        };
        self.tape.push(Tensor::from_parts(x.shape().to_vec(), out), op, &[self.id])
    }

    pub fn sum(self) -> Result<Var<'t, F>> {
        let x = self.value();
        let total = x.data().iter().copied().sum();
        self.tape.push(Tensor::scalar(total), Op::SumAll { x: self.id }, &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t, F>> {
        let n = self.value().numel();
        if n == 0 {
            return Err(TensorError::Contract("mean: empty tensor".into()));
        }
        self.sum()?.scale(F::one() / F::of(n as f64))
    }

    /// Sums out `axis`; the result drops that dimension.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let (outer, len, inner) = axis_split("sum_axis", x.shape(), axis)?;
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for j in 0..inner {
                    out[o * inner + j] = out[o * inner + j] + x.data()[(o * len + l) * inner + j];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let op = Op::SumAxis {
            x: self.id,
            outer,
            len,
            inner,
        };
        self.tape.push(Tensor::from_parts(shape, out), op, &[self.id])
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, F>> {
        let len = self.value().shape().get(axis).copied().unwrap_or(1).max(1);
        self.sum_axis(axis)?.scale(F::one() / F::of(len as f64))
    }

    /// Maximum along `axis`; the gradient flows to the first arg-max.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let (outer, len, inner) = axis_split("max_axis", x.shape(), axis)?;
        if len == 0 {
            return Err(TensorError::Contract("max_axis: empty axis".into()));
        }
        let mut out = vec![F::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..inner {
                let mut best = (o * len) * inner + j;
                for l in 1..len {
                    let i = (o * len + l) * inner + j;
                    if x.data()[i] > x.data()[best] {
                        best = i;
                    }
                }
                out[o * inner + j] = x.data()[best];
                argmax[o * inner + j] = best;
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.tape.push(Tensor::from_parts(shape, out), Op::MaxAxis { x: self.id, argmax }, &[self.id])
    }

    /// Euclidean norm over the last axis. The subgradient at zero is zero.
    pub fn l2_norm(self) -> Result<Var<'t, F>> {
        let x = self.value();
        let cols = *x.shape().last().ok_or_else(|| TensorError::Contract("l2_norm: rank 0".into()))?;
        let rows = x.numel() / cols.max(1);
        let norms: Vec<F> = (0..rows)
            .map(|r| x.data()[r * cols..(r + 1) * cols].iter().map(|&v| v * v).sum::<F>().sqrt())
            .collect();
        let mut shape = x.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let op = Op::NormLast {
            x: self.id,
            norms: norms.clone(),
            cols,
        };
        self.tape.push(Tensor::from_parts(shape, norms), op, &[self.id])
    }
}
