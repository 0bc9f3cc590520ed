//! Arena tape for reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends one node, so node ids are a topological order.
//! Backward rules are written with the same taped primitives as the forward
//! pass; when `grad` is called with `create_graph = true` the backward sweep
//! is itself recorded and can be differentiated again.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shared row-index list for gather / segment-sum.
pub type Index = Rc<[usize]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Silu,
    Sigmoid,
    Sqrt,
    Recip,
    Sin,
    Cos,
    Exp,
    Abs,
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Silu => x * sigmoid(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Sqrt => x.sqrt(),
            Unary::Recip => 1.0 / x,
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Abs => x.abs(),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Sqrt => 0.5 / y,
            Unary::Recip => -y * y,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Abs => sign(x),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Unary(usize, Unary),
    Sum(usize),
    Fill(usize),
    SumAxis { x: usize, axis: usize },
    Broadcast { x: usize, axis: usize },
    Gather { x: usize, index: Index },
    SegmentSum { x: usize, index: Index },
    Slice { x: usize, start: usize },
    Pad { x: usize, start: usize },
    Concat(Vec<usize>),
    Reshape(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    // Produced by a backward sweep that was not itself taped.
    detached: bool,
}

/// Ordered record of tensor operations.
///
/// Single-threaded; use one tape per concurrent evaluation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(1024)),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
            detached: !self.recording.get(),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let recording = self.recording.get();
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = recording && inputs.iter().any(|&i| nodes[i].requires_grad);
        let detached = !recording || inputs.iter().any(|&i| nodes[i].detached);
        nodes.push(Node {
            value: Rc::new(value),
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
            detached,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn handle(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Gradients of the scalar `f` with respect to each of `wrt`.
    ///
    /// Inputs that do not influence `f` receive zeros. With `create_graph`
    /// the returned gradients are taped expressions that can be
    /// differentiated again; otherwise they are detached constants and any
    /// later `grad` through them fails with [`Error::HigherOrderDisabled`].
    pub fn grad<'t>(&'t self, f: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        let f_shape = f.shape();
        if f.value().len() != 1 {
            return Err(Error::Contract(format!(
                "grad needs a scalar output, got shape {:?}",
                f_shape
            )));
        }
        if self.nodes.borrow()[f.id].detached {
            return Err(Error::HigherOrderDisabled);
        }

        let previous = self.recording.replace(create_graph);
        let result = self.backward_sweep(f, wrt);
        self.recording.set(previous);
        result
    }

    fn backward_sweep<'t>(&'t self, f: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let mut adjoint: Vec<Option<Var<'t>>> = vec![None; f.id + 1];
        if self.nodes.borrow()[f.id].requires_grad {
            adjoint[f.id] = Some(self.constant(Tensor::full(&f.shape(), 1.0)));
        }

        for id in (0..=f.id).rev() {
            let Some(g) = adjoint[id] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                if !nodes[id].requires_grad {
                    continue;
                }
                nodes[id].op.clone()
            };
            for (input, gi) in self.backward_rule(id, &op, g) {
                if !self.nodes.borrow()[input].requires_grad {
                    continue;
                }
                adjoint[input] = Some(match adjoint[input] {
                    None => gi,
                    Some(prev) => {
                        let (a, b) = (prev.shape(), gi.shape());
                        if a != b {
                            return Err(Error::Shape {
                                context: "gradient accumulation",
                                left: a,
                                right: b,
                            });
                        }
                        prev.add(gi)
                    }
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for x in wrt {
            let g = match adjoint.get(x.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(&x.shape())),
            };
            out.push(g);
        }
        Ok(out)
    }

    fn backward_rule<'t>(&'t self, id: usize, op: &Op, g: Var<'t>) -> Vec<(usize, Var<'t>)> {
        let h = |i: usize| self.handle(i);
        let out = h(id);
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g), (*b, g)],
            Op::Sub(a, b) => vec![(*a, g), (*b, g.neg())],
            Op::Mul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.requires(*a) {
                    v.push((*a, g.mul(h(*b))));
                }
                if self.requires(*b) {
                    v.push((*b, g.mul(h(*a))));
                }
                v
            }
            Op::Neg(a) => vec![(*a, g.neg())],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::Offset(a) => vec![(*a, g)],
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let mut v = Vec::with_capacity(2);
                if self.requires(a) {
                    let ga = if ta {
                        h(b).matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(h(b), false, !tb)
                    };
                    v.push((a, ga));
                }
                if self.requires(b) {
                    let gb = if tb {
                        g.matmul_t(h(a), true, ta)
                    } else {
                        h(a).matmul_t(g, !ta, false)
                    };
                    v.push((b, gb));
                }
                v
            }
            Op::Unary(x, kind) => vec![(*x, self.unary_backward(h(*x), out, *kind, g))],
            Op::Sum(x) => vec![(*x, g.fill(&h(*x).shape()))],
            Op::Fill(x) => vec![(*x, g.sum())],
            Op::SumAxis { x, axis } => {
                let n = h(*x).shape()[*axis];
                vec![(*x, g.broadcast(*axis, n))]
            }
            Op::Broadcast { x, axis } => vec![(*x, g.sum_axis(*axis))],
            Op::Gather { x, index } => {
                let rows = h(*x).shape()[0];
                vec![(*x, g.segment_sum(index.clone(), rows))]
            }
            Op::SegmentSum { x, index } => vec![(*x, g.gather(index.clone()))],
            Op::Slice { x, start } => {
                let total = *h(*x).shape().last().unwrap();
                vec![(*x, g.pad_last(*start, total))]
            }
            Op::Pad { x, start } => {
                let len = *h(*x).shape().last().unwrap();
                vec![(*x, g.slice_last(*start, len))]
            }
            Op::Concat(parts) => {
                let mut start = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = *h(p).shape().last().unwrap();
                        let gp = g.slice_last(start, len);
                        start += len;
                        (p, gp)
                    })
                    .collect()
            }
            Op::Reshape(x) => vec![(*x, g.reshape(&h(*x).shape()))],
        }
    }

    fn unary_backward<'t>(&'t self, x: Var<'t>, y: Var<'t>, kind: Unary, g: Var<'t>) -> Var<'t> {
        if !self.recording.get() {
            // Plain numeric derivative: nothing downstream will differentiate it.
            let (xv, yv, gv) = (x.value(), y.value(), g.value());
            let data = xv
                .data()
                .iter()
                .zip(yv.data())
                .zip(gv.data())
                .map(|((&xi, &yi), &gi)| gi * kind.deriv(xi, yi))
                .collect();
            return self.constant(Tensor::from_parts(xv.shape().to_vec(), data));
        }
        match kind {
            Unary::Silu => {
                let s = x.sigmoid();
                let ds = s.sub(s.mul(s));
                g.mul(s.add(x.mul(ds)))
            }
            Unary::Sigmoid => g.mul(y.sub(y.mul(y))),
            Unary::Sqrt => g.mul(y.recip()).scale(0.5),
            Unary::Recip => g.mul(y.mul(y)).neg(),
            Unary::Sin => g.mul(x.cos()),
            Unary::Cos => g.mul(x.sin()).neg(),
            Unary::Exp => g.mul(y),
            Unary::Abs => g.mul(self.constant(x.value().map(sign))),
        }
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

fn binary(a: &Tensor, b: &Tensor, context: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{context}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// (outer, extent, inner) split of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        let v = (*self.value()).clone();
        let mut nodes = self.tape.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(v),
            op: Op::Leaf,
            requires_grad: false,
            detached: false,
        });
        Var {
            tape: self.tape,
            id: nodes.len() - 1,
        }
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let v = binary(&self.value(), &other.value(), "add", |x, y| x + y);
        self.tape.push(v, Op::Add(self.id, other.id), &[self.id, other.id])
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let v = binary(&self.value(), &other.value(), "sub", |x, y| x - y);
        self.tape.push(v, Op::Sub(self.id, other.id), &[self.id, other.id])
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let v = binary(&self.value(), &other.value(), "mul", |x, y| x * y);
        self.tape.push(v, Op::Mul(self.id, other.id), &[self.id, other.id])
    }

    pub fn neg(self) -> Var<'t> {
        let v = self.value().map(|x| -x);
        self.tape.push(v, Op::Neg(self.id), &[self.id])
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.tape.push(v, Op::Scale(self.id, c), &[self.id])
    }

    /// Elementwise `x + c`.
    pub fn offset(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.tape.push(v, Op::Offset(self.id), &[self.id])
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` for 2-D operands, `op` transposing when the flag is set.
    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let v = matmul_values(&a, &b, ta, tb);
        self.tape.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            &[self.id, other.id],
        )
    }

    fn unary(self, kind: Unary) -> Var<'t> {
        let v = self.value().map(|x| kind.eval(x));
        self.tape.push(v, Op::Unary(self.id, kind), &[self.id])
    }

    /// `x · sigmoid(x)`.
    pub fn silu(self) -> Var<'t> {
        self.unary(Unary::Silu)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Unary::Sqrt)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Unary::Recip)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Unary::Sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Unary::Cos)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Unary::Abs)
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self)
    }

    /// Sum of all entries as a 0-d tensor.
    pub fn sum(self) -> Var<'t> {
        let total: f64 = self.value().data().iter().sum();
        self.tape.push(Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn fill(self, shape: &[usize]) -> Var<'t> {
        let v = Tensor::full(shape, self.item());
        self.tape.push(v, Op::Fill(self.id), &[self.id])
    }

    /// Sum over `axis`, dropping it.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let x = self.value();
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let src = x.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::SumAxis { x: self.id, axis },
            &[self.id],
        )
    }

    /// Insert a new axis at position `axis` of extent `n`, repeating values along it.
    pub fn broadcast(self, axis: usize, n: usize) -> Var<'t> {
        let x = self.value();
        let mut shape = x.shape().to_vec();
        assert!(axis <= shape.len(), "broadcast axis {axis} out of range for {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let src = x.data();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let block = &src[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(block);
            }
        }
        shape.insert(axis, n);
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Broadcast { x: self.id, axis },
            &[self.id],
        )
    }

    /// Rows `index[k]` of the leading axis.
    pub fn gather(self, index: Index) -> Var<'t> {
        let x = self.value();
        let rows = x.shape()[0];
        let width: usize = x.shape()[1..].iter().product();
        let src = x.data();
        let mut data = Vec::with_capacity(index.len() * width);
        for &r in index.iter() {
            assert!(r < rows, "gather index {r} out of range {rows}");
            data.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = index.len();
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Gather { x: self.id, index },
            &[self.id],
        )
    }

    /// Scatter-add rows into `segments` output rows: `out[index[k]] += x[k]`.
    pub fn segment_sum(self, index: Index, segments: usize) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.shape()[0], index.len(), "segment_sum: index length");
        let width: usize = x.shape()[1..].iter().product();
        let src = x.data();
        let mut data = vec![0.0; segments * width];
        for (k, &seg) in index.iter().enumerate() {
            assert!(seg < segments, "segment {seg} out of range {segments}");
            let dst = &mut data[seg * width..(seg + 1) * width];
            for (d, s) in dst.iter_mut().zip(&src[k * width..(k + 1) * width]) {
                *d += s;
            }
        }
        let mut shape = x.shape().to_vec();
        shape[0] = segments;
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::SegmentSum { x: self.id, index },
            &[self.id],
        )
    }

    /// Entries `start..start + len` of the last axis.
    pub fn slice_last(self, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        let last = *x.shape().last().expect("slice_last on scalar");
        assert!(start + len <= last, "slice {start}+{len} beyond {last}");
        let rows = x.len() / last.max(1);
        let src = x.data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * last + start..r * last + start + len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Slice { x: self.id, start },
            &[self.id],
        )
    }

    /// Zero-pad the last axis to `total`, placing this tensor at `start`.
    pub fn pad_last(self, start: usize, total: usize) -> Var<'t> {
        let x = self.value();
        let len = *x.shape().last().expect("pad_last on scalar");
        assert!(start + len <= total);
        let rows = if len == 0 { 0 } else { x.len() / len };
        let src = x.data();
        let mut data = vec![0.0; rows * total];
        for r in 0..rows {
            data[r * total + start..r * total + start + len].copy_from_slice(&src[r * len..(r + 1) * len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = total;
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Pad { x: self.id, start },
            &[self.id],
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = (*self.value()).clone().reshaped(shape).expect("reshape");
        self.tape.push(v, Op::Reshape(self.id), &[self.id])
    }
}

/// Concatenate along the last axis; leading axes must agree.
pub fn concat_last<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty());
    let tape = parts[0].tape;
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let lead = &values[0].shape()[..values[0].shape().len() - 1];
    let widths: Vec<usize> = values
        .iter()
        .map(|v| {
            assert_eq!(&v.shape()[..v.shape().len() - 1], lead, "concat_last: leading axes");
            *v.shape().last().unwrap()
        })
        .collect();
    let total: usize = widths.iter().sum();
    let rows: usize = lead.iter().product();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (v, &w) in values.iter().zip(&widths) {
            data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.push(Tensor::from_parts(shape, data), Op::Concat(ids.clone()), &ids)
}

pub(crate) fn matmul_values(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    assert!(
        a.shape().len() == 2 && b.shape().len() == 2,
        "matmul needs 2-D operands, got {:?} and {:?}",
        a.shape(),
        b.shape()
    );
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k, rsa, csa) = if ta { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
    let (k2, n, rsb, csb) = if tb { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
    assert_eq!(
        k,
        k2,
        "matmul inner dimensions {:?} x {:?} (ta={ta}, tb={tb})",
        a.shape(),
        b.shape()
    );
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: the strides describe the row-major buffers of `a`, `b` and `out`.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                rsa as isize,
                csa as isize,
                b.data().as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::from_parts(vec![m, n], out)
}
