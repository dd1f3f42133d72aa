use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::backend::{self, Ops, Unary};
use crate::error::{Error, Result};
use crate::geometry::StabilityConfig;
use crate::params::ParamId;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Unary(Unary, Var),
    Scale(Var, Var),
    ScaleBy(Var, f64),
    Dot(Var, Var),
    NormSq(Var),
    Norm(Var),
    Sum(Var),
    MatVec(Var, Var),
    Concat(Box<[Var]>),
    Slice(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(Some(_)) => "parameter",
            Op::Leaf(None) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Unary(..) => "unary",
            Op::Scale(..) => "scale",
            Op::ScaleBy(..) => "scale_by",
            Op::Dot(..) => "dot",
            Op::NormSq(..) => "norm_sq",
            Op::Norm(..) => "norm",
            Op::Sum(..) => "sum",
            Op::MatVec(..) => "matvec",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
    /// Column count for matrix-shaped leaves, 0 otherwise.
    cols: usize,
    grad: bool,
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<Node>,
    data: Vec<f64>,
    scratch: Vec<f64>,
}

/// Append-only record of a computation. Values live in one arena; inputs
/// always precede the nodes that use them.
#[derive(Debug)]
pub struct Tape {
    inner: RefCell<Inner>,
    /// Adjoint buffer kept between backward passes.
    adjoints: RefCell<Vec<f64>>,
    stab: StabilityConfig,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(StabilityConfig::default())
    }
}

/// Gradients of a scalar with respect to the parameters registered on a tape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient for `id`; `None` when the parameter never reached the loss.
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    /// Gradient for `id`, or zeros of length `len` if it was untouched.
    pub fn get_or_zeros(&self, id: ParamId, len: usize) -> Vec<f64> {
        self.by_param.get(&id).cloned().unwrap_or_else(|| vec![0.0; len])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Vec<f64>)> {
        self.by_param.iter_mut().map(|(k, v)| (*k, v))
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.by_param.values_mut() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Euclidean norm over every coordinate of every parameter.
    pub fn global_norm(&self) -> f64 {
        self.by_param.values().map(|g| backend::norm_sq(g)).sum::<f64>().sqrt()
    }

    pub fn insert(&mut self, id: ParamId, grad: Vec<f64>) {
        self.by_param.insert(id, grad);
    }
}

impl Tape {
    pub fn new(stab: StabilityConfig) -> Self {
        Self {
            inner: RefCell::new(Inner::default()),
            adjoints: RefCell::new(Vec::new()),
            stab,
        }
    }

    /// Forgets every node but keeps the allocated storage.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.data.clear();
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a trainable leaf. A parameter may be registered more than
    /// once; its gradients are summed.
    pub fn param(&self, id: ParamId, values: &[f64], cols: usize) -> Var {
        self.leaf(Some(id), values, cols)
    }

    pub fn constant(&self, values: &[f64]) -> Var {
        self.leaf(None, values, 0)
    }

    pub fn constant_matrix(&self, m: &backend::Matrix) -> Var {
        self.leaf(None, m.data(), m.cols())
    }

    fn leaf(&self, id: Option<ParamId>, values: &[f64], cols: usize) -> Var {
        let mut inner = self.inner.borrow_mut();
        let off = inner.data.len();
        inner.data.extend_from_slice(values);
        let grad = id.is_some();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            op: Op::Leaf(id),
            off,
            len: values.len(),
            cols,
            grad,
        });
        Var(idx as u32)
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.index()];
        inner.data[n.off..n.off + n.len].to_vec()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.index()];
        debug_assert_eq!(n.len, 1);
        inner.data[n.off]
    }

    fn node_len(&self, v: Var) -> usize {
        self.inner.borrow().nodes[v.index()].len
    }

    /// Appends a node whose value is produced by `f` from the arena.
    fn push(&self, op: Op, inputs: &[Var], len: usize, f: impl FnOnce(&[f64], &mut Vec<f64>)) -> Var {
        let mut inner = self.inner.borrow_mut();
        let grad = inputs.iter().any(|v| inner.nodes[v.index()].grad);
        let Inner { nodes, data, scratch } = &mut *inner;
        let off = data.len();
        scratch.clear();
        f(data, scratch);
        debug_assert_eq!(scratch.len(), len, "{} produced a wrong length", op.name());
        data.extend_from_slice(scratch);
        let idx = nodes.len();
        nodes.push(Node {
            op,
            off,
            len,
            cols: 0,
            grad,
        });
        Var(idx as u32)
    }

    fn span(&self, v: Var) -> (usize, usize) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.index()];
        (n.off, n.len)
    }

    fn elementwise(&self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "elementwise {} on lengths {al} and {bl}", op.name());
        self.push(op, &[a, b], al, |d, out| {
            out.extend(d[ao..ao + al].iter().zip(&d[bo..bo + bl]).map(|(x, y)| f(*x, *y)))
        })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let Inner { nodes, data, .. } = &*inner;
        let root = &nodes[loss.index()];
        if root.len != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got length {}",
                root.len
            )));
        }
        if let Some((i, n)) = nodes[..=loss.index()]
            .iter()
            .enumerate()
            .find(|(_, n)| data[n.off..n.off + n.len].iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite {
                node: i,
                op: n.op.name(),
            });
        }

        let stab = &self.stab;
        let mut grads = self.adjoints.borrow_mut();
        grads.clear();
        grads.resize(root.off + root.len, 0.0);
        grads[root.off] = 1.0;
        let val = |v: &Var| {
            let n = &nodes[v.index()];
            &data[n.off..n.off + n.len]
        };

        for idx in (0..=loss.index()).rev() {
            let node = &nodes[idx];
            if !node.grad || matches!(node.op, Op::Leaf(_)) {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(node.off);
            let g = &hi[..node.len];
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            let y = &data[node.off..node.off + node.len];
            let off = |v: &Var| nodes[v.index()].off;
            let wants = |v: &Var| nodes[v.index()].grad;
            match &node.op {
                Op::Leaf(_) => unreachable!(),
                Op::Add(a, b) => {
                    if wants(a) {
                        axpy(&mut lo[off(a)..], g, 1.0);
                    }
                    if wants(b) {
                        axpy(&mut lo[off(b)..], g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        axpy(&mut lo[off(a)..], g, 1.0);
                    }
                    if wants(b) {
                        axpy(&mut lo[off(b)..], g, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    if wants(a) {
                        let ga = &mut lo[off(a)..];
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    if wants(b) {
                        let gb = &mut lo[off(b)..];
                        for i in 0..g.len() {
                            gb[i] += g[i] * av[i];
                        }
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(b);
                    if wants(a) {
                        let ga = &mut lo[off(a)..];
                        for i in 0..g.len() {
                            ga[i] += g[i] / bv[i];
                        }
                    }
                    if wants(b) {
                        let gb = &mut lo[off(b)..];
                        for i in 0..g.len() {
                            gb[i] -= g[i] * y[i] / bv[i];
                        }
                    }
                }
                Op::Neg(a) => axpy(&mut lo[off(a)..], g, -1.0),
                Op::Unary(f, a) => {
                    let av = val(a);
                    let ga = &mut lo[off(a)..];
                    for i in 0..g.len() {
                        ga[i] += g[i] * f.derivative(av[i], y[i], stab);
                    }
                }
                Op::Scale(v, s) => {
                    let (vv, sv) = (val(v), val(s)[0]);
                    if wants(v) {
                        axpy(&mut lo[off(v)..], g, sv);
                    }
                    if wants(s) {
                        lo[off(s)] += backend::dot(g, vv);
                    }
                }
                Op::ScaleBy(v, c) => axpy(&mut lo[off(v)..], g, *c),
                Op::Dot(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    if wants(a) {
                        axpy(&mut lo[off(a)..], bv, g[0]);
                    }
                    if wants(b) {
                        axpy(&mut lo[off(b)..], av, g[0]);
                    }
                }
                Op::NormSq(a) => axpy(&mut lo[off(a)..], val(a), 2.0 * g[0]),
                Op::Norm(a) => {
                    let n = y[0];
                    if n > 0.0 {
                        axpy(&mut lo[off(a)..], val(a), g[0] / n.max(stab.eps_zero));
                    }
                }
                Op::Sum(a) => {
                    let len = nodes[a.index()].len;
                    lo[off(a)..off(a) + len].iter_mut().for_each(|x| *x += g[0]);
                }
                Op::MatVec(m, v) => {
                    let cols = nodes[m.index()].cols;
                    let (mv, vv) = (val(m), val(v));
                    if wants(m) {
                        let gm = &mut lo[off(m)..];
                        for (i, gi) in g.iter().enumerate() {
                            if *gi != 0.0 {
                                axpy(&mut gm[i * cols..], vv, *gi);
                            }
                        }
                    }
                    if wants(v) {
                        let gv = &mut lo[off(v)..off(v) + cols];
                        for (i, gi) in g.iter().enumerate() {
                            if *gi != 0.0 {
                                axpy(gv, &mv[i * cols..(i + 1) * cols], *gi);
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts.iter() {
                        let len = nodes[p.index()].len;
                        if wants(p) {
                            axpy(&mut lo[off(p)..], &g[at..at + len], 1.0);
                        }
                        at += len;
                    }
                }
                Op::Slice(a, start) => axpy(&mut lo[off(a) + start..], g, 1.0),
            }
        }

        let mut out = Gradients::default();
        for (i, node) in nodes[..=loss.index()].iter().enumerate() {
            if let Op::Leaf(Some(id)) = node.op {
                let g = &grads[node.off..node.off + node.len];
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { node: i, op: "gradient" });
                }
                match out.by_param.get_mut(&id) {
                    Some(acc) => axpy(acc, g, 1.0),
                    None => {
                        out.by_param.insert(id, g.to_vec());
                    }
                }
            }
        }
        Ok(out)
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

impl Ops for Tape {
    type S = Var;
    type V = Var;
    type M = Var;

    fn stability(&self) -> &StabilityConfig {
        &self.stab
    }

    fn lit(&self, c: f64) -> Var {
        self.constant(&[c])
    }

    fn val(&self, s: &Var) -> f64 {
        self.scalar(*s)
    }

    fn vector(&self, values: &[f64]) -> Var {
        self.constant(values)
    }

    fn values(&self, v: &Var) -> Vec<f64> {
        self.value(*v)
    }

    fn dim(&self, v: &Var) -> usize {
        self.node_len(*v)
    }

    fn mat_shape(&self, m: &Var) -> (usize, usize) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[m.index()];
        assert!(n.cols > 0, "node {} is not a matrix", m.index());
        (n.len / n.cols, n.cols)
    }

    fn add(&self, a: &Var, b: &Var) -> Var {
        self.elementwise(Op::Add(*a, *b), *a, *b, |x, y| x + y)
    }

    fn sub(&self, a: &Var, b: &Var) -> Var {
        self.elementwise(Op::Sub(*a, *b), *a, *b, |x, y| x - y)
    }

    fn mul(&self, a: &Var, b: &Var) -> Var {
        self.elementwise(Op::Mul(*a, *b), *a, *b, |x, y| x * y)
    }

    fn div(&self, a: &Var, b: &Var) -> Var {
        self.elementwise(Op::Div(*a, *b), *a, *b, |x, y| x / y)
    }

    fn unary(&self, f: Unary, a: &Var) -> Var {
        self.vmap(f, a)
    }

    fn vadd(&self, a: &Var, b: &Var) -> Var {
        self.add(a, b)
    }

    fn vsub(&self, a: &Var, b: &Var) -> Var {
        self.sub(a, b)
    }

    fn vneg(&self, a: &Var) -> Var {
        let (o, l) = self.span(*a);
        self.push(Op::Neg(*a), &[*a], l, |d, out| out.extend(d[o..o + l].iter().map(|x| -x)))
    }

    fn scale(&self, v: &Var, s: &Var) -> Var {
        let (vo, vl) = self.span(*v);
        let (so, sl) = self.span(*s);
        assert_eq!(sl, 1, "scale factor must be a scalar");
        self.push(Op::Scale(*v, *s), &[*v, *s], vl, |d, out| {
            let c = d[so];
            out.extend(d[vo..vo + vl].iter().map(|x| x * c))
        })
    }

    fn scale_by(&self, v: &Var, c: f64) -> Var {
        let (vo, vl) = self.span(*v);
        self.push(Op::ScaleBy(*v, c), &[*v], vl, |d, out| {
            out.extend(d[vo..vo + vl].iter().map(|x| x * c))
        })
    }

    fn hadamard(&self, a: &Var, b: &Var) -> Var {
        self.mul(a, b)
    }

    fn vmap(&self, f: Unary, v: &Var) -> Var {
        let (o, l) = self.span(*v);
        let stab = self.stab;
        self.push(Op::Unary(f, *v), &[*v], l, |d, out| {
            out.extend(d[o..o + l].iter().map(|x| f.value(*x, &stab)))
        })
    }

    fn dot(&self, a: &Var, b: &Var) -> Var {
        let (ao, al) = self.span(*a);
        let (bo, bl) = self.span(*b);
        assert_eq!(al, bl, "dot of lengths {al} and {bl}");
        self.push(Op::Dot(*a, *b), &[*a, *b], 1, |d, out| {
            out.push(backend::dot(&d[ao..ao + al], &d[bo..bo + bl]))
        })
    }

    fn norm_sq(&self, v: &Var) -> Var {
        let (o, l) = self.span(*v);
        self.push(Op::NormSq(*v), &[*v], 1, |d, out| out.push(backend::norm_sq(&d[o..o + l])))
    }

    fn norm(&self, v: &Var) -> Var {
        let (o, l) = self.span(*v);
        self.push(Op::Norm(*v), &[*v], 1, |d, out| out.push(backend::norm(&d[o..o + l])))
    }

    fn sum(&self, v: &Var) -> Var {
        let (o, l) = self.span(*v);
        self.push(Op::Sum(*v), &[*v], 1, |d, out| out.push(d[o..o + l].iter().sum()))
    }

    fn matvec(&self, m: &Var, v: &Var) -> Var {
        let (rows, cols) = self.mat_shape(m);
        let (mo, ml) = self.span(*m);
        let (vo, vl) = self.span(*v);
        assert_eq!(vl, cols, "matvec of a {rows}x{cols} matrix with length {vl}");
        self.push(Op::MatVec(*m, *v), &[*m, *v], rows, |d, out| {
            backend::matvec_into(&d[mo..mo + ml], cols, &d[vo..vo + vl], out)
        })
    }

    fn concat(&self, parts: &[Var]) -> Var {
        let spans: Vec<(usize, usize)> = parts.iter().map(|p| self.span(*p)).collect();
        let len = spans.iter().map(|s| s.1).sum();
        self.push(Op::Concat(parts.into()), parts, len, |d, out| {
            for (o, l) in &spans {
                out.extend_from_slice(&d[*o..*o + *l]);
            }
        })
    }

    fn stack(&self, scalars: &[Var]) -> Var {
        self.concat(scalars)
    }

    fn component(&self, v: &Var, i: usize) -> Var {
        let (o, l) = self.span(*v);
        assert!(i < l, "component {i} of a length-{l} vector");
        self.push(Op::Slice(*v, i), &[*v], 1, |d, out| out.push(d[o + i]))
    }

    fn row(&self, m: &Var, i: usize) -> Var {
        let (rows, cols) = self.mat_shape(m);
        assert!(i < rows, "row {i} of a {rows}-row matrix");
        let (o, _) = self.span(*m);
        self.push(Op::Slice(*m, i * cols), &[*m], cols, |d, out| {
            out.extend_from_slice(&d[o + i * cols..o + (i + 1) * cols])
        })
    }

    fn as_vector(&self, m: &Var) -> Var {
        *m
    }
}
