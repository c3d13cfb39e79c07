//! Dynamic reverse-mode tape.
//!
//! Every forward pass builds a fresh [`Tape`]. Operations append nodes in
//! execution order, so the node list is already topologically sorted and
//! [`Tape::backward`] only has to walk it in reverse.

use std::borrow::Cow;

use super::params::{Grads, ParamId, ParamSet};
use crate::error::{ManError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Lookup { param: ParamId, rows: Vec<usize> },
    MatMul(usize, usize),
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    Affine { a: usize, mul: f64 },
    Clamp { a: usize, lo: f64, hi: f64 },
    MaskedSoftmax { a: usize, mask: Vec<bool> },
    Reduce { op: Reduction, a: usize, axis: Option<usize> },
    Concat { parts: Vec<usize>, axis: usize },
    Transpose(usize),
    Reshape(usize),
    SelectRow { a: usize, row: usize },
    Index { a: usize, idx: usize },
    ScaleRows { a: usize, w: usize },
    RowNormalize(usize),
    Norm(usize),
    SumSquares { a: usize, skip_rows: Vec<usize> },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node<'p>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'p> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_values(), Op::Constant, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf referencing a parameter's values without copying them.
    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.values()),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gathers rows of a parameter matrix; gradient flows back row-sparse.
    pub fn lookup(&mut self, id: ParamId, rows: &[usize]) -> Result<Var> {
        let t = self.params.get(id);
        let (n, cols) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(ManError::shape(format!(
                    "row {r} out of range for table {} with {n} rows",
                    self.params.name(id)
                )));
            }
            out.extend_from_slice(t.row(r));
        }
        Ok(self.push(
            vec![rows.len(), cols],
            out,
            Op::Lookup {
                param: id,
                rows: rows.to_vec(),
            },
            true,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(ManError::shape(format!(
                "matmul of {:?} and {:?}",
                sa, sb
            )));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a), self.value(b), m, k, p);
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![m, p], out, Op::MatMul(a.0, b.0), ng))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        let shape = if sa == sb || lb == 1 {
            sa.to_vec()
        } else if la == 1 {
            sb.to_vec()
        } else {
            return Err(ManError::shape(format!(
                "elementwise {:?} of {:?} and {:?}",
                op, sa, sb
            )));
        };
        let (va, vb) = (self.value(a), self.value(b));
        let n = la.max(lb);
        let f = match op {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let out: Vec<f64> = (0..n)
            .map(|i| f(va[if la == 1 { 0 } else { i }], vb[if lb == 1 { 0 } else { i }]))
            .collect();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::Binary(op, a.0, b.0), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out: Vec<f64> = match op {
            Unary::Tanh => va.iter().map(|x| x.tanh()).collect(),
            Unary::Sigmoid => va.iter().map(|&x| sigmoid(x)).collect(),
            Unary::Exp => va.iter().map(|x| x.exp()).collect(),
            Unary::Log => {
                if let Some(bad) = va.iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                    return Err(ManError::Domain(format!("log of non-positive value {bad}")));
                }
                va.iter().map(|x| x.ln()).collect()
            }
            Unary::Sqrt => {
                if let Some(bad) = va.iter().find(|&&x| x < 0.0 || x.is_nan()) {
                    return Err(ManError::Domain(format!("sqrt of negative value {bad}")));
                }
                va.iter().map(|x| x.sqrt()).collect()
            }
        };
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(shape, out, Op::Unary(op, a.0), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    /// `mul * a + shift`.
    pub fn affine(&mut self, a: Var, mul: f64, shift: f64) -> Var {
        let out = self.value(a).iter().map(|x| mul * x + shift).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, out, Op::Affine { a: a.0, mul }, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    /// Elementwise clamp; gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).iter().map(|x| x.clamp(lo, hi)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, out, Op::Clamp { a: a.0, lo, hi }, ng)
    }

    /// Softmax over the positions where `mask` is true; masked positions are 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let out = masked_softmax_raw(self.value(a), mask)?;
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(
            shape,
            out,
            Op::MaskedSoftmax {
                a: a.0,
                mask: mask.to_vec(),
            },
            ng,
        ))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mask = vec![true; self.value(a).len()];
        self.masked_softmax(a, &mask)
    }

    /// Sum or mean over everything (`axis = None`) or one axis of a rank ≤ 2 tensor.
    pub fn reduce(&mut self, op: Reduction, a: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let va = self.value(a);
        let (out_shape, out) = match axis {
            None => {
                let s: f64 = va.iter().sum();
                let n = va.len().max(1) as f64;
                (vec![1], vec![if op == Reduction::Mean { s / n } else { s }])
            }
            Some(ax) if ax >= shape.len() || shape.len() > 2 => {
                return Err(ManError::shape(format!(
                    "reduction axis {ax} out of range for shape {:?}",
                    shape
                )))
            }
            Some(_) if shape.len() == 1 => {
                let s: f64 = va.iter().sum();
                let n = va.len().max(1) as f64;
                (vec![1], vec![if op == Reduction::Mean { s / n } else { s }])
            }
            Some(ax) => {
                let (r, c) = (shape[0], shape[1]);
                let (len, n) = if ax == 0 { (c, r) } else { (r, c) };
                let mut out = vec![0.0; len];
                for i in 0..r {
                    for j in 0..c {
                        out[if ax == 0 { j } else { i }] += va[i * c + j];
                    }
                }
                if op == Reduction::Mean && n > 0 {
                    out.iter_mut().for_each(|x| *x /= n as f64);
                }
                (vec![len], out)
            }
        };
        let ng = self.needs(&[a]);
        Ok(self.push(out_shape, out, Op::Reduce { op, a: a.0, axis }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Sum, a, None).expect("full reduction")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Mean, a, None).expect("full reduction")
    }

    /// Concatenates rank-1 parts (axis 0) or rank-2 parts along rows or columns.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| ManError::shape("concat of zero parts"))?;
        let rank = self.shape(*first).len();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(ManError::shape(format!(
                "concat axis {axis} invalid for rank {rank}"
            )));
        }
        for p in parts {
            let s = self.shape(*p);
            let s0 = self.shape(*first);
            let side_ok = s.len() == rank
                && (0..rank).all(|d| d == axis || s[d] == s0[d]);
            if !side_ok {
                return Err(ManError::shape(format!(
                    "concat along axis {axis}: {:?} does not match {:?}",
                    s, s0
                )));
            }
        }
        let (shape, out) = if rank == 1 || axis == 0 {
            let mut shape = self.shape(*first).to_vec();
            shape[0] = parts.iter().map(|p| self.shape(*p)[0]).sum();
            let out = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
            (shape, out)
        } else {
            let r = self.shape(*first)[0];
            let c: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for p in parts {
                    let pc = self.shape(*p)[1];
                    out.extend_from_slice(&self.value(*p)[i * pc..(i + 1) * pc]);
                }
            }
            (vec![r, c], out)
        };
        let ng = self.needs(parts);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            ng,
        ))
    }

    /// Matrix transpose; a rank-1 input is treated as a row vector.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() > 2 {
            return Err(ManError::shape(format!("transpose of rank {}", shape.len())));
        }
        let (r, c) = rows_cols(shape);
        let va = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = va[i * c + j];
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(vec![c, r], out, Op::Transpose(a.0), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(ManError::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(a),
                shape
            )));
        }
        let out = self.value(a).to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a.0), ng))
    }

    /// Row `row` of a matrix as a `1×cols` matrix.
    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(a));
        if row >= r {
            return Err(ManError::shape(format!("row {row} of {r}-row matrix")));
        }
        let out = self.value(a)[row * c..(row + 1) * c].to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(vec![1, c], out, Op::SelectRow { a: a.0, row }, ng))
    }

    /// Element `idx` of the flattened tensor as a scalar.
    pub fn index(&mut self, a: Var, idx: usize) -> Result<Var> {
        let n = self.value(a).len();
        if idx >= n {
            return Err(ManError::shape(format!("index {idx} out of {n}")));
        }
        let out = vec![self.value(a)[idx]];
        let ng = self.needs(&[a]);
        Ok(self.push(vec![1], out, Op::Index { a: a.0, idx }, ng))
    }

    /// Multiplies row `i` of `a` by `w[i]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(a));
        if self.value(w).len() != r {
            return Err(ManError::shape(format!(
                "scale_rows: {} weights for {:?}",
                self.value(w).len(),
                self.shape(a)
            )));
        }
        let (va, vw) = (self.value(a), self.value(w));
        let out = (0..r * c).map(|k| va[k] * vw[k / c]).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, w]);
        Ok(self.push(shape, out, Op::ScaleRows { a: a.0, w: w.0 }, ng))
    }

    /// Scales every row to unit L2 norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let (r, c) = rows_cols(self.shape(a));
        let va = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &va[i * c..(i + 1) * c];
            let n = norm2(row);
            if n > 0.0 {
                for j in 0..c {
                    out[i * c + j] = row[j] / n;
                }
            }
        }
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, out, Op::RowNormalize(a.0), ng)
    }

    /// Frobenius (L2) norm of all elements. The gradient at zero is taken as zero.
    pub fn norm(&mut self, a: Var) -> Var {
        let n = norm2(self.value(a));
        let ng = self.needs(&[a]);
        self.push(vec![1], vec![n], Op::Norm(a.0), ng)
    }

    /// Sum of squares of all elements outside `skip_rows`.
    pub fn sum_squares(&mut self, a: Var, skip_rows: &[usize]) -> Var {
        let (r, c) = rows_cols(self.shape(a));
        let va = self.value(a);
        let s = (0..r)
            .filter(|i| !skip_rows.contains(i))
            .flat_map(|i| va[i * c..(i + 1) * c].iter())
            .map(|x| x * x)
            .sum();
        let ng = self.needs(&[a]);
        self.push(
            vec![1],
            vec![s],
            Op::SumSquares {
                a: a.0,
                skip_rows: skip_rows.to_vec(),
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar root. Returns gradients for every parameter
    /// reachable from `root`.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_node = self.node(root);
        if root_node.value.len() != 1 {
            return Err(ManError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut out = Grads::new();

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(
        &self,
        node: &Node<'p>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Grads,
    ) {
        let nodes = &self.nodes;
        // Accumulates `f(i)` for i in 0..len into the gradient slot of `target`.
        let mut acc = |target: usize, len: usize, f: &dyn Fn(usize) -> f64| {
            if !nodes[target].needs_grad {
                return;
            }
            let slot = grads[target].get_or_insert_with(|| vec![0.0; len]);
            for (i, s) in slot.iter_mut().enumerate() {
                *s += f(i);
            }
        };
        let val = |i: usize| -> &[f64] { &nodes[i].value };

        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.add_dense(*id, g),
            Op::Lookup { param, rows } => {
                let cols = node.shape[1];
                for (k, &r) in rows.iter().enumerate() {
                    out.add_row(*param, r, cols, &g[k * cols..(k + 1) * cols]);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let p = nodes[*b].shape[1];
                let (va, vb) = (val(*a), val(*b));
                // dA = G·Bᵀ, dB = Aᵀ·G
                if nodes[*a].needs_grad {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..p {
                            let gij = g[i * p + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for t in 0..k {
                                da[i * k + t] += gij * vb[t * p + j];
                            }
                        }
                    }
                    acc(*a, m * k, &|i| da[i]);
                }
                if nodes[*b].needs_grad {
                    let mut db = vec![0.0; k * p];
                    for i in 0..m {
                        for t in 0..k {
                            let ait = va[i * k + t];
                            if ait == 0.0 {
                                continue;
                            }
                            for j in 0..p {
                                db[t * p + j] += ait * g[i * p + j];
                            }
                        }
                    }
                    acc(*b, k * p, &|i| db[i]);
                }
            }
            Op::Binary(op, a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (la, lb) = (va.len(), vb.len());
                let n = g.len();
                let ia = |i: usize| if la == 1 { 0 } else { i };
                let ib = |i: usize| if lb == 1 { 0 } else { i };
                let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                    Binary::Add => (g.to_vec(), g.to_vec()),
                    Binary::Sub => (g.to_vec(), g.iter().map(|x| -x).collect()),
                    Binary::Mul => (
                        (0..n).map(|i| g[i] * vb[ib(i)]).collect(),
                        (0..n).map(|i| g[i] * va[ia(i)]).collect(),
                    ),
                };
                if la == 1 && n > 1 {
                    let s: f64 = ga.iter().sum();
                    acc(*a, 1, &|_| s);
                } else {
                    acc(*a, la, &|i| ga[i]);
                }
                if lb == 1 && n > 1 {
                    let s: f64 = gb.iter().sum();
                    acc(*b, 1, &|_| s);
                } else {
                    acc(*b, lb, &|i| gb[i]);
                }
            }
            Op::Unary(op, a) => {
                let x = val(*a);
                let y = &node.value;
                let n = g.len();
                match op {
                    Unary::Tanh => acc(*a, n, &|i| g[i] * (1.0 - y[i] * y[i])),
                    Unary::Sigmoid => acc(*a, n, &|i| g[i] * y[i] * (1.0 - y[i])),
                    Unary::Exp => acc(*a, n, &|i| g[i] * y[i]),
                    Unary::Log => acc(*a, n, &|i| g[i] / x[i]),
                    Unary::Sqrt => acc(*a, n, &|i| {
                        if y[i] > 0.0 {
                            g[i] * 0.5 / y[i]
                        } else {
                            0.0
                        }
                    }),
                }
            }
            Op::Affine { a, mul } => acc(*a, g.len(), &|i| g[i] * mul),
            Op::Clamp { a, lo, hi } => {
                let x = val(*a);
                acc(*a, g.len(), &|i| if x[i] < *lo || x[i] > *hi { 0.0 } else { g[i] });
            }
            Op::MaskedSoftmax { a, mask } => {
                let y = &node.value;
                let dot: f64 = (0..y.len()).filter(|&i| mask[i]).map(|i| y[i] * g[i]).sum();
                acc(*a, y.len(), &|i| if mask[i] { y[i] * (g[i] - dot) } else { 0.0 });
            }
            Op::Reduce { op, a, axis } => {
                let shape = &nodes[*a].shape;
                let len = val(*a).len();
                match (axis, shape.len()) {
                    (None, _) | (Some(_), 1) => {
                        let c = if *op == Reduction::Mean { g[0] / len.max(1) as f64 } else { g[0] };
                        acc(*a, len, &|_| c);
                    }
                    (Some(ax), _) => {
                        let (r, c) = (shape[0], shape[1]);
                        let n = if *ax == 0 { r } else { c };
                        let f = if *op == Reduction::Mean { 1.0 / n.max(1) as f64 } else { 1.0 };
                        let ax = *ax;
                        acc(*a, len, &|k| {
                            let (i, j) = (k / c, k % c);
                            f * g[if ax == 0 { j } else { i }]
                        });
                        let _ = r;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let rank = node.shape.len();
                if rank == 1 || *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let len = val(p).len();
                        let o = off;
                        acc(p, len, &|i| g[o + i]);
                        off += len;
                    }
                } else {
                    let total = node.shape[1];
                    let mut off = 0;
                    for &p in parts {
                        let pc = nodes[p].shape[1];
                        let len = val(p).len();
                        let o = off;
                        acc(p, len, &|k| g[(k / pc) * total + o + k % pc]);
                        off += pc;
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = rows_cols(&nodes[*a].shape);
                acc(*a, r * c, &|k| g[(k % c) * r + k / c]);
            }
            Op::Reshape(a) => acc(*a, g.len(), &|i| g[i]),
            Op::SelectRow { a, row } => {
                let (r, c) = rows_cols(&nodes[*a].shape);
                let row = *row;
                acc(*a, r * c, &|k| if k / c == row { g[k % c] } else { 0.0 });
            }
            Op::Index { a, idx } => {
                let len = val(*a).len();
                let idx = *idx;
                acc(*a, len, &|i| if i == idx { g[0] } else { 0.0 });
            }
            Op::ScaleRows { a, w } => {
                let (r, c) = rows_cols(&nodes[*a].shape);
                let (va, vw) = (val(*a), val(*w));
                acc(*a, r * c, &|k| g[k] * vw[k / c]);
                acc(*w, r, &|i| (0..c).map(|j| g[i * c + j] * va[i * c + j]).sum());
            }
            Op::RowNormalize(a) => {
                let (r, c) = rows_cols(&nodes[*a].shape);
                let x = val(*a);
                let y = &node.value;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let n = norm2(&x[i * c..(i + 1) * c]);
                    if n == 0.0 {
                        continue;
                    }
                    let dot: f64 = (0..c).map(|j| y[i * c + j] * g[i * c + j]).sum();
                    for j in 0..c {
                        dx[i * c + j] = (g[i * c + j] - y[i * c + j] * dot) / n;
                    }
                }
                acc(*a, r * c, &|k| dx[k]);
            }
            Op::Norm(a) => {
                let x = val(*a);
                let n = node.value[0];
                if n > 0.0 {
                    acc(*a, x.len(), &|i| g[0] * x[i] / n);
                }
            }
            Op::SumSquares { a, skip_rows } => {
                let (_, c) = rows_cols(&nodes[*a].shape);
                let x = val(*a);
                acc(*a, x.len(), &|k| {
                    if skip_rows.contains(&(k / c)) {
                        0.0
                    } else {
                        2.0 * x[k] * g[0]
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for t in 0..k {
            let ait = a[i * k + t];
            if ait == 0.0 {
                continue;
            }
            let brow = &b[t * p..(t + 1) * p];
            let orow = &mut out[i * p..(i + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += ait * bv;
            }
        }
    }
    out
}

/// Max-shifted softmax restricted to `mask`; masked entries are exactly zero.
pub fn masked_softmax_raw(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(ManError::shape(format!(
            "{} logits with a mask of length {}",
            logits.len(),
            mask.len()
        )));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ManError::EmptyAttention);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}
