//! Reverse-mode tape. Every op appends a node; `backward` walks the nodes
//! in reverse insertion order, which is a valid topological order.

use super::{log_softmax_slice, softmax_slice, ParamId, ParameterStore, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    /// `argmax[g * cols + j]` is the source row chosen for output cell (g, j).
    SegmentMax {
        input: Var,
        argmax: Vec<Option<usize>>,
    },
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    PickSum(Var, Vec<(usize, usize)>),
    Sum(Var),
}

struct Node<T> {
    /// `None` for parameters, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recording of one forward computation over a borrowed parameter store.
pub struct Tape<'a, T: Real> {
    store: &'a ParameterStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Result of [`Tape::backward`]: gradients for every parameter and every
/// grad-requiring node.
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }
}

impl<T: Real> ParameterStore<T> {
    /// Adds tape gradients into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for id in self.ids().collect::<Vec<_>>() {
            if let Some(g) = grads.param(id) {
                for (dst, &src) in self.grad_mut(id).data_mut().iter_mut().zip(g) {
                    *dst = *dst + src;
                }
            }
        }
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(store: &'a ParameterStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParameterStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("only parameter nodes omit their value"),
        }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input that does not receive gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf; with `requires_grad` its gradient is reported by `backward`.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// The parameter as a tape node, created once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = self.shape(a);
        let (p2, q) = self.shape(b);
        if p != p2 {
            return Err(shape_err(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); n * q];
        for i in 0..n {
            let orow = &mut out[i * q..(i + 1) * q];
            for k in 0..p {
                let x = av[i * p + k];
                if x == T::zero() {
                    continue;
                }
                let brow = &bv[k * q..(k + 1) * q];
                for (o, &w) in orow.iter_mut().zip(brow) {
                    *o = *o + x * w;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(n, q, out)?, Op::MatMul(a, b), needs))
    }

    /// Adds a length-`q` bias to every row of an `n × q` input.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, q) = self.shape(x);
        let bt = self.value(b);
        if bt.len() != q {
            return Err(shape_err("add_bias", self.value(x).shape(), bt.shape()));
        }
        let bv = bt.data();
        let xv = self.value(x).data();
        let out: Vec<T> = xv
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % q])
            .collect();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Tensor::matrix(n, q, out)?, Op::AddBias(x, b), needs))
    }

    /// `x · W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let at = self.value(a);
        let bt = self.value(b);
        if at.len() != bt.len() || at.cols() != bt.cols() {
            return Err(shape_err(name, at.shape(), bt.shape()));
        }
        let out: Vec<T> = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = at.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let at = self.value(a);
        let out = Tensor::new(at.shape().to_vec(), at.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let needs = self.needs(a);
        self.push(out, op, needs)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, T::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// Horizontal concatenation of inputs with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).ok_or(TensorError::Empty {
            op: "concat_cols",
        })?;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err(
                    "concat_cols",
                    self.value(parts[0]).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Vertical stacking of inputs with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p).1).ok_or(TensorError::Empty {
            op: "concat_rows",
        })?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(shape_err(
                    "concat_rows",
                    self.value(parts[0]).shape(),
                    self.value(p).shape(),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start >= end || end > cols {
            return Err(shape_err("slice_cols", self.value(a).shape(), &[start, end]));
        }
        let at = self.value(a);
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&at.row(r)[start..end]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(rows, end - start, out)?, Op::SliceCols(a, start, end), needs))
    }

    /// Selects rows by index (embedding lookup when `a` is a table).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let at = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(at.row(i));
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::matrix(idx.len(), cols, out)?,
            Op::GatherRows(a, idx.to_vec()),
            needs,
        ))
    }

    /// For every group of row indices, the coordinatewise maximum of those
    /// rows. Empty groups produce a zero row. Ties route the gradient to the
    /// lowest row index.
    pub fn segment_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let at = self.value(a);
        let mut out = vec![T::zero(); groups.len() * cols];
        let mut argmax = vec![None; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            for &r in members {
                if r >= rows {
                    return Err(TensorError::Index {
                        op: "segment_max",
                        index: r,
                        bound: rows,
                    });
                }
            }
            for j in 0..cols {
                let mut best: Option<(T, usize)> = None;
                for &r in members {
                    let v = at.data()[r * cols + j];
                    best = match best {
                        None => Some((v, r)),
                        Some((bv, br)) if v > bv || (v == bv && r < br) => Some((v, r)),
                        keep => keep,
                    };
                }
                if let Some((v, r)) = best {
                    out[g * cols + j] = v;
                    argmax[g * cols + j] = Some(r);
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::matrix(groups.len(), cols, out)?,
            Op::SegmentMax { input: a, argmax },
            needs,
        ))
    }

    /// Coordinatewise maximum over all rows of `a`; rejects zero rows.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, _) = self.shape(a);
        if rows == 0 || self.value(a).is_empty() {
            return Err(TensorError::Empty { op: "max_rows" });
        }
        let all: Vec<usize> = (0..rows).collect();
        self.segment_max(a, &[all])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let at = self.value(a);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = at.data()[r * cols + c];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(cols, rows, out)?, Op::Transpose(a), needs))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let at = self.value(a);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(softmax_slice(at.row(r)));
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::SoftmaxRows(a), needs))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let at = self.value(a);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(log_softmax_slice(at.row(r)));
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::LogSoftmaxRows(a), needs))
    }

    /// Scalar sum of the selected `(row, col)` cells.
    pub fn pick_sum(&mut self, a: Var, cells: &[(usize, usize)]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let at = self.value(a);
        let mut s = T::zero();
        for &(r, c) in cells {
            if r >= rows || c >= cols {
                return Err(TensorError::Index {
                    op: "pick_sum",
                    index: r * cols + c,
                    bound: rows * cols,
                });
            }
            s = s + at.data()[r * cols + c];
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(s), Op::PickSum(a, cells.to_vec()), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    /// Gradients of the scalar `loss` with respect to every reachable
    /// grad-requiring node and parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Vec<T>>> = vec![None; self.store.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = self.value(Var(i));
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let slot = add_into(&mut params[id.0], g.len());
                    for (d, &s) in slot.iter_mut().zip(&g) {
                        *d = *d + s;
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, p) = self.shape(*a);
                    let q = self.shape(*b).1;
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    if self.needs(*a) {
                        let da = add_into(&mut grads[a.0], n * p);
                        for r in 0..n {
                            let grow = &g[r * q..(r + 1) * q];
                            for k in 0..p {
                                let brow = &bv[k * q..(k + 1) * q];
                                let mut s = T::zero();
                                for (&x, &y) in grow.iter().zip(brow) {
                                    s = s + x * y;
                                }
                                da[r * p + k] = da[r * p + k] + s;
                            }
                        }
                    }
                    if self.needs(*b) {
                        let db = add_into(&mut grads[b.0], p * q);
                        for r in 0..n {
                            let grow = &g[r * q..(r + 1) * q];
                            for k in 0..p {
                                let x = av[r * p + k];
                                if x == T::zero() {
                                    continue;
                                }
                                let drow = &mut db[k * q..(k + 1) * q];
                                for (d, &gg) in drow.iter_mut().zip(grow) {
                                    *d = *d + x * gg;
                                }
                            }
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    let q = self.value(*b).len();
                    if self.needs(*x) {
                        let dx = add_into(&mut grads[x.0], g.len());
                        for (d, &s) in dx.iter_mut().zip(&g) {
                            *d = *d + s;
                        }
                    }
                    if self.needs(*b) {
                        let db = add_into(&mut grads[b.0], q);
                        for (k, &s) in g.iter().enumerate() {
                            db[k % q] = db[k % q] + s;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            let d = add_into(&mut grads[v.0], g.len());
                            for (dd, &s) in d.iter_mut().zip(&g) {
                                *dd = *dd + s;
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    if self.needs(*a) {
                        let d = add_into(&mut grads[a.0], g.len());
                        for k in 0..g.len() {
                            d[k] = d[k] + g[k] * bv[k];
                        }
                    }
                    if self.needs(*b) {
                        let d = add_into(&mut grads[b.0], g.len());
                        for k in 0..g.len() {
                            d[k] = d[k] + g[k] * av[k];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let d = add_into(&mut grads[a.0], g.len());
                    for (dd, &s) in d.iter_mut().zip(&g) {
                        *dd = *dd + s * *c;
                    }
                }
                Op::Tanh(a) => {
                    let y = out.data();
                    let d = add_into(&mut grads[a.0], g.len());
                    for k in 0..g.len() {
                        d[k] = d[k] + g[k] * (T::one() - y[k] * y[k]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = out.data();
                    let d = add_into(&mut grads[a.0], g.len());
                    for k in 0..g.len() {
                        d[k] = d[k] + g[k] * y[k] * (T::one() - y[k]);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d = add_into(&mut grads[a.0], g.len());
                    for k in 0..g.len() {
                        if x[k] > T::zero() {
                            d[k] = d[k] + g[k];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = out.rows();
                    let total = out.cols();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.shape(*p).1;
                        if self.needs(*p) {
                            let d = add_into(&mut grads[p.0], rows * c);
                            for r in 0..rows {
                                for j in 0..c {
                                    d[r * c + j] = d[r * c + j] + g[r * total + offset + j];
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        if self.needs(*p) {
                            let d = add_into(&mut grads[p.0], n);
                            for k in 0..n {
                                d[k] = d[k] + g[offset + k];
                            }
                        }
                        offset += n;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let (rows, cols) = self.shape(*a);
                    let w = end - start;
                    let d = add_into(&mut grads[a.0], rows * cols);
                    for r in 0..rows {
                        for j in 0..w {
                            d[r * cols + start + j] = d[r * cols + start + j] + g[r * w + j];
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    let (rows, cols) = self.shape(*a);
                    let d = add_into(&mut grads[a.0], rows * cols);
                    for (o, &src) in idx.iter().enumerate() {
                        for j in 0..cols {
                            d[src * cols + j] = d[src * cols + j] + g[o * cols + j];
                        }
                    }
                }
                Op::SegmentMax { input, argmax } => {
                    let (rows, cols) = self.shape(*input);
                    let d = add_into(&mut grads[input.0], rows * cols);
                    for (cell, src) in argmax.iter().enumerate() {
                        if let Some(r) = src {
                            let j = cell % cols;
                            d[r * cols + j] = d[r * cols + j] + g[cell];
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (rows, cols) = self.shape(*a);
                    let d = add_into(&mut grads[a.0], rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            d[r * cols + c] = d[r * cols + c] + g[c * rows + r];
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (rows, cols) = (out.rows(), out.cols());
                    let y = out.data();
                    let d = add_into(&mut grads[a.0], rows * cols);
                    for r in 0..rows {
                        let s: T = (0..cols).map(|j| g[r * cols + j] * y[r * cols + j]).sum();
                        for j in 0..cols {
                            let k = r * cols + j;
                            d[k] = d[k] + y[k] * (g[k] - s);
                        }
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let (rows, cols) = (out.rows(), out.cols());
                    let y = out.data();
                    let d = add_into(&mut grads[a.0], rows * cols);
                    for r in 0..rows {
                        let s: T = g[r * cols..(r + 1) * cols].iter().copied().sum();
                        for j in 0..cols {
                            let k = r * cols + j;
                            d[k] = d[k] + g[k] - y[k].exp() * s;
                        }
                    }
                }
                Op::PickSum(a, cells) => {
                    let (rows, cols) = self.shape(*a);
                    let d = add_into(&mut grads[a.0], rows * cols);
                    for &(r, c) in cells {
                        d[r * cols + c] = d[r * cols + c] + g[0];
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let d = add_into(&mut grads[a.0], n);
                    for dd in d.iter_mut() {
                        *dd = *dd + g[0];
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}
