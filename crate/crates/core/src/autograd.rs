//! Minimal reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Leaves
//! are either constants ([`Graph::input`]) or parameters borrowed from a
//! [`ParamStore`]. Calling [`Graph::backward`] on a scalar node walks the tape
//! in reverse and returns gradients for every parameter that was touched.
//!
//! Everything is two-dimensional: vectors are `1 x D` rows and scalars are
//! `1 x 1`. That is enough for the models in this crate and keeps every
//! backward rule a few lines of `ndarray`.

use std::collections::{BTreeMap, HashMap};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: Array2<f64>,
}

/// Named collection of trainable matrices.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is always a
    /// model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + row` with `row` broadcast over the rows of `x`.
    AddRow(Var, Var),
    /// `x * row` with `row` broadcast over the rows of `x`.
    MulRow(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant mask.
    MulConst(Var, Array2<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Normalize(Var, Array1<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Bce(Var, Array2<f64>, f64),
    Pick(Var, Vec<(usize, usize)>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to parameters.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            match self.grads.get_mut(&id) {
                Some(acc) => *acc += &g,
                None => {
                    self.grads.insert(id, g);
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    /// Global L2 norm over all gradients.
    pub fn norm(&self) -> f64 {
        self.grads
            .values()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Operation tape. Parameters are read from the borrowed store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.input(Array2::from_elem((1, 1), value))
    }

    /// Leaf for a parameter. Each parameter enters the tape once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a 1 x D row");
        let out = self.value(x) + self.value(row);
        self.push(out, Op::AddRow(x, row))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row expects a 1 x D row");
        let out = self.value(x) * self.value(row);
        self.push(out, Op::MulRow(x, row))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x) * factor;
        self.push(out, Op::Scale(x, factor))
    }

    pub fn mul_const(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let out = self.value(x) * &mask;
        self.push(out, Op::MulConst(x, mask))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        let (r, c) = self.shape(x);
        let ones = self.input(Array2::ones((r, c)));
        self.add(ones, neg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x).view());
        self.push(out, Op::Softmax(x))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Row-wise standardisation to zero mean and unit variance.
    pub fn normalize(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut out = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std[i] = inv;
        }
        self.push(out, Op::Normalize(x, inv_std))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_rows of nothing");
        let views: Vec<_> = xs.iter().map(|v| self.value(*v).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(out, Op::ConcatRows(xs.to_vec()))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = xs.iter().map(|v| self.value(*v).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(xs.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(x, start))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let out = self.value(x).select(Axis(0), idx);
        self.push(out, Op::GatherRows(x, idx.to_vec()))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).t().to_owned();
        self.push(out, Op::Transpose(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Array2::from_elem((1, 1), v.sum() / v.len().max(1) as f64);
        self.push(out, Op::Mean(x))
    }

    /// Mean binary cross-entropy between probabilities `p` and constant
    /// `target`, with `p` clipped to `[eps, 1 - eps]`. Clipped entries have
    /// zero gradient.
    pub fn bce(&mut self, p: Var, target: Array2<f64>, eps: f64) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.dim(), target.dim(), "bce shape mismatch");
        let n = pv.len().max(1) as f64;
        let total: f64 = Zip::from(pv)
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + bce_term(p, t, eps));
        let out = Array2::from_elem((1, 1), total / n);
        self.push(out, Op::Bce(p, target, eps))
    }

    /// Selects individual entries into a `1 x K` row.
    pub fn pick(&mut self, x: Var, at: &[(usize, usize)]) -> Var {
        let xv = self.value(x);
        let out = Array2::from_shape_fn((1, at.len()), |(_, k)| xv[at[k]]);
        self.push(out, Op::Pick(x, at.to_vec()))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, delta: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    out.grads.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.nodes[a.0].needs_grad {
                        send(*a, g.dot(&bv.t()), &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, av.t().dot(&g), &mut grads);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.nodes[a.0].needs_grad {
                        send(*a, g.dot(bv), &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, g.t().dot(av), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, -g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    send(*a, ga, &mut grads);
                    send(*b, gb, &mut grads);
                }
                Op::AddRow(x, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(*row, grow, &mut grads);
                    send(*x, g, &mut grads);
                }
                Op::MulRow(x, row) => {
                    let grow = (&g * self.value(*x)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(*row, grow, &mut grads);
                    send(*x, &g * self.value(*row), &mut grads);
                }
                Op::Scale(x, f) => send(*x, g * *f, &mut grads),
                Op::MulConst(x, mask) => send(*x, g * mask, &mut grads),
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    send(*x, g * &y.mapv(|y| y * (1.0 - y)), &mut grads);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    send(*x, g * &y.mapv(|y| 1.0 - y * y), &mut grads);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    send(*x, g * &xv.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }), &mut grads);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let gy = &g * y;
                    let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*x, gy - &(y * &dot), &mut grads);
                }
                Op::LogSoftmax(x) => {
                    let sm = node.value.mapv(f64::exp);
                    let rowsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*x, &g - &(sm * &rowsum), &mut grads);
                }
                Op::Normalize(x, inv_std) => {
                    let y = &node.value;
                    let d = y.ncols() as f64;
                    let mut gx = g.clone();
                    for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let mean_g = gr.sum() / d;
                        let mean_gy = gr.dot(&yr) / d;
                        let inv = inv_std[r];
                        Zip::from(&mut row)
                            .and(&gr)
                            .and(&yr)
                            .for_each(|o, &gv, &yv| *o = inv * (gv - mean_g - yv * mean_gy));
                    }
                    send(*x, gx, &mut grads);
                }
                Op::ConcatRows(xs) => {
                    let mut start = 0;
                    for x in xs {
                        let n = self.shape(*x).0;
                        send(*x, g.slice(s![start..start + n, ..]).to_owned(), &mut grads);
                        start += n;
                    }
                }
                Op::ConcatCols(xs) => {
                    let mut start = 0;
                    for x in xs {
                        let n = self.shape(*x).1;
                        send(*x, g.slice(s![.., start..start + n]).to_owned(), &mut grads);
                        start += n;
                    }
                }
                Op::SliceRows(x, start) => {
                    let mut full = Array2::zeros(self.shape(*x));
                    let n = g.nrows();
                    full.slice_mut(s![*start..*start + n, ..]).assign(&g);
                    send(*x, full, &mut grads);
                }
                Op::SliceCols(x, start) => {
                    let mut full = Array2::zeros(self.shape(*x));
                    let n = g.ncols();
                    full.slice_mut(s![.., *start..*start + n]).assign(&g);
                    send(*x, full, &mut grads);
                }
                Op::GatherRows(x, idx) => {
                    let mut full = Array2::zeros(self.shape(*x));
                    for (k, &r) in idx.iter().enumerate() {
                        let mut dst = full.row_mut(r);
                        dst += &g.row(k);
                    }
                    send(*x, full, &mut grads);
                }
                Op::Transpose(x) => send(*x, g.t().to_owned(), &mut grads),
                Op::Sum(x) => {
                    let gv = g[[0, 0]];
                    send(*x, Array2::from_elem(self.shape(*x), gv), &mut grads);
                }
                Op::Mean(x) => {
                    let shape = self.shape(*x);
                    let n = (shape.0 * shape.1).max(1) as f64;
                    send(*x, Array2::from_elem(shape, g[[0, 0]] / n), &mut grads);
                }
                Op::Bce(p, target, eps) => {
                    let pv = self.value(*p);
                    let n = pv.len().max(1) as f64;
                    let scale = g[[0, 0]] / n;
                    let mut gp = Array2::zeros(pv.dim());
                    Zip::from(&mut gp).and(pv).and(target).for_each(|o, &p, &t| {
                        if p > *eps && p < 1.0 - eps {
                            *o = scale * (-t / p + (1.0 - t) / (1.0 - p));
                        }
                    });
                    send(*p, gp, &mut grads);
                }
                Op::Pick(x, at) => {
                    let mut full = Array2::zeros(self.shape(*x));
                    for (k, pos) in at.iter().enumerate() {
                        full[*pos] += g[[0, k]];
                    }
                    send(*x, full, &mut grads);
                }
            }
        }
        out
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Input | Op::Param(_) => vec![],
        Op::MatMul(a, b)
        | Op::MatMulNt(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::MulRow(a, b) => vec![*a, *b],
        Op::Scale(x, _)
        | Op::MulConst(x, _)
        | Op::Sigmoid(x)
        | Op::Tanh(x)
        | Op::Relu(x)
        | Op::Softmax(x)
        | Op::LogSoftmax(x)
        | Op::Normalize(x, _)
        | Op::SliceRows(x, _)
        | Op::SliceCols(x, _)
        | Op::GatherRows(x, _)
        | Op::Transpose(x)
        | Op::Sum(x)
        | Op::Mean(x)
        | Op::Bce(x, _, _)
        | Op::Pick(x, _) => vec![*x],
        Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
    }
}

/// One clipped binary cross-entropy term.
pub fn bce_term(p: f64, t: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Numerically stable row-wise softmax on a plain array.
pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
