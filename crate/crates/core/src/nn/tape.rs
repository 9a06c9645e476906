//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Only the operations the generators need are provided. Loss heads with closed-form
//! gradients are recorded as fused nodes that carry their input gradients.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{Grads, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    Sum(Var),
    Fused(Vec<(Var, Array2<f64>)>),
}

struct Node {
    op: Op,
    /// `None` for parameters, which are read from the store.
    value: Option<Array2<f64>>,
    /// Depends on a parameter, so gradients must flow into it.
    live: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Row-major storage of `a`, copying only if `a` is not already in standard layout.
fn flat(a: &Array2<f64>) -> std::borrow::Cow<'_, [f64]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

fn from_flat(rows: usize, cols: usize, v: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), v).expect("row-major buffer")
}

fn gather_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let c = x.ncols();
    let xs = flat(x);
    let mut out = Vec::with_capacity(idx.len() * c);
    for &r in idx {
        out.extend_from_slice(&xs[r * c..(r + 1) * c]);
    }
    from_flat(idx.len(), c, out)
}

fn scatter_rows(x: &Array2<f64>, idx: &[usize], n: usize) -> Array2<f64> {
    let c = x.ncols();
    let xs = flat(x);
    let mut out = vec![0.0; n * c];
    for (i, &r) in idx.iter().enumerate() {
        for (o, v) in out[r * c..(r + 1) * c].iter_mut().zip(&xs[i * c..(i + 1) * c]) {
            *o += v;
        }
    }
    from_flat(n, c, out)
}

/// `tanh` through a single `exp`, which is several times cheaper than libm's `tanh`.
fn fast_tanh(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        // Cancellation dominates near zero; the series is exact to double precision here.
        let x2 = x * x;
        return x * (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0);
    }
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn live(&self, v: Var) -> bool {
        self.nodes[v.0].live
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        let live = match &op {
            Op::Const => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulCol(a, b) => {
                self.live(*a) || self.live(*b)
            }
            Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::OneMinus(x)
            | Op::Scale(x, _)
            | Op::SliceCols(x, _, _)
            | Op::Gather(x, _)
            | Op::ScatterAdd(x, _)
            | Op::Sum(x) => self.live(*x),
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.iter().any(|&x| self.live(x)),
            Op::Fused(inputs) => inputs.iter().any(|(x, _)| self.live(*x)),
        };
        self.nodes.push(Node {
            op,
            value: Some(value),
            live,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(a), _) => a,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn constant(&mut self, a: Array2<f64>) -> Var {
        self.push(Op::Const, a)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            live: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    /// `x + row`, broadcasting a `1×n` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.dim(), (1, xv.ncols()), "add_row: shape mismatch");
        let c = xv.ncols();
        let r = flat(rv);
        let mut out = flat(xv).into_owned();
        for chunk in out.chunks_exact_mut(c.max(1)) {
            for (o, b) in chunk.iter_mut().zip(r.iter()) {
                *o += b;
            }
        }
        let v = from_flat(xv.nrows(), c, out);
        self.push(Op::AddRow(x, row), v)
    }

    /// `x ⊙ col`, broadcasting an `m×1` column over every column of `x`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(col));
        assert_eq!(cv.dim(), (xv.nrows(), 1), "mul_col: shape mismatch");
        let c = xv.ncols();
        let k = flat(cv);
        let mut out = flat(xv).into_owned();
        for (chunk, &m) in out.chunks_exact_mut(c.max(1)).zip(k.iter()) {
            for o in chunk {
                *o *= m;
            }
        }
        let v = from_flat(xv.nrows(), c, out);
        self.push(Op::MulCol(x, col), v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(fast_tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| 1.0 - a);
        self.push(Op::OneMinus(x), v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) * c;
        self.push(Op::Scale(x, c), v)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        let rows = self.shape(xs[0]).0;
        assert!(xs.iter().all(|&x| self.shape(x).0 == rows), "concat_cols: row counts differ");
        let parts: Vec<_> = xs.iter().map(|&x| (flat(self.value(x)), self.shape(x).1)).collect();
        let width: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for (p, c) in &parts {
                out.extend_from_slice(&p[r * c..(r + 1) * c]);
            }
        }
        let v = from_flat(rows, width, out);
        self.push(Op::ConcatCols(xs.to_vec()), v)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        let views: Vec<_> = xs.iter().map(|&x| self.value(x).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(Op::ConcatRows(xs.to_vec()), v)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(x, start, len), v)
    }

    /// Rows `idx[i]` of `x`, in order.
    pub fn gather(&mut self, x: Var, idx: Rc<[usize]>) -> Var {
        let v = gather_rows(self.value(x), &idx);
        self.push(Op::Gather(x, idx), v)
    }

    /// `out[idx[i]] += x[i]` into `n` zero rows.
    pub fn scatter_add(&mut self, x: Var, idx: Rc<[usize]>, n: usize) -> Var {
        let v = scatter_rows(self.value(x), &idx, n);
        self.push(Op::ScatterAdd(x, idx), v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    /// A scalar node whose gradient with respect to each input is supplied directly.
    pub fn fused(&mut self, value: f64, inputs: Vec<(Var, Array2<f64>)>) -> Var {
        for (v, g) in &inputs {
            debug_assert_eq!(self.shape(*v), g.dim());
        }
        self.push(Op::Fused(inputs), Array2::from_elem((1, 1), value))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        let mut adj: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::ones(self.shape(loss)));

        let nodes = &self.nodes;
        let acc = |adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>| {
            if !nodes[v.0].live {
                return;
            }
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot => *slot = Some(g),
            }
        };
        let live = |v: &Var| nodes[v.0].live;

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(id) => grads.add(*id, &g),
                Op::MatMul(a, b) => {
                    if live(a) {
                        acc(&mut adj, *a, g.dot(&self.value(*b).t()));
                    }
                    if live(b) {
                        acc(&mut adj, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    if live(a) {
                        acc(&mut adj, *a, &g * self.value(*b));
                    }
                    if live(b) {
                        acc(&mut adj, *b, &g * self.value(*a));
                    }
                }
                Op::AddRow(x, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *x, g);
                }
                Op::MulCol(x, col) => {
                    let c = g.ncols().max(1);
                    let gs = flat(&g);
                    if live(col) {
                        let xs = flat(self.value(*x));
                        let gc: Vec<f64> = gs
                            .chunks_exact(c)
                            .zip(xs.chunks_exact(c))
                            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum())
                            .collect();
                        acc(&mut adj, *col, from_flat(g.nrows(), 1, gc));
                    }
                    if live(x) {
                        let k = flat(self.value(*col));
                        let mut gx = gs.into_owned();
                        for (chunk, &m) in gx.chunks_exact_mut(c).zip(k.iter()) {
                            for o in chunk {
                                *o *= m;
                            }
                        }
                        acc(&mut adj, *x, from_flat(g.nrows(), g.ncols(), gx));
                    }
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut gx = g;
                    Zip::from(&mut gx).and(y).for_each(|a, &y| *a *= y * (1.0 - y));
                    acc(&mut adj, *x, gx);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut gx = g;
                    Zip::from(&mut gx).and(y).for_each(|a, &y| *a *= 1.0 - y * y);
                    acc(&mut adj, *x, gx);
                }
                Op::OneMinus(x) => acc(&mut adj, *x, -g),
                Op::Scale(x, c) => acc(&mut adj, *x, g * *c),
                Op::ConcatCols(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let w = self.shape(x).1;
                        if live(&x) {
                            acc(&mut adj, x, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let h = self.shape(x).0;
                        acc(&mut adj, x, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(x, start, len) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(&mut adj, *x, gx);
                }
                Op::Gather(x, idx) if live(x) => {
                    acc(&mut adj, *x, scatter_rows(&g, idx, self.shape(*x).0));
                }
                Op::Gather(..) => {}
                Op::ScatterAdd(x, idx) => {
                    if live(x) {
                        acc(&mut adj, *x, gather_rows(&g, idx));
                    }
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.shape(*x), g[[0, 0]]);
                    acc(&mut adj, *x, gx);
                }
                Op::Fused(inputs) => {
                    let c = g[[0, 0]];
                    for (x, gi) in inputs {
                        acc(&mut adj, *x, gi * c);
                    }
                }
            }
        }
        grads
    }
}
