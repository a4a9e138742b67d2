//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of one forward pass together with
//! whatever the backward rule needs. Trainable tensors live in a
//! [`ParamStore`] that the tape borrows; [`Tape::backward`] walks the record
//! once in reverse and returns [`Gradients`] keyed by parameter.
//!
//! The op set is deliberately small: what an LSTM, embedding lookups and a
//! masked relative-error loss need.
//!
//! ```
//! use tte::autograd::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::vector(vec![3.0]), false);
//! let tape = &mut Tape::new(&store);
//! let x = tape.param(w);
//! let y = tape.square(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(tape.scalar(loss), 9.0);
//! assert_eq!(grads.dense(&store, w), vec![6.0]);
//! ```

mod gradcheck;
mod lstm;

use std::collections::BTreeMap;

use rand::Rng;

pub use gradcheck::{grad_check, CoordCheck, GradCheckConfig, GradCheckReport};
pub use lstm::LstmParams;

use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::vector(vec![v])
    }

    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(lo..=hi)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Embedding tables: gradients and optimizer updates touch only the
    /// rows looked up during the pass.
    pub sparse_rows: bool,
}

/// Named registry of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, sparse_rows: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            sparse_rows,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradient of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    /// Row index -> gradient of that row, for embedding tables.
    Rows(BTreeMap<usize, Vec<f64>>),
}

impl ParamGrad {
    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        match self {
            ParamGrad::Dense(g) => Box::new(g.iter()),
            ParamGrad::Rows(rows) => Box::new(rows.values().flatten()),
        }
    }

    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        match self {
            ParamGrad::Dense(g) => Box::new(g.iter_mut()),
            ParamGrad::Rows(rows) => Box::new(rows.values_mut().flatten()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn empty(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamGrad)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Full dense gradient of a parameter (zeros where nothing flowed).
    pub fn dense(&self, store: &ParamStore, id: ParamId) -> Vec<f64> {
        let value = store.value(id);
        let mut out = vec![0.0; value.len()];
        match self.get(id) {
            None => {}
            Some(ParamGrad::Dense(g)) => out.copy_from_slice(g),
            Some(ParamGrad::Rows(rows)) => {
                let dim = value.shape()[1];
                for (&r, g) in rows {
                    out[r * dim..(r + 1) * dim].copy_from_slice(g);
                }
            }
        }
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.values())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.values_mut() {
                *v *= factor;
            }
        }
    }

    /// Adds `other` into `self` (gradient accumulation).
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (slot, g) in self.grads.iter_mut().zip(&other.grads) {
            let Some(g) = g else { continue };
            match (slot.as_mut(), g) {
                (None, _) => *slot = Some(g.clone()),
                (Some(ParamGrad::Dense(a)), ParamGrad::Dense(b)) => add_into(a, b),
                (Some(ParamGrad::Rows(a)), ParamGrad::Rows(b)) => {
                    for (r, row) in b {
                        match a.get_mut(r) {
                            Some(dst) => add_into(dst, row),
                            None => {
                                a.insert(*r, row.clone());
                            }
                        }
                    }
                }
                _ => unreachable!("a parameter is either dense or row-sparse"),
            }
        }
    }

    fn dense_mut(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        let slot = &mut self.grads[id.0];
        match slot.get_or_insert_with(|| ParamGrad::Dense(vec![0.0; len])) {
            ParamGrad::Dense(g) => g,
            ParamGrad::Rows(_) => unreachable!("dense access to a row-sparse gradient"),
        }
    }

    fn row_mut(&mut self, id: ParamId, row: usize, dim: usize) -> &mut Vec<f64> {
        let slot = &mut self.grads[id.0];
        match slot.get_or_insert_with(|| ParamGrad::Rows(BTreeMap::new())) {
            ParamGrad::Rows(rows) => rows.entry(row).or_insert_with(|| vec![0.0; dim]),
            ParamGrad::Dense(_) => unreachable!("row access to a dense gradient"),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatVec { m: Var, x: Var },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gather { x: Var, idx: Vec<usize> },
    Sum(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    DivConst { x: Var, denom: Vec<f64> },
    Map { x: Var, df: fn(f64, f64) -> f64 },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    /// Empty for parameter leaves; their value lives in the store.
    value: Vec<f64>,
}

/// One forward pass worth of recorded operations.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        #[cfg(feature = "finite-checks")]
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{op:?}")));
        }
        self.nodes.push(Node { op, shape, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Const, t.shape, t.data)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Result<Var> {
        self.constant(Tensor::vector(data))
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(Op::Const, vec![len], vec![0.0; len])
            .expect("zeros are finite")
    }

    /// Leaf for a whole parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.store.value(id).shape().to_vec();
        self.nodes.push(Node {
            op: Op::Param(id),
            shape,
            value: Vec::new(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Row `row` of a 2-D parameter. Gradients go to that row only.
    pub fn row(&mut self, param: ParamId, row: usize) -> Result<Var> {
        let t = self.store.value(param);
        let shape = t.shape();
        if shape.len() != 2 || row >= shape[0] {
            return Err(mismatch("row", shape, &[row]));
        }
        let dim = shape[1];
        let value = t.data()[row * dim..(row + 1) * dim].to_vec();
        self.push(Op::Row { param, row }, vec![dim], value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, factor), shape, value)
    }

    /// `m` is `[rows, cols]`, `x` is `[cols]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (ms, xs) = (self.shape(m), self.shape(x));
        if ms.len() != 2 || xs.len() != 1 || ms[1] != xs[0] {
            return Err(mismatch("matvec", ms, xs));
        }
        let (rows, cols) = (ms[0], ms[1]);
        let (mv, xv) = (self.value(m), self.value(x));
        let value: Vec<f64> = (0..rows)
            .map(|r| dot(&mv[r * cols..(r + 1) * cols], xv))
            .collect();
        self.push(Op::MatVec { m, x }, vec![rows], value)
    }

    /// Concatenation of 1-D values.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut value = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(mismatch("concat", self.shape(p), &[]));
            }
            value.extend_from_slice(self.value(p));
        }
        let len = value.len();
        self.push(Op::Concat(parts.to_vec()), vec![len], value)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 1 || start + len > xs[0] {
            return Err(mismatch("slice", xs, &[start, len]));
        }
        let value = self.value(x)[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, vec![len], value)
    }

    /// Picks the listed positions of a 1-D value.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 1 || idx.iter().any(|&i| i >= xs[0]) {
            return Err(mismatch("gather", xs, idx));
        }
        let xv = self.value(x);
        let value = idx.iter().map(|&i| xv[i]).collect();
        self.push(Op::Gather { x, idx: idx.to_vec() }, vec![idx.len()], value)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), vec![1], vec![s])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Sigmoid(x), shape, value)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Tanh(x), shape, value)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).iter().map(|v| v * v).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Square(x), shape, value)
    }

    /// Elementwise division by a constant vector.
    pub fn div_const(&mut self, x: Var, denom: &[f64]) -> Result<Var> {
        if self.shape(x) != [denom.len()] {
            return Err(mismatch("div_const", self.shape(x), &[denom.len()]));
        }
        let value = self.value(x).iter().zip(denom).map(|(a, b)| a / b).collect();
        self.push(
            Op::DivConst {
                x,
                denom: denom.to_vec(),
            },
            vec![denom.len()],
            value,
        )
    }

    /// Elementwise `f` with a caller-supplied derivative `df(x, f(x))`.
    pub fn map(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Map { x, df }, shape, value)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != [1] {
            return Err(mismatch("backward", self.shape(root), &[1]));
        }
        let mut out = Gradients::empty(self.store);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => add_into(out.dense_mut(*id, g.len()), &g),
                Op::Row { param, row } => add_into(out.row_mut(*param, *row, g.len()), &g),
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d -= g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut().zip(&g).zip(vb).for_each(|((d, g), y)| *d += g * y)
                    });
                    self.acc(&mut grads, *b, |d| {
                        d.iter_mut().zip(&g).zip(va).for_each(|((d, g), x)| *d += g * x)
                    });
                }
                Op::Scale(a, f) => {
                    self.acc(&mut grads, *a, |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d += g * f));
                }
                Op::MatVec { m, x } => {
                    let cols = self.shape(*m)[1];
                    let (mv, xv) = (self.value(*m), self.value(*x));
                    let outer = |dm: &mut [f64]| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                let row = &mut dm[r * cols..(r + 1) * cols];
                                row.iter_mut().zip(xv).for_each(|(d, x)| *d += gr * x);
                            }
                        }
                    };
                    match self.nodes[m.0].op {
                        // Parameter matrices accumulate straight into the result.
                        Op::Param(id) => outer(out.dense_mut(id, mv.len())),
                        _ => self.acc(&mut grads, *m, outer),
                    }
                    self.acc(&mut grads, *x, |dx| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                let row = &mv[r * cols..(r + 1) * cols];
                                dx.iter_mut().zip(row).for_each(|(d, w)| *d += gr * w);
                            }
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.shape(p)[0];
                        let piece = &g[offset..offset + len];
                        self.acc(&mut grads, p, |d| add_into(d, piece));
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let start = *start;
                    self.acc(&mut grads, *x, |d| add_into(&mut d[start..start + g.len()], &g));
                }
                Op::Gather { x, idx } => {
                    self.acc(&mut grads, *x, |d| {
                        for (&i, gv) in idx.iter().zip(&g) {
                            d[i] += gv;
                        }
                    });
                }
                Op::Sum(x) => {
                    let gv = g[0];
                    self.acc(&mut grads, *x, |d| d.iter_mut().for_each(|d| *d += gv));
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut().zip(&g).zip(y).for_each(|((d, g), y)| *d += g * y * (1.0 - y))
                    });
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut().zip(&g).zip(y).for_each(|((d, g), y)| *d += g * (1.0 - y * y))
                    });
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut().zip(&g).zip(xv).for_each(|((d, g), x)| *d += 2.0 * g * x)
                    });
                }
                Op::DivConst { x, denom } => {
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut().zip(&g).zip(denom).for_each(|((d, g), q)| *d += g / q)
                    });
                }
                Op::Map { x, df } => {
                    let (xv, y) = (self.value(*x), &node.value);
                    self.acc(&mut grads, *x, |d| {
                        for (k, d) in d.iter_mut().enumerate() {
                            *d += g[k] * df(xv[k], y[k]);
                        }
                    });
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if matches!(self.nodes[v.0].op, Op::Const) {
            return;
        }
        let len = self.nodes[v.0].shape.iter().product();
        f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Cumulative sums `h_1, h_1 + h_2, ..., h_1 + ... + h_n`.
pub fn prefix_sums(tape: &mut Tape, hs: &[Var]) -> Result<Vec<Var>> {
    let (&first, rest) = hs
        .split_first()
        .ok_or_else(|| Error::invalid("prefix sums of an empty sequence"))?;
    let mut out = Vec::with_capacity(hs.len());
    out.push(first);
    let mut acc = first;
    for &h in rest {
        acc = tape.add(acc, h)?;
        out.push(acc);
    }
    Ok(out)
}

/// Strict suffix sums: entry `i` is `h_{i+1} + ... + h_n`, and the last
/// entry is the zero vector.
pub fn suffix_sums(tape: &mut Tape, hs: &[Var]) -> Result<Vec<Var>> {
    let last = *hs
        .last()
        .ok_or_else(|| Error::invalid("suffix sums of an empty sequence"))?;
    let dim = tape.shape(last)[0];
    let mut out = vec![tape.zeros(dim); hs.len()];
    let mut acc: Option<Var> = None;
    for i in (0..hs.len() - 1).rev() {
        let next = hs[i + 1];
        let s = match acc {
            None => next,
            Some(a) => tape.add(next, a)?,
        };
        out[i] = s;
        acc = Some(s);
    }
    Ok(out)
}
