//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and the indices of its inputs. [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients for every bound parameter.
//!
//! Non-smooth operations (hinges, clamps, norm floors, arg-min selections)
//! optionally record their discrete branch in a "kink signature" so the
//! gradient checker can tell when a finite-difference probe crossed a
//! non-differentiable boundary.

use std::collections::BTreeMap;

use crate::tensor::Matrix;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Matrix::is_finite)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(|g| g.as_slice().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Pick(Var, Vec<(usize, usize)>),
    TemporalWindow(Var, usize),
    CosineDistance(Var, Var, f64),
    Bce(Var, Matrix, f64),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Computation tape bound to one [`ParamStore`].
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    kinks: Option<Vec<u8>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            bound: vec![None; store.len()],
            kinks: None,
        }
    }

    /// A graph that records the discrete branch taken by every non-smooth op.
    pub fn with_kink_tracking(store: &'p ParamStore) -> Self {
        let mut g = Self::new(store);
        g.kinks = Some(Vec::new());
        g
    }

    pub fn kink_signature(&self) -> Option<&[u8]> {
        self.kinks.as_deref()
    }

    /// Records an externally made discrete decision (e.g. an arg-min pick).
    pub fn note_choice(&mut self, choice: usize) {
        if let Some(k) = self.kinks.as_mut() {
            k.extend_from_slice(&(choice as u32).to_le_bytes());
        }
    }

    fn note_flag(&mut self, flag: bool) {
        if let Some(k) = self.kinks.as_mut() {
            k.push(flag as u8);
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 × c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(r));
        assert_eq!(rm.shape(), (1, am.cols()), "add_row shape");
        let mut v = am.clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(rm.row(0)) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, r))
    }

    /// Multiplies every row of `a` entrywise by the `1 × c` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(r));
        assert_eq!(rm.shape(), (1, am.cols()), "mul_row shape");
        let mut v = am.clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(rm.row(0)) {
                *x *= y;
            }
        }
        self.push(v, Op::MulRow(a, r))
    }

    /// Multiplies row `i` of `a` by the scalar `c[i, 0]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (am, cm) = (self.value(a), self.value(c));
        assert_eq!(cm.shape(), (am.rows(), 1), "mul_col shape");
        let mut v = am.clone();
        for i in 0..v.rows() {
            let s = cm[(i, 0)];
            v.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        self.push(v, Op::MulCol(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `max(x, 0)`; the gradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        if self.kinks.is_some() {
            let flags: Vec<bool> = self.value(a).as_slice().iter().map(|&x| x > 0.0).collect();
            flags.into_iter().for_each(|f| self.note_flag(f));
        }
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = m.clone();
        for r in 0..v.rows() {
            let lse = log_sum_exp(m.row(r));
            v.row_mut(r).iter_mut().for_each(|x| *x -= lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols(), "slice_cols out of range");
        let v = Matrix::from_fn(m.rows(), len, |r, c| m[(r, start + c)]);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.rows(), "slice_rows out of range");
        let v = Matrix::from_vec(
            len,
            m.cols(),
            m.as_slice()[start * m.cols()..(start + len) * m.cols()].to_vec(),
        );
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hconcat(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::vconcat(&mats);
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Gathers the listed entries into an `n × 1` column.
    pub fn pick(&mut self, a: Var, entries: Vec<(usize, usize)>) -> Var {
        let m = self.value(a);
        let v = Matrix::from_vec(
            entries.len(),
            1,
            entries.iter().map(|&(r, c)| m[(r, c)]).collect(),
        );
        self.push(v, Op::Pick(a, entries))
    }

    /// Stacks each row with its `radius` neighbours on both sides
    /// (zero padding at the borders): `T × d` becomes `T × (2·radius+1)·d`,
    /// ordered from the earliest offset to the latest.
    pub fn temporal_window(&mut self, a: Var, radius: usize) -> Var {
        let m = self.value(a);
        let (t, d) = m.shape();
        let width = 2 * radius + 1;
        let mut v = Matrix::zeros(t, width * d);
        for row in 0..t {
            for k in 0..width {
                let src = row as isize + k as isize - radius as isize;
                if src >= 0 && (src as usize) < t {
                    v.row_mut(row)[k * d..(k + 1) * d].copy_from_slice(m.row(src as usize));
                }
            }
        }
        self.push(v, Op::TemporalWindow(a, radius))
    }

    /// Row-wise `1 − cos(a_r, b_r)` for two `r × d` matrices, norms floored
    /// at `eps`; the result is `r × 1`.
    pub fn cosine_distance(&mut self, a: Var, b: Var, eps: f64) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "cosine_distance shape");
        let rows = am.rows();
        let mut flags = Vec::with_capacity(2 * rows);
        let mut d = Vec::with_capacity(rows);
        for r in 0..rows {
            let (x, y) = (am.row(r), bm.row(r));
            flags.push(x.iter().map(|v| v * v).sum::<f64>().sqrt() > eps);
            flags.push(y.iter().map(|v| v * v).sum::<f64>().sqrt() > eps);
            d.push(1.0 - crate::tensor::cosine_similarity(x, y, eps));
        }
        for f in flags {
            self.note_flag(f);
        }
        self.push(Matrix::from_vec(rows, 1, d), Op::CosineDistance(a, b, eps))
    }

    /// Summed binary cross-entropy `−Σ [y ln h + (1−y) ln(1−h)]` with `h`
    /// clamped to `[clamp, 1 − clamp]`; clamped entries pass no gradient.
    pub fn bce_sum(&mut self, h: Var, targets: Matrix, clamp: f64) -> Var {
        let hm = self.value(h);
        assert_eq!(hm.shape(), targets.shape(), "bce shape");
        let mut total = 0.0;
        let mut flags = Vec::new();
        for (&p, &y) in hm.as_slice().iter().zip(targets.as_slice()) {
            let pc = p.clamp(clamp, 1.0 - clamp);
            flags.push(p > clamp && p < 1.0 - clamp);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        if self.kinks.is_some() {
            flags.into_iter().for_each(|f| self.note_flag(f));
        }
        self.push(Matrix::filled(1, 1, total), Op::Bce(h, targets, clamp))
    }

    /// Runs the reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out.grads.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, r) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, x) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, r) => {
                    let (am, rm) = (self.value(*a), self.value(*r));
                    let mut ga = g.clone();
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga[(i, c)] = g[(i, c)] * rm[(0, c)];
                            gr[(0, c)] += g[(i, c)] * am[(i, c)];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *r, gr);
                }
                Op::MulCol(a, c) => {
                    let (am, cm) = (self.value(*a), self.value(*c));
                    let mut ga = g.clone();
                    let mut gc = Matrix::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        let s = cm[(i, 0)];
                        let mut dot = 0.0;
                        for (j, x) in ga.row_mut(i).iter_mut().enumerate() {
                            dot += *x * am[(i, j)];
                            *x *= s;
                        }
                        gc[(i, 0)] = dot;
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *c, gc);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y)),
                Op::Log(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |g, x| g / x)),
                Op::Sqrt(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g / (2.0 * y))),
                Op::Square(a) => {
                    acc(&mut grads, *a, g.zip_map(self.value(*a), |g, x| 2.0 * g * x))
                }
                Op::Relu(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
                ),
                Op::SoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for (x, s) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *x = s * (*x - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (x, ly) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *x -= ly.exp() * total;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    ga.as_mut_slice()[start * c..(start + g.rows()) * c]
                        .copy_from_slice(g.as_slice());
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let gp = Matrix::from_fn(r, c, |i, j| g[(i, off + j)]);
                        off += c;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let gp = Matrix::from_vec(
                            r,
                            c,
                            g.as_slice()[off * c..(off + r) * c].to_vec(),
                        );
                        off += r;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::Pick(a, entries) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &(i, j)) in entries.iter().enumerate() {
                        ga[(i, j)] += g[(k, 0)];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::TemporalWindow(a, radius) => {
                    let (t, d) = self.shape(*a);
                    let mut ga = Matrix::zeros(t, d);
                    for row in 0..t {
                        for k in 0..(2 * radius + 1) {
                            let src = row as isize + k as isize - *radius as isize;
                            if src >= 0 && (src as usize) < t {
                                let gs = &g.row(row)[k * d..(k + 1) * d];
                                for (x, y) in ga.row_mut(src as usize).iter_mut().zip(gs) {
                                    *x += y;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CosineDistance(a, b, eps) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    let mut gb = Matrix::zeros(am.rows(), am.cols());
                    for r in 0..am.rows() {
                        let (da, db) = cosine_distance_grad(am.row(r), bm.row(r), *eps);
                        let s = g[(r, 0)];
                        ga.row_mut(r).iter_mut().zip(&da).for_each(|(o, v)| *o = s * v);
                        gb.row_mut(r).iter_mut().zip(&db).for_each(|(o, v)| *o = s * v);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Bce(h, targets, clamp) => {
                    let s = g[(0, 0)];
                    let gh = self.value(*h).zip_map(targets, |p, t| {
                        if p > *clamp && p < 1.0 - *clamp {
                            s * (-t / p + (1.0 - t) / (1.0 - p))
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *h, gh);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradient of `1 − cos(a, b)` w.r.t. `a` and `b` with norms floored at `eps`.
fn cosine_distance_grad(a: &[f64], b: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let ra = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (ra.max(eps), rb.max(eps));
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let s = dot / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let mut d = y / (na * nb);
            if ra > eps {
                d -= s * x / (ra * ra);
            }
            -d
        })
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let mut d = x / (na * nb);
            if rb > eps {
                d -= s * y / (rb * rb);
            }
            -d
        })
        .collect();
    (ga, gb)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let s = softmax(m.row(r));
        out.row_mut(r).copy_from_slice(&s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradient_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn check(store: &ParamStore, build: impl Fn(&mut Graph<'_>) -> Var) {
        let report = gradient_check(store, build, &GradCheckOptions::default());
        assert!(
            report.max_rel_error < 1e-6,
            "max relative error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }

    #[test]
    fn elementary_ops_have_exact_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, 3, 4));
        let b = store.add("b", random(&mut rng, 4, 2));
        let r = store.add("r", random(&mut rng, 1, 2));
        let c = store.add("c", random(&mut rng, 3, 1));
        check(&store, |g| {
            let a = g.param(a);
            let b = g.param(b);
            let r = g.param(r);
            let c = g.param(c);
            let ab = g.matmul(a, b);
            let x = g.add_row(ab, r);
            let x = g.mul_row(x, r);
            let x = g.mul_col(x, c);
            let t = g.tanh(x);
            let s = g.sigmoid(t);
            let sm = g.softmax_rows(s);
            let ls = g.log_softmax_rows(x);
            let m = g.mul(sm, ls);
            let bt = g.transpose(b);
            let abt = g.matmul_t(a, bt);
            let sq = g.square(abt);
            let e = g.exp(sq);
            let l = g.log(e);
            let l1 = g_add_one(g, l);
            let q = g.sqrt(l1);
            let pick = g.pick(q, vec![(0, 0), (2, 1), (0, 0)]);
            let s1 = g.sum(m);
            let s2 = g.sum(pick);
            let tot = g.add(s1, s2);
            g.scale(tot, 0.7)
        });
    }

    fn g_add_one(g: &mut Graph<'_>, v: Var) -> Var {
        g.add_scalar(v, 1.0)
    }

    #[test]
    fn structural_ops_have_exact_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, 5, 3));
        let b = store.add("b", random(&mut rng, 5, 2));
        let w = store.add("w", random(&mut rng, 9 + 6, 2));
        check(&store, |g| {
            let a = g.param(a);
            let b = g.param(b);
            let w = g.param(w);
            let cat = g.concat_cols(&[a, b]);
            let win = g.temporal_window(a, 1);
            let both = g.concat_cols(&[win, b, b, b]);
            let both = g.slice_cols(both, 0, 15);
            let y = g.matmul(both, w);
            let top = g.slice_rows(y, 1, 3);
            let stacked = g.concat_rows(&[top, y]);
            let s1 = g.sum(stacked);
            let c2 = g.slice_cols(cat, 1, 3);
            let t2 = g.tanh(c2);
            let s2 = g.sum(t2);
            g.add(s1, s2)
        });
    }

    #[test]
    fn cosine_and_bce_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, 1, 5));
        let b = store.add("b", random(&mut rng, 1, 5));
        let h = store.add("h", Matrix::from_fn(2, 3, |_, _| rng.gen_range(0.1..0.9)));
        let y = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        check(&store, |g| {
            let a = g.param(a);
            let b = g.param(b);
            let h = g.param(h);
            let d = g.cosine_distance(a, b, 1e-8);
            let l = g.bce_sum(h, y.clone(), 1e-7);
            g.add(d, l)
        });
    }

    #[test]
    fn rowwise_cosine_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, 3, 4));
        let b = store.add("b", random(&mut rng, 3, 4));
        let w = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]);
        check(&store, |g| {
            let a = g.param(a);
            let b = g.param(b);
            let d = g.cosine_distance(a, b, 1e-8);
            let w = g.constant(w.clone());
            let s = g.matmul(w, d);
            g.sum(s)
        });
    }

    #[test]
    fn relu_kinks_are_recorded() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::row_vector(&[-1.0, 2.0]));
        let mut g = Graph::with_kink_tracking(&store);
        let v = g.param(a);
        let _ = g.relu(v);
        assert_eq!(g.kink_signature(), Some(&[0u8, 1][..]));
    }

    #[test]
    fn repeated_param_binding_reuses_node_and_sums_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::row_vector(&[2.0]));
        let mut g = Graph::new(&store);
        let x = g.param(a);
        let y = g.param(a);
        assert_eq!(x, y);
        let p = g.mul(x, y);
        let s = g.sum(p);
        let grads = g.backward(s);
        assert_eq!(grads.get(a).unwrap()[(0, 0)], 4.0);
    }
}
