//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read in place from the borrowed [`ParamStore`]; `backward` replays the
//! tape in reverse and returns [`Gradients`] aligned with that store.

use super::tensor::{matmul_a_bt_into, matmul_at_b_into, matmul_into, softmax_into};
use super::{Gradients, NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
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

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Activate(Var, Activation),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    AttendPool(Var, Var),
    ScaleRows(Var, Var),
    MeanRows(Var),
    CrossEntropy(Var, Vec<usize>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn dim_err(context: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Dimension {
        context,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.get(*id),
            _ => self.nodes[v.0]
                .value
                .as_ref()
                .expect("non-param nodes hold values"),
        }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
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

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .map_err(|_| dim_err("matmul", self.value(a), self.value(b)))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `x + b` with `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(dim_err("row broadcast add", xv, bv));
        }
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let out = Tensor::from_raw(vec![xv.rows(), cols], data);
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddRow(x, b), ng))
    }

    /// `x W + b`, the bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn zip_same(
        &self,
        a: Var,
        b: Var,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() || av.cols() != bv.cols() {
            return Err(dim_err(context, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_raw(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, factor), ng)
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        let out = self.value(a).map(|x| kind.apply(x));
        let ng = self.needs(a);
        self.push(out, Op::Activate(a, kind), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Sigmoid)
    }

    /// Softmax applied independently to every row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = vec![0.0; av.len()];
        for (src, dst) in av.data().chunks(cols).zip(data.chunks_mut(cols)) {
            softmax_into(src, dst);
        }
        let out = Tensor::from_raw(vec![av.rows(), cols], data);
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(dim_err(
                    "column concat",
                    self.value(parts[0]),
                    self.value(p),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::from_raw(vec![rows, total], data);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if width == 0 || start + width > av.cols() {
            return Err(NumericsError::Domain(format!(
                "column slice {start}..{} out of range for {:?}",
                start + width,
                av.shape()
            )));
        }
        let mut data = Vec::with_capacity(av.rows() * width);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row_slice(r)[start..start + width]);
        }
        let out = Tensor::from_raw(vec![av.rows(), width], data);
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if count == 0 || start + count > av.rows() {
            return Err(NumericsError::Domain(format!(
                "row slice {start}..{} out of range for {:?}",
                start + count,
                av.shape()
            )));
        }
        let c = av.cols();
        let out = Tensor::from_raw(
            vec![count, c],
            av.data()[start * c..(start + count) * c].to_vec(),
        );
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if rows.is_empty() || rows.iter().any(|&r| r >= av.rows()) {
            return Err(NumericsError::Domain(format!(
                "row gather {rows:?} out of range for {:?}",
                av.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * av.cols());
        for &r in rows {
            data.extend_from_slice(av.row_slice(r));
        }
        let out = Tensor::from_raw(vec![rows.len(), av.cols()], data);
        let ng = self.needs(a);
        Ok(self.push(out, Op::GatherRows(a, rows.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(dim_err("row concat", self.value(parts[0]), pv));
            }
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::from_raw(vec![rows, cols], data);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let out = self.value(a).reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Attention pooling over groups: `alpha` is `n x m`, `items` is
    /// `(n*m) x d`; row `i` of the result is `sum_j alpha[i][j] * items[i*m + j]`.
    pub fn attend_pool(&mut self, alpha: Var, items: Var) -> Result<Var, NumericsError> {
        let (av, iv) = (self.value(alpha), self.value(items));
        let (n, m, d) = (av.rows(), av.cols(), iv.cols());
        if iv.rows() != n * m {
            return Err(dim_err("attention pooling", av, iv));
        }
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let out = &mut data[i * d..(i + 1) * d];
            for j in 0..m {
                let w = av.data()[i * m + j];
                for (o, &x) in out.iter_mut().zip(iv.row_slice(i * m + j)) {
                    *o += w * x;
                }
            }
        }
        let out = Tensor::from_raw(vec![n, d], data);
        let ng = self.needs(alpha) || self.needs(items);
        Ok(self.push(out, Op::AttendPool(alpha, items), ng))
    }

    /// Scales row `r` of `x` by the `r`-th entry of `weights`.
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Result<Var, NumericsError> {
        let (xv, wv) = (self.value(x), self.value(weights));
        if wv.len() != xv.rows() {
            return Err(dim_err("row scaling", xv, wv));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, &w) in data.chunks_mut(c).zip(wv.data()) {
            for v in row {
                *v *= w;
            }
        }
        let out = Tensor::from_raw(vec![xv.rows(), c], data);
        let ng = self.needs(x) || self.needs(weights);
        Ok(self.push(out, Op::ScaleRows(x, weights), ng))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; c];
        for row in xv.data().chunks(c) {
            for (o, &v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut data {
            *o /= n as f64;
        }
        let out = Tensor::from_raw(vec![1, c], data);
        let ng = self.needs(x);
        self.push(out, Op::MeanRows(x), ng)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        let v = lv.cols();
        if targets.len() != lv.rows() || targets.iter().any(|&t| t >= v) {
            return Err(NumericsError::Domain(format!(
                "cross entropy targets {targets:?} do not fit logits {:?}",
                lv.shape()
            )));
        }
        let mut total = 0.0;
        for (row, &t) in lv.data().chunks(v).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let loss = total / targets.len() as f64;
        if !loss.is_finite() {
            return Err(NumericsError::NonFinite("cross entropy".into()));
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec()),
            ng,
        ))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Domain(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = || node.value.as_ref().expect("op nodes hold values");
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (g, d) in out.get_mut(*id).data_mut().iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if let Some(da) = self.acc(&mut grads, *a) {
                        matmul_a_bt_into(&dy, bv.data(), da, n, m, k);
                    }
                    if let Some(db) = self.acc(&mut grads, *b) {
                        matmul_at_b_into(av.data(), &dy, db, n, k, m);
                    }
                }
                Op::AddRow(x, b) => {
                    if let Some(dx) = self.acc(&mut grads, *x) {
                        add_into(dx, &dy);
                    }
                    let cols = self.value(*b).len();
                    if let Some(db) = self.acc(&mut grads, *b) {
                        for row in dy.chunks(cols) {
                            add_into(db, row);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = self.acc(&mut grads, v) {
                            add_into(d, &dy);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if let Some(da) = self.acc(&mut grads, *a) {
                        for ((d, &g), &o) in da.iter_mut().zip(&dy).zip(bv.data()) {
                            *d += g * o;
                        }
                    }
                    if let Some(db) = self.acc(&mut grads, *b) {
                        for ((d, &g), &o) in db.iter_mut().zip(&dy).zip(av.data()) {
                            *d += g * o;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if let Some(da) = self.acc(&mut grads, *a) {
                        for (d, &g) in da.iter_mut().zip(&dy) {
                            *d += s * g;
                        }
                    }
                }
                Op::Activate(a, kind) => {
                    let yv = y().data();
                    if let Some(da) = self.acc(&mut grads, *a) {
                        for ((d, &g), &o) in da.iter_mut().zip(&dy).zip(yv) {
                            *d += g * match kind {
                                Activation::Tanh => 1.0 - o * o,
                                Activation::Relu => {
                                    if o > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Activation::Sigmoid => o * (1.0 - o),
                            };
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let yt = y();
                    let cols = yt.cols();
                    if let Some(da) = self.acc(&mut grads, *a) {
                        for ((drow, grow), yrow) in da
                            .chunks_mut(cols)
                            .zip(dy.chunks(cols))
                            .zip(yt.data().chunks(cols))
                        {
                            let dot: f64 = grow.iter().zip(yrow).map(|(g, p)| g * p).sum();
                            for ((d, &g), &p) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += p * (g - dot);
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = y().cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if let Some(dp) = self.acc(&mut grads, p) {
                            for (drow, grow) in dp.chunks_mut(w).zip(dy.chunks(total)) {
                                add_into(drow, &grow[offset..offset + w]);
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let w = y().cols();
                    let c = self.value(*a).cols();
                    if let Some(da) = self.acc(&mut grads, *a) {
                        for (drow, grow) in da.chunks_mut(c).zip(dy.chunks(w)) {
                            add_into(&mut drow[*start..*start + w], grow);
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let c = y().cols();
                    if let Some(da) = self.acc(&mut grads, *a) {
                        add_into(&mut da[start * c..start * c + dy.len()], &dy);
                    }
                }
                Op::GatherRows(a, rows) => {
                    let c = y().cols();
                    if let Some(da) = self.acc(&mut grads, *a) {
                        for (&r, grow) in rows.iter().zip(dy.chunks(c)) {
                            add_into(&mut da[r * c..(r + 1) * c], grow);
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if let Some(dp) = self.acc(&mut grads, p) {
                            add_into(dp, &dy[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::Reshape(a) => {
                    if let Some(da) = self.acc(&mut grads, *a) {
                        add_into(da, &dy);
                    }
                }
                Op::AttendPool(alpha, items) => {
                    let (av, iv) = (self.value(*alpha), self.value(*items));
                    let (n, m, d) = (av.rows(), av.cols(), iv.cols());
                    if let Some(dalpha) = self.acc(&mut grads, *alpha) {
                        for i in 0..n {
                            let g = &dy[i * d..(i + 1) * d];
                            for j in 0..m {
                                dalpha[i * m + j] += dot(g, iv.row_slice(i * m + j));
                            }
                        }
                    }
                    if let Some(ditems) = self.acc(&mut grads, *items) {
                        for i in 0..n {
                            let g = &dy[i * d..(i + 1) * d];
                            for j in 0..m {
                                let w = av.data()[i * m + j];
                                let row = &mut ditems[(i * m + j) * d..(i * m + j + 1) * d];
                                for (o, &gg) in row.iter_mut().zip(g) {
                                    *o += w * gg;
                                }
                            }
                        }
                    }
                }
                Op::ScaleRows(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let c = xv.cols();
                    if let Some(dx) = self.acc(&mut grads, *x) {
                        for ((drow, grow), &s) in dx.chunks_mut(c).zip(dy.chunks(c)).zip(wv.data())
                        {
                            for (d, &g) in drow.iter_mut().zip(grow) {
                                *d += s * g;
                            }
                        }
                    }
                    if let Some(dw) = self.acc(&mut grads, *w) {
                        for ((d, grow), xrow) in
                            dw.iter_mut().zip(dy.chunks(c)).zip(xv.data().chunks(c))
                        {
                            *d += dot(grow, xrow);
                        }
                    }
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let (n, c) = (xv.rows(), xv.cols());
                    if let Some(dx) = self.acc(&mut grads, *x) {
                        for drow in dx.chunks_mut(c) {
                            for (d, &g) in drow.iter_mut().zip(&dy) {
                                *d += g / n as f64;
                            }
                        }
                    }
                }
                Op::CrossEntropy(logits, targets) => {
                    let lv = self.value(*logits);
                    let v = lv.cols();
                    let scale = dy[0] / targets.len() as f64;
                    if let Some(dl) = self.acc(&mut grads, *logits) {
                        let mut p = vec![0.0; v];
                        for ((drow, row), &t) in
                            dl.chunks_mut(v).zip(lv.data().chunks(v)).zip(targets)
                        {
                            softmax_into(row, &mut p);
                            for (j, (d, &pj)) in drow.iter_mut().zip(&p).enumerate() {
                                let target = if j == t { 1.0 } else { 0.0 };
                                *d += scale * (pj - target);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradient buffer for `v`, allocated on first use; `None` when `v` does
    /// not lead to any parameter.
    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain `x W + b` without recording, for callers that only need values.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if x.cols() != w.rows() {
        return Err(dim_err("affine", x, w));
    }
    if b.len() != w.cols() {
        return Err(dim_err("affine bias", w, b));
    }
    let (n, k, m) = (x.rows(), x.cols(), w.cols());
    let mut out: Vec<f64> = b.data().iter().copied().cycle().take(n * m).collect();
    matmul_into(x.data(), w.data(), &mut out, n, k, m);
    Ok(Tensor::from_raw(vec![n, m], out))
}
