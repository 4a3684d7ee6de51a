//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Operations append nodes to a [`Graph`]; [`Graph::backward`] walks the tape
//! in reverse and accumulates vector-Jacobian products. Node values are plain
//! [`Tensor`]s, so anything inserted with `constant` (segment memory, masks,
//! position encodings) is a stop-gradient boundary by construction.

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;
use crate::numerics::Real;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// Matrix plus a broadcast row vector.
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    Transpose(usize),
    Embed {
        table: usize,
        ids: Vec<usize>,
    },
    Softmax(usize),
    LogSoftmax(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
    },
    Dropout {
        x: usize,
        keep: f64,
        mask: Vec<bool>,
    },
    /// Per output row r, column j: y[r][j] = x[r][idx[r*w + j]].
    GatherPerRow {
        x: usize,
        idx: Vec<u32>,
    },
    /// Sum over masked positions of -log softmax(logits)[target].
    MaskedNllSum {
        logits: usize,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
    Sum(usize),
}

pub struct Graph<R: Real> {
    values: Vec<Tensor<R>>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    grads: Vec<Option<Tensor<R>>>,
}

const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive mask value for disallowed attention positions: large enough that
/// exp underflows to zero after max subtraction, small enough to stay finite.
pub const MASKED_SCORE: f64 = -1.0e30;

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<R>, op: Op, requires: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Leaf that participates in differentiation (a parameter).
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation (inputs, cached memory, masks).
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads[v.0].as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn shape_err(op: &'static str, lhs: &Tensor<R>, rhs: &Tensor<R>) -> Error {
        Error::Shape {
            op,
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(Self::shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![R::ZERO; m * n];
        R::gemm(
            m,
            k,
            n,
            R::ONE,
            ta.data(),
            k as isize,
            1,
            tb.data(),
            n as isize,
            1,
            R::ZERO,
            &mut out,
        );
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMul(a.0, b.0), req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("add", ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(value, Op::Add(a.0, b.0), req))
    }

    /// `a` is [m, n], `row` is [n]; the row is added to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (&self.values[a.0], &self.values[row.0]);
        if !ta.is_matrix() || tr.numel() != ta.cols() {
            return Err(Self::shape_err("add_row", ta, tr));
        }
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % n])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.requires[a.0] || self.requires[row.0];
        Ok(self.push(value, Op::AddRow(a.0, row.0), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("mul", ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(value, Op::Mul(a.0, b.0), req))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let factor = R::from_f64(c);
        let value = self.values[a.0].map(|x| x * factor);
        let req = self.requires[a.0];
        self.push(value, Op::Scale(a.0, c), req)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::numeric("concat_rows of zero tensors"));
        }
        let cols = self.values[parts[0].0].cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = &self.values[p.0];
            if t.cols() != cols {
                return Err(Self::shape_err("concat_rows", &self.values[parts[0].0], t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let req = parts.iter().any(|p| self.requires[p.0]);
        Ok(self.push(
            Tensor::from_rows(rows, cols, data)?,
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
            req,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::numeric("concat_cols of zero tensors"));
        }
        let rows = self.values[parts[0].0].rows();
        let total_cols: usize = parts.iter().map(|p| self.values[p.0].cols()).sum();
        let mut data = vec![R::ZERO; rows * total_cols];
        let mut col_off = 0;
        for p in parts {
            let t = &self.values[p.0];
            if t.rows() != rows {
                return Err(Self::shape_err("concat_cols", &self.values[parts[0].0], t));
            }
            let c = t.cols();
            for r in 0..rows {
                data[r * total_cols + col_off..r * total_cols + col_off + c]
                    .copy_from_slice(t.row(r));
            }
            col_off += c;
        }
        let req = parts.iter().any(|p| self.requires[p.0]);
        Ok(self.push(
            Tensor::from_rows(rows, total_cols, data)?,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            req,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = &self.values[x.0];
        if start + len > t.cols() {
            return Err(Error::numeric(format!(
                "slice_cols [{start}, {}) out of range for {:?}",
                start + len,
                t.shape()
            )));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let req = self.requires[x.0];
        Ok(self.push(
            Tensor::from_rows(rows, len, data)?,
            Op::SliceCols { x: x.0, start },
            req,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.values[x.0];
        if !t.is_matrix() {
            return Err(Error::numeric(format!("transpose of shape {:?}", t.shape())));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut data = vec![R::ZERO; m * n];
        for r in 0..m {
            for c in 0..n {
                data[c * m + r] = t.data()[r * n + c];
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::from_rows(n, m, data)?, Op::Transpose(x.0), req))
    }

    /// Rows of `table` selected by `ids`: output is [len(ids), d].
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.values[table.0];
        if !t.is_matrix() {
            return Err(Error::numeric("embedding_lookup table must be 2-D".to_string()));
        }
        let d = t.cols();
        let rows = t.rows();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::numeric(format!(
                    "embedding_lookup id {id} out of range 0..{rows}"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let req = self.requires[table.0];
        Ok(self.push(
            Tensor::from_rows(ids.len(), d, data)?,
            Op::Embed {
                table: table.0,
                ids: ids.to_vec(),
            },
            req,
        ))
    }

    fn softmax_rows(t: &Tensor<R>) -> Tensor<R> {
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = vec![R::ZERO; rows * cols];
        for r in 0..rows {
            let row = t.row(r);
            let mut max = row[0];
            for &v in row {
                max = max.maximum(v);
            }
            let mut sum = R::ZERO;
            for (i, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * cols + i] = e;
                sum += e;
            }
            for i in 0..cols {
                data[r * cols + i] = data[r * cols + i] / sum;
            }
        }
        Tensor::new(t.shape().to_vec(), data).expect("softmax preserves shape")
    }

    /// Softmax along `axis` of a matrix (or along a vector). Axis 0 of a
    /// matrix is realized by transposition, so only row softmax is primitive.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ndim = self.values[x.0].shape().len().max(1);
        if axis + 1 == ndim {
            return Ok(self.softmax(x));
        }
        if ndim == 2 && axis == 0 {
            let xt = self.transpose(x)?;
            let sm = self.softmax(xt);
            return self.transpose(sm);
        }
        Err(Error::numeric(format!(
            "softmax axis {axis} unsupported for rank {ndim}"
        )))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = Self::softmax_rows(&self.values[x.0]);
        let req = self.requires[x.0];
        self.push(value, Op::Softmax(x.0), req)
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = vec![R::ZERO; rows * cols];
        for r in 0..rows {
            let row = t.row(r);
            let mut max = row[0];
            for &v in row {
                max = max.maximum(v);
            }
            let mut sum = R::ZERO;
            for &v in row {
                sum += (v - max).exp();
            }
            let log_z = max + sum.ln();
            for (i, &v) in row.iter().enumerate() {
                data[r * cols + i] = v - log_z;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let req = self.requires[x.0];
        self.push(value, Op::LogSoftmax(x.0), req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let one = R::ONE;
        let value = self.values[x.0].map(|v| one / (one + (-v).exp()));
        let req = self.requires[x.0];
        self.push(value, Op::Sigmoid(x.0), req)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.values[x.0].map(|v| v.tanh());
        let req = self.requires[x.0];
        self.push(value, Op::Tanh(x.0), req)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.values[x.0].map(|v| v.maximum(R::ZERO));
        let req = self.requires[x.0];
        self.push(value, Op::Relu(x.0), req)
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = &self.values[x.0];
        let n = t.cols();
        if self.values[gain.0].numel() != n || self.values[bias.0].numel() != n {
            return Err(Self::shape_err("layer_norm", t, &self.values[gain.0]));
        }
        let rows = t.rows();
        let eps = R::from_f64(LAYER_NORM_EPS);
        let inv_n = R::from_f64(1.0 / n as f64);
        let mut data = vec![R::ZERO; rows * n];
        for r in 0..rows {
            let row = t.row(r);
            let mut mean = R::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_n;
            let mut var = R::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let rstd = R::ONE / (var + eps).sqrt();
            for (i, &v) in row.iter().enumerate() {
                data[r * n + i] =
                    (v - mean) * rstd * self.values[gain.0].data()[i] + self.values[bias.0].data()[i];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let req = self.requires[x.0] || self.requires[gain.0] || self.requires[bias.0];
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
            },
            req,
        ))
    }

    /// Inverted dropout: at train time kept activations are scaled by
    /// 1/keep so inference needs no rescaling. Identity when `train` is off.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let t = &self.values[x.0];
        let mask: Vec<bool> = (0..t.numel()).map(|_| rng.uniform() < keep).collect();
        let scale = R::from_f64(1.0 / keep);
        let data = t
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v * scale } else { R::ZERO })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let req = self.requires[x.0];
        Ok(self.push(value, Op::Dropout { x: x.0, keep, mask }, req))
    }

    /// y[r][j] = x[r][idx[r*w + j]] where the output has `w` columns.
    pub fn gather_per_row(&mut self, x: Var, idx: &[u32], out_cols: usize) -> Result<Var> {
        let t = &self.values[x.0];
        let rows = t.rows();
        if idx.len() != rows * out_cols {
            return Err(Error::numeric(format!(
                "gather_per_row index count {} != {rows}x{out_cols}",
                idx.len()
            )));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(idx.len());
        for r in 0..rows {
            let row = t.row(r);
            for j in 0..out_cols {
                let src = idx[r * out_cols + j] as usize;
                if src >= cols {
                    return Err(Error::numeric(format!(
                        "gather_per_row index {src} out of range 0..{cols}"
                    )));
                }
                data.push(row[src]);
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(
            Tensor::from_rows(rows, out_cols, data)?,
            Op::GatherPerRow {
                x: x.0,
                idx: idx.to_vec(),
            },
            req,
        ))
    }

    /// Sum over masked rows of -log p(target | logits row). Returns a scalar
    /// node; pair with [`Graph::masked_count`] to form a mean.
    pub fn masked_nll_sum(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let t = &self.values[logits.0];
        let rows = t.rows();
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::numeric(format!(
                "masked_nll_sum: {rows} logit rows vs {} targets / {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        let cols = t.cols();
        let mut total = R::ZERO;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            if targets[r] >= cols {
                return Err(Error::numeric(format!(
                    "masked_nll_sum: target {} out of range 0..{cols}",
                    targets[r]
                )));
            }
            let row = t.row(r);
            let mut max = row[0];
            for &v in row {
                max = max.maximum(v);
            }
            let mut sum = R::ZERO;
            for &v in row {
                sum += (v - max).exp();
            }
            total += max + sum.ln() - row[targets[r]];
        }
        let req = self.requires[logits.0];
        Ok(self.push(
            Tensor::scalar(total),
            Op::MaskedNllSum {
                logits: logits.0,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            req,
        ))
    }

    /// Mean negative log-likelihood over masked positions. Errors on an
    /// all-false mask: that situation is a caller bug, distinct from a
    /// genuinely zero loss.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::numeric(
                "masked_cross_entropy: mask selects zero positions".to_string(),
            ));
        }
        let sum = self.masked_nll_sum(logits, targets, mask)?;
        Ok(self.scale(sum, 1.0 / count as f64))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut total = R::ZERO;
        for &v in self.values[x.0].data() {
            total += v;
        }
        let req = self.requires[x.0];
        self.push(Tensor::scalar(total), Op::Sum(x.0), req)
    }

    fn accumulate(&mut self, idx: usize, delta: Tensor<R>) {
        match &mut self.grads[idx] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar node, seeding d(loss)/d(loss) = 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::numeric(format!(
                "backward from non-scalar node of shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.grads[loss.0] = Some(Tensor::new(
            self.values[loss.0].shape().to_vec(),
            vec![R::ONE],
        )?);
        for i in (0..self.values.len()).rev() {
            if self.grads[i].is_none() || !self.requires[i] {
                continue;
            }
            let g = self.grads[i].clone().expect("checked above");
            let op = self.ops[i].clone();
            self.propagate(i, &op, &g)?;
        }
        Ok(())
    }

    fn propagate(&mut self, out: usize, op: &Op, g: &Tensor<R>) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.values[*a].rows(), self.values[*a].cols());
                let n = self.values[*b].cols();
                if self.requires[*a] {
                    // dA = dC @ B^T
                    let mut da = vec![R::ZERO; m * k];
                    R::gemm(
                        m,
                        n,
                        k,
                        R::ONE,
                        g.data(),
                        n as isize,
                        1,
                        self.values[*b].data(),
                        1,
                        n as isize,
                        R::ZERO,
                        &mut da,
                    );
                    self.accumulate(*a, Tensor::from_rows(m, k, da)?);
                }
                if self.requires[*b] {
                    // dB = A^T @ dC
                    let mut db = vec![R::ZERO; k * n];
                    R::gemm(
                        k,
                        m,
                        n,
                        R::ONE,
                        self.values[*a].data(),
                        1,
                        k as isize,
                        g.data(),
                        n as isize,
                        1,
                        R::ZERO,
                        &mut db,
                    );
                    self.accumulate(*b, Tensor::from_rows(k, n, db)?);
                }
            }
            Op::Add(a, b) => {
                if self.requires[*a] {
                    self.accumulate(*a, g.clone());
                }
                if self.requires[*b] {
                    self.accumulate(*b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if self.requires[*a] {
                    self.accumulate(*a, g.clone());
                }
                if self.requires[*row] {
                    let n = self.values[*row].numel();
                    let mut dr = vec![R::ZERO; n];
                    for (i, &v) in g.data().iter().enumerate() {
                        dr[i % n] += v;
                    }
                    self.accumulate(*row, Tensor::new(self.values[*row].shape().to_vec(), dr)?);
                }
            }
            Op::Mul(a, b) => {
                if self.requires[*a] {
                    let da = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(self.values[*b].data())
                            .map(|(&gv, &bv)| gv * bv)
                            .collect(),
                    )?;
                    self.accumulate(*a, da);
                }
                if self.requires[*b] {
                    let db = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(self.values[*a].data())
                            .map(|(&gv, &av)| gv * av)
                            .collect(),
                    )?;
                    self.accumulate(*b, db);
                }
            }
            Op::Scale(a, c) => {
                if self.requires[*a] {
                    let factor = R::from_f64(*c);
                    self.accumulate(*a, g.map(|v| v * factor));
                }
            }
            Op::ConcatRows(parts) => {
                let mut row_off = 0;
                for &p in parts {
                    let rows = self.values[p].rows();
                    if self.requires[p] {
                        let slice = g.slice_rows(row_off, rows);
                        self.accumulate(p, slice);
                    }
                    row_off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut col_off = 0;
                for &p in parts {
                    let c = self.values[p].cols();
                    if self.requires[p] {
                        let mut dp = vec![R::ZERO; rows * c];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c]
                                .copy_from_slice(&g.data()[r * total + col_off..r * total + col_off + c]);
                        }
                        self.accumulate(p, Tensor::from_rows(rows, c, dp)?);
                    }
                    col_off += c;
                }
            }
            Op::SliceCols { x, start } => {
                if self.requires[*x] {
                    let (rows, cols) = (self.values[*x].rows(), self.values[*x].cols());
                    let len = g.cols();
                    let mut dx = vec![R::ZERO; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                    }
                    self.accumulate(*x, Tensor::from_rows(rows, cols, dx)?);
                }
            }
            Op::Transpose(x) => {
                if self.requires[*x] {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dx = vec![R::ZERO; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            dx[c * m + r] = g.data()[r * n + c];
                        }
                    }
                    self.accumulate(*x, Tensor::from_rows(n, m, dx)?);
                }
            }
            Op::Embed { table, ids } => {
                if self.requires[*table] {
                    let (rows, d) = (self.values[*table].rows(), self.values[*table].cols());
                    let mut dt = vec![R::ZERO; rows * d];
                    for (i, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += g.data()[i * d + c];
                        }
                    }
                    self.accumulate(*table, Tensor::from_rows(rows, d, dt)?);
                }
            }
            Op::Softmax(x) => {
                if self.requires[*x] {
                    // dx = y * (dy - sum(y * dy)) per row
                    let y = self.values[out].clone();
                    let (rows, cols) = (y.rows(), y.cols());
                    let mut dx = vec![R::ZERO; rows * cols];
                    for r in 0..rows {
                        let yr = y.row(r);
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let mut dot = R::ZERO;
                        for c in 0..cols {
                            dot += yr[c] * gr[c];
                        }
                        for c in 0..cols {
                            dx[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    self.accumulate(*x, Tensor::new(y.shape().to_vec(), dx)?);
                }
            }
            Op::LogSoftmax(x) => {
                if self.requires[*x] {
                    let y = self.values[out].clone();
                    let (rows, cols) = (y.rows(), y.cols());
                    let mut dx = vec![R::ZERO; rows * cols];
                    for r in 0..rows {
                        let yr = y.row(r);
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let mut gsum = R::ZERO;
                        for &g_c in gr.iter().take(cols) {
                            gsum += g_c;
                        }
                        for c in 0..cols {
                            dx[r * cols + c] = gr[c] - yr[c].exp() * gsum;
                        }
                    }
                    self.accumulate(*x, Tensor::new(y.shape().to_vec(), dx)?);
                }
            }
            Op::Sigmoid(x) => {
                if self.requires[*x] {
                    let y = self.values[out].clone();
                    let dx = Tensor::new(
                        y.shape().to_vec(),
                        y.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&yv, &gv)| gv * yv * (R::ONE - yv))
                            .collect(),
                    )?;
                    self.accumulate(*x, dx);
                }
            }
            Op::Tanh(x) => {
                if self.requires[*x] {
                    let y = self.values[out].clone();
                    let dx = Tensor::new(
                        y.shape().to_vec(),
                        y.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&yv, &gv)| gv * (R::ONE - yv * yv))
                            .collect(),
                    )?;
                    self.accumulate(*x, dx);
                }
            }
            Op::Relu(x) => {
                if self.requires[*x] {
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        self.values[*x]
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xv, &gv)| if xv > R::ZERO { gv } else { R::ZERO })
                            .collect(),
                    )?;
                    self.accumulate(*x, dx);
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let t = self.values[*x].clone();
                let (rows, n) = (t.rows(), t.cols());
                let eps = R::from_f64(LAYER_NORM_EPS);
                let inv_n = R::from_f64(1.0 / n as f64);
                let gain_v = self.values[*gain].clone();
                let mut dx = vec![R::ZERO; rows * n];
                let mut dgain = vec![R::ZERO; n];
                let mut dbias = vec![R::ZERO; n];
                for r in 0..rows {
                    let row = t.row(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let mut mean = R::ZERO;
                    for &v in row {
                        mean += v;
                    }
                    mean *= inv_n;
                    let mut var = R::ZERO;
                    for &v in row {
                        let d = v - mean;
                        var += d * d;
                    }
                    var *= inv_n;
                    let rstd = R::ONE / (var + eps).sqrt();
                    // xhat_i = (x_i - mean) * rstd; dy_i via gain
                    let mut sum_dxhat = R::ZERO;
                    let mut sum_dxhat_xhat = R::ZERO;
                    for c in 0..n {
                        let xhat = (row[c] - mean) * rstd;
                        let dxhat = gr[c] * gain_v.data()[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgain[c] += gr[c] * xhat;
                        dbias[c] += gr[c];
                    }
                    for c in 0..n {
                        let xhat = (row[c] - mean) * rstd;
                        let dxhat = gr[c] * gain_v.data()[c];
                        dx[r * n + c] =
                            rstd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                    }
                }
                if self.requires[*x] {
                    self.accumulate(*x, Tensor::new(t.shape().to_vec(), dx)?);
                }
                if self.requires[*gain] {
                    self.accumulate(*gain, Tensor::new(gain_v.shape().to_vec(), dgain)?);
                }
                if self.requires[*bias] {
                    self.accumulate(
                        *bias,
                        Tensor::new(self.values[*bias].shape().to_vec(), dbias)?,
                    );
                }
            }
            Op::Dropout { x, keep, mask } => {
                if self.requires[*x] {
                    let scale = R::from_f64(1.0 / keep);
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(mask)
                            .map(|(&gv, &m)| if m { gv * scale } else { R::ZERO })
                            .collect(),
                    )?;
                    self.accumulate(*x, dx);
                }
            }
            Op::GatherPerRow { x, idx } => {
                if self.requires[*x] {
                    let (rows, cols) = (self.values[*x].rows(), self.values[*x].cols());
                    let w = g.cols();
                    let mut dx = vec![R::ZERO; rows * cols];
                    for r in 0..rows {
                        for j in 0..w {
                            let src = idx[r * w + j] as usize;
                            dx[r * cols + src] += g.data()[r * w + j];
                        }
                    }
                    self.accumulate(*x, Tensor::from_rows(rows, cols, dx)?);
                }
            }
            Op::MaskedNllSum {
                logits,
                targets,
                mask,
            } => {
                if self.requires[*logits] {
                    let t = self.values[*logits].clone();
                    let probs = Self::softmax_rows(&t);
                    let (rows, cols) = (t.rows(), t.cols());
                    let gscalar = g.item();
                    let mut dx = vec![R::ZERO; rows * cols];
                    for r in 0..rows {
                        if !mask[r] {
                            continue;
                        }
                        for c in 0..cols {
                            dx[r * cols + c] = probs.row(r)[c] * gscalar;
                        }
                        dx[r * cols + targets[r]] -= gscalar;
                    }
                    self.accumulate(*logits, Tensor::from_rows(rows, cols, dx)?);
                }
            }
            Op::Sum(x) => {
                if self.requires[*x] {
                    let dx = Tensor::full(self.values[*x].shape().to_vec(), g.item());
                    self.accumulate(*x, dx);
                }
            }
        }
        Ok(())
    }
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Graph::new()
    }
}
