//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! [`Tape`] is an append-only Wengert list: every operation pushes one node
//! whose parents already sit earlier in the list, so the list order is a
//! topological order. [`Tape::backward`] walks it once in reverse, summing
//! gradient contributions into each parent — a node consumed twice receives
//! the sum of both incoming gradients.
//!
//! Leaves are trainable parameters (they receive gradients); constants are
//! data (they do not). Each op's backward rule is pinned by the
//! finite-difference checker in this module's tests.

use super::matrix::Matrix;
use super::scalar;
use super::NumericsError;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Constant,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// x (n x m) plus a 1 x m row broadcast over all rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    /// Mean smooth-L1 over all entries -> 1x1.
    SmoothL1 { pred: Var, target: Var, beta: f64 },
    /// Elementwise smooth-L1 terms, same shape as the inputs.
    SmoothL1Each { pred: Var, target: Var, beta: f64 },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize, orig_cols: usize },
    GatherRows { table: Var, ids: Vec<usize> },
    /// Column-wise max over rows -> 1 x m; gradient routes to the first
    /// maximizing row per column.
    ColMax { x: Var, argmax: Vec<usize> },
    SoftmaxRows(Var),
    /// Row-wise layer norm with per-column affine params (1 x m each).
    LayerNorm { x: Var, gamma: Var, xhat: Matrix, inv_std: Vec<f64> },
    /// Column-wise batch norm over rows (train mode; population variance).
    BatchNorm { x: Var, gamma: Var, xhat: Matrix, inv_std: Vec<f64> },
    /// Masked mean token cross-entropy -> 1x1. `softmax` rows are only
    /// populated where mask is nonzero.
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<f64>,
        softmax: Matrix,
    },
    /// Per-segment exclusive prefix sum of a column vector whose rows are
    /// grouped into consecutive segments of length `seg`.
    SegCumsumExcl { x: Var, seg: usize },
    /// Per-segment total -> (rows/seg) x 1.
    SegSum { x: Var, seg: usize },
    /// y[r, c] = sum_i w[r*seg+i] * v[r*seg+i, c] -> (rows/seg) x c.
    SegWeightedSum { w: Var, v: Var, seg: usize },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`]. Nodes that
/// are not ancestors of the loss have no entry; `or_zeros` materializes the
/// zero matrix for them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn or_zeros(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; receives a gradient.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-trainable input; participates in forward only.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let v = self.value(x).add_row_broadcast(self.value(row))?;
        Ok(self.push(v, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(scalar::relu);
        self.push(v, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(scalar::gelu);
        self.push(v, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(scalar::sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let v = Matrix::filled(1, 1, m.sum() / m.len() as f64);
        self.push(v, Op::Mean(x))
    }

    /// Mean smooth-L1 between two same-shape matrices -> 1x1.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var, NumericsError> {
        self.check_sl1(pred, target, beta)?;
        let (p, t) = (self.value(pred), self.value(target));
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| scalar::smooth_l1_term(a - b, beta))
            .sum();
        let v = Matrix::filled(1, 1, total / p.len() as f64);
        Ok(self.push(v, Op::SmoothL1 { pred, target, beta }))
    }

    /// Elementwise smooth-L1 terms (no reduction).
    pub fn smooth_l1_each(
        &mut self,
        pred: Var,
        target: Var,
        beta: f64,
    ) -> Result<Var, NumericsError> {
        self.check_sl1(pred, target, beta)?;
        let (p, t) = (self.value(pred), self.value(target));
        let data: Vec<f64> = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| scalar::smooth_l1_term(a - b, beta))
            .collect();
        let v = Matrix::from_vec(p.rows(), p.cols(), data)?;
        Ok(self.push(v, Op::SmoothL1Each { pred, target, beta }))
    }

    fn check_sl1(&self, pred: Var, target: Var, beta: f64) -> Result<(), NumericsError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "smooth_l1",
                lhs_rows: p.rows(),
                lhs_cols: p.cols(),
                rhs_rows: t.rows(),
                rhs_cols: t.cols(),
            });
        }
        if beta <= 0.0 {
            return Err(NumericsError::Invalid(format!(
                "smooth_l1 beta must be positive, got {beta}"
            )));
        }
        if p.is_empty() {
            return Err(NumericsError::Invalid(
                "smooth_l1 over an empty matrix".into(),
            ));
        }
        Ok(())
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Invalid("concat_rows of nothing".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs_rows: rows,
                    lhs_cols: cols,
                    rhs_rows: m.rows(),
                    rhs_cols: m.cols(),
                });
            }
            rows += m.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let v = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Invalid("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs_rows: rows,
                    lhs_cols: cols,
                    rhs_rows: m.rows(),
                    rhs_cols: m.cols(),
                });
            }
            cols += m.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                let src = m.row(r);
                out.row_mut(r)[at..at + src.len()].copy_from_slice(src);
            }
            at += m.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let m = self.value(x);
        if start + len > m.rows() {
            return Err(NumericsError::Invalid(format!(
                "slice_rows {start}..{} out of bounds for {} rows",
                start + len,
                m.rows()
            )));
        }
        let data = m.data()[start * m.cols()..(start + len) * m.cols()].to_vec();
        let v = Matrix::from_vec(len, m.cols(), data)?;
        Ok(self.push(v, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let m = self.value(x);
        if start + len > m.cols() {
            return Err(NumericsError::Invalid(format!(
                "slice_cols {start}..{} out of bounds for {} cols",
                start + len,
                m.cols()
            )));
        }
        let orig_cols = m.cols();
        let mut out = Matrix::zeros(m.rows(), len);
        for r in 0..m.rows() {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols { x, start, orig_cols }))
    }

    /// Rows of `table` selected by index; duplicates allowed (their gradients
    /// accumulate into the same table row).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        for &id in ids {
            if id >= t.rows() {
                return Err(NumericsError::Invalid(format!(
                    "gather_rows index {id} out of bounds for {} rows",
                    t.rows()
                )));
            }
        }
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        Ok(self.push(out, Op::GatherRows { table, ids: ids.to_vec() }))
    }

    /// Column-wise max over rows -> 1 x m. Ties route the gradient to the
    /// first maximizing row (deterministic).
    pub fn col_max(&mut self, x: Var) -> Result<Var, NumericsError> {
        let m = self.value(x);
        if m.rows() == 0 {
            return Err(NumericsError::Invalid("col_max of an empty matrix".into()));
        }
        let mut best = m.row(0).to_vec();
        let mut argmax = vec![0usize; m.cols()];
        for r in 1..m.rows() {
            let row = m.row(r);
            for c in 0..m.cols() {
                if row[c] > best[c] {
                    best[c] = row[c];
                    argmax[c] = r;
                }
            }
        }
        let v = Matrix::row_vector(best);
        Ok(self.push(v, Op::ColMax { x, argmax }))
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            softmax_into(m.row(r), out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Row-wise layer norm: each row is normalized over its columns with
    /// population variance, then scaled/shifted by 1 x m `gamma`/`beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let m = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        if g.shape() != (1, m.cols()) || b.shape() != (1, m.cols()) {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs_rows: m.rows(),
                lhs_cols: m.cols(),
                rhs_rows: g.rows(),
                rhs_cols: g.cols(),
            });
        }
        let n = m.cols() as f64;
        let mut xhat = Matrix::zeros(m.rows(), m.cols());
        let mut inv_std = Vec::with_capacity(m.rows());
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            let row = m.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..m.cols() {
                let xh = (row[c] - mean) * inv;
                xhat.set(r, c, xh);
                out.set(r, c, xh * g.get(0, c));
            }
        }
        // beta is applied as a separate AddRow node, so its gradient (a plain
        // column sum) falls out of the existing rule.
        let scaled = self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                xhat,
                inv_std,
            },
        );
        self.add_row(scaled, beta)
    }

    /// Column-wise batch norm in train mode. Normalizes each column over the
    /// batch (rows) with population variance, applies the 1 x m affine, and
    /// updates `running_mean`/`running_var` in place by EMA with `momentum`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Matrix,
        running_var: &mut Matrix,
        momentum: f64,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let m = self.value(x);
        if m.rows() < 2 {
            return Err(NumericsError::BatchTooSmall { rows: m.rows() });
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        if g.shape() != (1, m.cols())
            || b.shape() != (1, m.cols())
            || running_mean.shape() != (1, m.cols())
            || running_var.shape() != (1, m.cols())
        {
            return Err(NumericsError::ShapeMismatch {
                op: "batch_norm",
                lhs_rows: m.rows(),
                lhs_cols: m.cols(),
                rhs_rows: g.rows(),
                rhs_cols: g.cols(),
            });
        }
        let rows = m.rows();
        let cols = m.cols();
        let n = rows as f64;
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(cols);
        let mut out = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let mut mean = 0.0;
            for r in 0..rows {
                mean += m.get(r, c);
            }
            mean /= n;
            let mut var = 0.0;
            for r in 0..rows {
                let d = m.get(r, c) - mean;
                var += d * d;
            }
            var /= n; // population variance
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for r in 0..rows {
                let xh = (m.get(r, c) - mean) * inv;
                xhat.set(r, c, xh);
                out.set(r, c, xh * g.get(0, c));
            }
            let rm = running_mean.get(0, c);
            running_mean.set(0, c, (1.0 - momentum) * rm + momentum * mean);
            let rv = running_var.get(0, c);
            running_var.set(0, c, (1.0 - momentum) * rv + momentum * var);
        }
        let scaled = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                xhat,
                inv_std,
            },
        );
        self.add_row(scaled, beta)
    }

    /// Masked mean cross-entropy over rows of `logits`: rows are positions,
    /// columns are classes. Positions with mask 0 contribute nothing; the
    /// result is the mask-weighted mean.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[f64],
    ) -> Result<Var, NumericsError> {
        let m = self.value(logits);
        if targets.len() != m.rows() || mask.len() != m.rows() {
            return Err(NumericsError::Invalid(format!(
                "cross_entropy: {} logit rows but {} targets / {} mask entries",
                m.rows(),
                targets.len(),
                mask.len()
            )));
        }
        let wsum: f64 = mask.iter().sum();
        if wsum <= 0.0 {
            return Err(NumericsError::Invalid(
                "cross_entropy: mask selects no positions".into(),
            ));
        }
        let mut softmax = Matrix::zeros(m.rows(), m.cols());
        let mut total = 0.0;
        for r in 0..m.rows() {
            if mask[r] == 0.0 {
                continue;
            }
            if targets[r] >= m.cols() {
                return Err(NumericsError::Invalid(format!(
                    "cross_entropy: target {} out of vocabulary {}",
                    targets[r],
                    m.cols()
                )));
            }
            let row = m.row(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let lse = max + denom.ln();
            total += mask[r] * (lse - row[targets[r]]);
            let out = softmax.row_mut(r);
            for (c, &v) in row.iter().enumerate() {
                out[c] = (v - max).exp() / denom;
            }
        }
        let v = Matrix::filled(1, 1, total / wsum);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                softmax,
            },
        ))
    }

    fn check_segmented(
        &self,
        x: Var,
        seg: usize,
        op: &'static str,
        need_col: bool,
    ) -> Result<(), NumericsError> {
        let m = self.value(x);
        if need_col && m.cols() != 1 {
            return Err(NumericsError::BadShape {
                op,
                expected: "column (n x 1)".into(),
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        if seg == 0 || m.rows() % seg != 0 {
            return Err(NumericsError::Invalid(format!(
                "{op}: {} rows not divisible into segments of {seg}",
                m.rows()
            )));
        }
        Ok(())
    }

    /// Exclusive prefix sums within consecutive segments of length `seg`.
    pub fn seg_cumsum_exclusive(&mut self, x: Var, seg: usize) -> Result<Var, NumericsError> {
        self.check_segmented(x, seg, "seg_cumsum_exclusive", true)?;
        let m = self.value(x);
        let mut data = Vec::with_capacity(m.rows());
        for s in 0..m.rows() / seg {
            let mut acc = 0.0;
            for i in 0..seg {
                data.push(acc);
                acc += m.get(s * seg + i, 0);
            }
        }
        let v = Matrix::col_vector(data);
        Ok(self.push(v, Op::SegCumsumExcl { x, seg }))
    }

    /// Per-segment totals -> (rows/seg) x 1.
    pub fn seg_sum(&mut self, x: Var, seg: usize) -> Result<Var, NumericsError> {
        self.check_segmented(x, seg, "seg_sum", true)?;
        let m = self.value(x);
        let mut data = Vec::with_capacity(m.rows() / seg);
        for s in 0..m.rows() / seg {
            data.push((0..seg).map(|i| m.get(s * seg + i, 0)).sum());
        }
        let v = Matrix::col_vector(data);
        Ok(self.push(v, Op::SegSum { x, seg }))
    }

    /// Weighted per-segment reduction: y[s, c] = Σ_i w[s*seg+i] v[s*seg+i, c].
    pub fn seg_weighted_sum(&mut self, w: Var, v: Var, seg: usize) -> Result<Var, NumericsError> {
        self.check_segmented(w, seg, "seg_weighted_sum", true)?;
        let wm = self.value(w);
        let vm = self.value(v);
        if vm.rows() != wm.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "seg_weighted_sum",
                lhs_rows: wm.rows(),
                lhs_cols: wm.cols(),
                rhs_rows: vm.rows(),
                rhs_cols: vm.cols(),
            });
        }
        let segs = wm.rows() / seg;
        let mut out = Matrix::zeros(segs, vm.cols());
        for s in 0..segs {
            for i in 0..seg {
                let wv = wm.get(s * seg + i, 0);
                let row = vm.row(s * seg + i);
                let orow = out.row_mut(s);
                for c in 0..row.len() {
                    orow[c] += wv * row[c];
                }
            }
        }
        Ok(self.push(out, Op::SegWeightedSum { w, v, seg }))
    }

    /// Reverse pass from a scalar loss. Visits each node exactly once, in
    /// reverse topological (= construction) order.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lshape = self.value(loss).shape();
        if lshape != (1, 1) {
            return Err(NumericsError::NonScalarLoss {
                rows: lshape.0,
                cols: lshape.1,
            });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Constants never need gradients; skipping them avoids materializing
    /// large deltas (e.g. the d(encoded points) gemm in render training).
    fn is_const(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Constant)
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<(), NumericsError> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul(a, b) => {
                if !self.is_const(*a) {
                    accumulate(grads, *a, g.matmul_nt(val(*b))?);
                }
                if !self.is_const(*b) {
                    accumulate(grads, *b, val(*a).matmul_tn(g)?);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.hadamard(val(*b))?);
                accumulate(grads, *b, g.hadamard(val(*a))?);
            }
            Op::AddRow(x, row) => {
                accumulate(grads, *x, g.clone());
                let mut col_sums = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    let grow = g.row(r);
                    let acc = col_sums.row_mut(0);
                    for c in 0..grow.len() {
                        acc[c] += grow[c];
                    }
                }
                accumulate(grads, *row, col_sums);
            }
            Op::Scale(x, c) => accumulate(grads, *x, g.scale(*c)),
            Op::Relu(x) => {
                accumulate(grads, *x, elementwise_chain(g, val(*x), scalar::drelu))
            }
            Op::Gelu(x) => {
                accumulate(grads, *x, elementwise_chain(g, val(*x), scalar::dgelu))
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                accumulate(grads, *x, elementwise_chain(g, y, |yv| yv * (1.0 - yv)));
            }
            Op::Exp(x) => {
                let y = &self.nodes[i].value;
                accumulate(grads, *x, g.hadamard(y)?);
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::Sum(x) => {
                let m = val(*x);
                accumulate(grads, *x, Matrix::filled(m.rows(), m.cols(), g.get(0, 0)));
            }
            Op::Mean(x) => {
                let m = val(*x);
                let c = g.get(0, 0) / m.len() as f64;
                accumulate(grads, *x, Matrix::filled(m.rows(), m.cols(), c));
            }
            Op::SmoothL1 { pred, target, beta } => {
                let (p, t) = (val(*pred), val(*target));
                let coeff = g.get(0, 0) / p.len() as f64;
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                for (idx, (&a, &b)) in p.data().iter().zip(t.data()).enumerate() {
                    dp.data_mut()[idx] = coeff * scalar::dsmooth_l1_term(a - b, *beta);
                }
                if !self.is_const(*target) {
                    accumulate(grads, *target, dp.scale(-1.0));
                }
                accumulate(grads, *pred, dp);
            }
            Op::SmoothL1Each { pred, target, beta } => {
                let (p, t) = (val(*pred), val(*target));
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                for (idx, (&a, &b)) in p.data().iter().zip(t.data()).enumerate() {
                    dp.data_mut()[idx] = g.data()[idx] * scalar::dsmooth_l1_term(a - b, *beta);
                }
                if !self.is_const(*target) {
                    accumulate(grads, *target, dp.scale(-1.0));
                }
                accumulate(grads, *pred, dp);
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    let cols = val(p).cols();
                    let data = g.data()[at * cols..(at + rows) * cols].to_vec();
                    accumulate(grads, p, Matrix::from_vec(rows, cols, data)?);
                    at += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let m = val(p);
                    let mut dp = Matrix::zeros(m.rows(), m.cols());
                    for r in 0..m.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[at..at + m.cols()]);
                    }
                    accumulate(grads, p, dp);
                    at += m.cols();
                }
            }
            Op::SliceRows { x, start } => {
                let m = val(*x);
                let mut dx = Matrix::zeros(m.rows(), m.cols());
                for r in 0..g.rows() {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start, orig_cols } => {
                let m = val(*x);
                let mut dx = Matrix::zeros(m.rows(), *orig_cols);
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::GatherRows { table, ids } => {
                let t = val(*table);
                let mut dt = Matrix::zeros(t.rows(), t.cols());
                for (r, &id) in ids.iter().enumerate() {
                    let src = g.row(r);
                    let dst = dt.row_mut(id);
                    for c in 0..src.len() {
                        dst[c] += src[c];
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::ColMax { x, argmax } => {
                let m = val(*x);
                let mut dx = Matrix::zeros(m.rows(), m.cols());
                for (c, &r) in argmax.iter().enumerate() {
                    dx.set(r, c, g.get(0, c));
                }
                accumulate(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[i].value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let out = dx.row_mut(r);
                    for c in 0..yr.len() {
                        out[c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                xhat,
                inv_std,
            } => {
                let gm = val(*gamma);
                let cols = xhat.cols();
                let n = cols as f64;
                let mut dgamma = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(xhat.rows(), cols);
                for r in 0..xhat.rows() {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    // per-row reductions of dxhat = g ⊙ gamma
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for c in 0..cols {
                        let dxh = gr[c] * gm.get(0, c);
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xr[c];
                        dgamma.data_mut()[c] += gr[c] * xr[c];
                    }
                    let out = dx.row_mut(r);
                    for c in 0..cols {
                        let dxh = gr[c] * gm.get(0, c);
                        out[c] = inv_std[r] * (dxh - sum_dxh / n - xr[c] * sum_dxh_xh / n);
                    }
                }
                accumulate(grads, *gamma, dgamma);
                accumulate(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                xhat,
                inv_std,
            } => {
                let gm = val(*gamma);
                let rows = xhat.rows();
                let cols = xhat.cols();
                let n = rows as f64;
                let mut dgamma = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(rows, cols);
                for c in 0..cols {
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for r in 0..rows {
                        let dxh = g.get(r, c) * gm.get(0, c);
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat.get(r, c);
                        dgamma.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                    }
                    for r in 0..rows {
                        let dxh = g.get(r, c) * gm.get(0, c);
                        dx.set(
                            r,
                            c,
                            inv_std[c]
                                * (dxh - sum_dxh / n - xhat.get(r, c) * sum_dxh_xh / n),
                        );
                    }
                }
                accumulate(grads, *gamma, dgamma);
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                softmax,
            } => {
                let wsum: f64 = mask.iter().sum();
                let coeff = g.get(0, 0) / wsum;
                let mut dl = Matrix::zeros(softmax.rows(), softmax.cols());
                for r in 0..softmax.rows() {
                    if mask[r] == 0.0 {
                        continue;
                    }
                    let sr = softmax.row(r);
                    let out = dl.row_mut(r);
                    for c in 0..sr.len() {
                        out[c] = coeff * mask[r] * sr[c];
                    }
                    out[targets[r]] -= coeff * mask[r];
                }
                accumulate(grads, *logits, dl);
            }
            Op::SegCumsumExcl { x, seg } => {
                // y[s, i] = Σ_{j<i} x[s, j]  =>  dx[s, j] = Σ_{i>j} g[s, i]
                let m = val(*x);
                let mut dx = Matrix::zeros(m.rows(), 1);
                for s in 0..m.rows() / seg {
                    let mut acc = 0.0;
                    for i in (0..*seg).rev() {
                        dx.set(s * seg + i, 0, acc);
                        acc += g.get(s * seg + i, 0);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::SegSum { x, seg } => {
                let m = val(*x);
                let mut dx = Matrix::zeros(m.rows(), 1);
                for s in 0..m.rows() / seg {
                    for i in 0..*seg {
                        dx.set(s * seg + i, 0, g.get(s, 0));
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::SegWeightedSum { w, v, seg } => {
                let wm = val(*w);
                let vm = val(*v);
                let mut dw = Matrix::zeros(wm.rows(), 1);
                let mut dv = Matrix::zeros(vm.rows(), vm.cols());
                for s in 0..wm.rows() / seg {
                    let grow = g.row(s);
                    for i in 0..*seg {
                        let r = s * seg + i;
                        let vrow = vm.row(r);
                        let mut dot = 0.0;
                        for c in 0..vrow.len() {
                            dot += grow[c] * vrow[c];
                        }
                        dw.set(r, 0, dot);
                        let wv = wm.get(r, 0);
                        let dvrow = dv.row_mut(r);
                        for c in 0..grow.len() {
                            dvrow[c] = wv * grow[c];
                        }
                    }
                }
                accumulate(grads, *w, dw);
                accumulate(grads, *v, dv);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
    match &mut grads[v.0] {
        Some(g) => {
            g.add_assign(&delta).expect("gradient shape mismatch");
        }
        slot @ None => *slot = Some(delta),
    }
}

fn elementwise_chain(g: &Matrix, x: &Matrix, d: impl Fn(f64) -> f64) -> Matrix {
    let mut out = g.clone();
    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
        *o *= d(xv);
    }
    out
}

/// Forward pass of a plain MLP over tape vars: matmul + bias broadcast per
/// layer with ReLU between layers and none after the last. `layers` holds
/// (weight, bias) pairs.
pub fn relu_mlp(tape: &mut Tape, x: Var, layers: &[(Var, Var)]) -> Result<Var, NumericsError> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let lin = tape.matmul(h, w)?;
        h = tape.add_row(lin, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut denom = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        denom += e;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}
