//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably, records every operation as
//! it is evaluated, and [`Graph::backward`] returns a [`Gradients`] table that
//! is folded back into the store once the graph is dropped.

use super::tensor::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
    RowNorm(Var),
    Softmax(Var),
    MaskedLogSoftmax(Var, Vec<bool>),
    Mse(Var, Var),
    Conv2d(Box<ConvRecord>),
}

#[derive(Debug)]
struct ConvRecord {
    x: Var,
    w: Var,
    b: Var,
    geom: ConvGeom,
    /// im2col buffers for every batch item, `[B][C*K*K x Ho*Wo]`.
    cols: Vec<f64>,
}

/// Geometry of a 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (ho, wo) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let plane = ho * wo;
        for c in 0..self.in_ch {
            let xc = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * wo + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                xc[iy as usize * self.width + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], dx: &mut [f64]) {
        let (ho, wo) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let plane = ho * wo;
        for c in 0..self.in_ch {
            let dxc = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.width {
                                dxc[iy as usize * self.width + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Recorded computation over a borrowed parameter store.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&cols, rest)) => (rest.iter().product(), cols),
        None => (1, 1),
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(pid) => self.store.get(pid),
            _ => node
                .value
                .as_ref()
                .expect("non-parameter nodes own a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.data(v)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input (no gradient flows out of the graph through it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Parameter leaf. Repeated calls with the same id share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(src.shape(), data).expect("same shape");
        self.push(op, t)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(op, t))
    }

    /// `[m x k] . [k x n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.data(a),
            false,
            self.data(b),
            false,
            0.0,
            &mut out,
        );
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    /// Adds a bias vector of length `cols` to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if self.value(b).len() != cols {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bias = self.data(b);
        let src = self.value(x);
        let mut data = src.data().to_vec();
        for row in data.chunks_mut(cols) {
            row.iter_mut().zip(bias).for_each(|(v, &bb)| *v += bb);
        }
        let t = Tensor::new(src.shape(), data)?;
        Ok(self.push(Op::AddBias(x, b), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |v| v * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |v| v * v)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if shape.iter().product::<usize>() != src.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: src.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor::new(shape, src.data().to_vec())?;
        Ok(self.push(Op::Reshape(a), t))
    }

    /// Collapse everything after the leading (batch) dimension.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let batch = shape.first().copied().unwrap_or(1);
        let rest = self.value(a).len() / batch.max(1);
        self.reshape(a, &[batch, rest])
    }

    /// Concatenate rank-2 tensors along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::usage("concat of nothing"))?;
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::new(&[rows, total], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), t))
    }

    /// Stack rank-2 tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::usage("concat of nothing"))?;
        let cols = self.shape(first)[1];
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.data(p));
        }
        let t = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), t))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: s.to_vec(),
                rhs: vec![start, end],
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.data(a);
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let t = Tensor::new(&[rows, end - start], data)?;
        Ok(self.push(Op::SliceCols(a, start, end), t))
    }

    /// Rows `idx[i]` of a rank-2 tensor; embedding lookup when `a` is a table.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: s.to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::usage(format!(
                "row index {bad} out of range for {rows} rows"
            )));
        }
        let src = self.data(a);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(&[idx.len(), cols], data)?;
        Ok(self.push(Op::GatherRows(a, idx.to_vec()), t))
    }

    /// `out[r] = a[r, idx[r]]`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(a));
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(Error::Dimension {
                op: "pick_cols",
                lhs: self.shape(a).to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let src = self.data(a);
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| src[r * cols + c])
            .collect();
        Ok(self.push(Op::PickCols(a, idx.to_vec()), Tensor::from_vec(data)))
    }

    /// Euclidean norm of every row, shape `[rows]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(a));
        let src = self.data(a);
        let data = (0..rows)
            .map(|r| {
                src[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        self.push(Op::RowNorm(a), Tensor::from_vec(data))
    }

    /// Euclidean norm of the whole tensor, shape `[1]`.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[1, n])?;
        let r = self.row_norm(flat);
        self.reshape(r, &[1])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(a));
        let shape = self.shape(a).to_vec();
        let src = self.data(a);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            data[r * cols..(r + 1) * cols]
                .iter_mut()
                .for_each(|o| *o /= z);
        }
        let t = Tensor::new(&shape, data).expect("same shape");
        self.push(Op::Softmax(a), t)
    }

    /// Row-wise log-softmax restricted to legal entries. Masked entries are
    /// reported as `0.0` and receive no gradient.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(a));
        if mask.len() != rows * cols {
            return Err(Error::Dimension {
                op: "masked_log_softmax",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let shape = self.shape(a).to_vec();
        let src = self.data(a);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let legal = &mask[r * cols..(r + 1) * cols];
            let m = row
                .iter()
                .zip(legal)
                .filter(|(_, &l)| l)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return Err(Error::usage("every entry of a softmax row is masked"));
            }
            let lse = m + row
                .iter()
                .zip(legal)
                .filter(|(_, &l)| l)
                .map(|(&v, _)| (v - m).exp())
                .sum::<f64>()
                .ln();
            for c in 0..cols {
                if legal[c] {
                    data[r * cols + c] = row[c] - lse;
                }
            }
        }
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(Op::MaskedLogSoftmax(a, mask.to_vec()), t))
    }

    /// Mean squared error, shape `[1]`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let s = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(s)))
    }

    /// 2-d convolution. `x` is `[B, C, H, W]`, `w` is `[O, C, K, K]`, `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || stride == 0 {
            return Err(Error::Dimension {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if self.value(b).len() != sw[0] {
            return Err(Error::Dimension {
                op: "conv2d bias",
                lhs: sw.to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let geom = ConvGeom {
            batch: sx[0],
            in_ch: sx[1],
            out_ch: sw[0],
            height: sx[2],
            width: sx[3],
            kernel: sw[2],
            stride,
            pad,
        };
        if geom.height + 2 * pad < geom.kernel || geom.width + 2 * pad < geom.kernel {
            return Err(Error::Dimension {
                op: "conv2d kernel",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (patch, plane) = (geom.patch(), geom.out_plane());
        let in_size = geom.in_ch * geom.height * geom.width;
        let out_size = geom.out_ch * plane;
        let mut cols = vec![0.0; geom.batch * patch * plane];
        let mut out = vec![0.0; geom.batch * out_size];
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        for n in 0..geom.batch {
            let c = &mut cols[n * patch * plane..(n + 1) * patch * plane];
            geom.im2col(&xd[n * in_size..(n + 1) * in_size], c);
            let o = &mut out[n * out_size..(n + 1) * out_size];
            for (ch, row) in o.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = bd[ch]);
            }
            gemm(geom.out_ch, patch, plane, wd, false, c, false, 1.0, o);
        }
        let t = Tensor::new(
            &[geom.batch, geom.out_ch, geom.out_height(), geom.out_width()],
            out,
        )?;
        Ok(self.push(
            Op::Conv2d(Box::new(ConvRecord {
                x,
                w,
                b,
                geom,
                cols,
            })),
            t,
        ))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = &grads[v.0] {
                    params.push((ParamId(pid), g.clone()));
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let out = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let da = slot(grads, *a, m * k);
                gemm(m, n, k, g, false, self.data(*b), true, 1.0, da);
                let db = slot(grads, *b, k * n);
                gemm(k, m, n, self.data(*a), true, g, false, 1.0, db);
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                let dx = slot(grads, *x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                let db = slot(grads, *b, n);
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let da = slot(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                let db = slot(grads, *b, g.len());
                db.iter_mut().zip(g).for_each(|(d, &v)| *d += sign * v);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                let da = slot(grads, *a, g.len());
                for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                    *d += gv * y;
                }
                let db = slot(grads, *b, g.len());
                for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                    *d += gv * x;
                }
            }
            Op::Scale(a, c) => {
                let da = slot(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &v)| *d += c * v);
            }
            Op::Relu(a) => {
                let av = self.data(*a);
                let da = slot(grads, *a, g.len());
                for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                    if x > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = out.unwrap().data();
                let da = slot(grads, *a, g.len());
                for ((d, &gv), &t) in da.iter_mut().zip(g).zip(y) {
                    *d += gv * (1.0 - t * t);
                }
            }
            Op::Sigmoid(a) => {
                let y = out.unwrap().data();
                let da = slot(grads, *a, g.len());
                for ((d, &gv), &s) in da.iter_mut().zip(g).zip(y) {
                    *d += gv * s * (1.0 - s);
                }
            }
            Op::Exp(a) => {
                let y = out.unwrap().data();
                let da = slot(grads, *a, g.len());
                for ((d, &gv), &e) in da.iter_mut().zip(g).zip(y) {
                    *d += gv * e;
                }
            }
            Op::Square(a) => {
                let av = self.data(*a);
                let da = slot(grads, *a, g.len());
                for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                    *d += 2.0 * gv * x;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let da = slot(grads, *a, n);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Reshape(a) => {
                let da = slot(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
            Op::ConcatCols(parts) => {
                let rows = self.shape(parts[0])[0];
                let total = g.len() / rows.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let dp = slot(grads, p, rows * w);
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        dp[r * w..(r + 1) * w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &v)| *d += v);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let dp = slot(grads, p, n);
                    dp.iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(d, &v)| *d += v);
                    offset += n;
                }
            }
            Op::SliceCols(a, start, end) => {
                let s = self.shape(*a);
                let (rows, cols) = (s[0], s[1]);
                let w = end - start;
                let da = slot(grads, *a, rows * cols);
                for r in 0..rows {
                    da[r * cols + start..r * cols + end]
                        .iter_mut()
                        .zip(&g[r * w..(r + 1) * w])
                        .for_each(|(d, &v)| *d += v);
                }
            }
            Op::GatherRows(a, idx) => {
                let s = self.shape(*a);
                let (rows, cols) = (s[0], s[1]);
                let da = slot(grads, *a, rows * cols);
                for (k, &r) in idx.iter().enumerate() {
                    da[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g[k * cols..(k + 1) * cols])
                        .for_each(|(d, &v)| *d += v);
                }
            }
            Op::PickCols(a, idx) => {
                let n = self.value(*a).len();
                let cols = n / idx.len().max(1);
                let da = slot(grads, *a, n);
                for (r, &c) in idx.iter().enumerate() {
                    da[r * cols + c] += g[r];
                }
            }
            Op::RowNorm(a) => {
                let av = self.data(*a);
                let y = out.unwrap().data();
                let cols = av.len() / y.len().max(1);
                let da = slot(grads, *a, av.len());
                for (r, (&norm, &gv)) in y.iter().zip(g).enumerate() {
                    if norm > 0.0 {
                        for c in r * cols..(r + 1) * cols {
                            da[c] += gv * av[c] / norm;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = out.unwrap().data();
                let (rows, cols) = rows_cols(self.shape(*a));
                let da = slot(grads, *a, rows * cols);
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let dot: f64 = y[span.clone()]
                        .iter()
                        .zip(&g[span.clone()])
                        .map(|(p, v)| p * v)
                        .sum();
                    for c in span {
                        da[c] += y[c] * (g[c] - dot);
                    }
                }
            }
            Op::MaskedLogSoftmax(a, mask) => {
                let y = out.unwrap().data();
                let (rows, cols) = rows_cols(self.shape(*a));
                let da = slot(grads, *a, rows * cols);
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let total: f64 = span.clone().filter(|&c| mask[c]).map(|c| g[c]).sum();
                    for c in span {
                        if mask[c] {
                            da[c] += g[c] - y[c].exp() * total;
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                let n = av.len().max(1) as f64;
                let diff: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(x, y)| 2.0 * g[0] * (x - y) / n)
                    .collect();
                let da = slot(grads, *a, diff.len());
                da.iter_mut().zip(&diff).for_each(|(d, v)| *d += v);
                let db = slot(grads, *b, diff.len());
                db.iter_mut().zip(&diff).for_each(|(d, v)| *d -= v);
            }
            Op::Conv2d(rec) => {
                let geom = rec.geom;
                let (patch, plane) = (geom.patch(), geom.out_plane());
                let in_size = geom.in_ch * geom.height * geom.width;
                let out_size = geom.out_ch * plane;
                let wd = self.data(rec.w);
                let mut dw = vec![0.0; geom.out_ch * patch];
                let mut db = vec![0.0; geom.out_ch];
                let mut dx = vec![0.0; geom.batch * in_size];
                let mut dcols = vec![0.0; patch * plane];
                for n in 0..geom.batch {
                    let gn = &g[n * out_size..(n + 1) * out_size];
                    let cols = &rec.cols[n * patch * plane..(n + 1) * patch * plane];
                    gemm(
                        geom.out_ch,
                        plane,
                        patch,
                        gn,
                        false,
                        cols,
                        true,
                        1.0,
                        &mut dw,
                    );
                    for (ch, row) in gn.chunks(plane).enumerate() {
                        db[ch] += row.iter().sum::<f64>();
                    }
                    gemm(
                        patch,
                        geom.out_ch,
                        plane,
                        wd,
                        true,
                        gn,
                        false,
                        0.0,
                        &mut dcols,
                    );
                    geom.col2im_add(&dcols, &mut dx[n * in_size..(n + 1) * in_size]);
                }
                for (v, d) in [(rec.w, dw), (rec.b, db), (rec.x, dx)] {
                    let s = slot(grads, v, d.len());
                    s.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient with respect to any node (zeros if none flowed).
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(p, g)| (*p, g.as_slice()))
    }

    /// Add these gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        self.accumulate_scaled(store, 1.0);
    }

    pub fn accumulate_scaled(&self, store: &mut ParamStore, scale: f64) {
        for (id, g) in &self.params {
            store
                .grad_mut(*id)
                .iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += scale * b);
        }
    }
}
