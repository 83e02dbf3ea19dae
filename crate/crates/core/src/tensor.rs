//! Dense f64 tensors and a single-use reverse-mode tape.
//!
//! Values live on a [`Tape`] and are addressed through copyable [`Var`]
//! handles. Every operation appends a node; nodes derived only from
//! constants are untracked and skipped during the backward sweep.
//! [`Tape::backward`] consumes the tape, so a tape can be differentiated
//! at most once.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

/// Row-major n-dimensional array of f64. A scalar has an empty shape.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) || numel(&shape) != data.len() {
            return Err(TensorError::InvalidShape {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                lhs: vec![cols],
                rhs: vec![bad.len()],
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row `i` of a tensor viewed as `[rows, last_dim]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = *self.shape.last().unwrap_or(&1);
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let w = *self.shape.last().unwrap_or(&1);
        self.data.chunks(w).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    GatherRows(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    SumLastAxis(Var),
    SelectAxis1(Var, usize),
    MaskedMean(Var, Vec<u8>),
    MaskedMax(Var, Vec<usize>),
    NormalizeRows(Var, Vec<f64>),
    ConcatRows(Var, Var),
    CrossEntropy(Var, Vec<usize>, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_COEFF: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let t = (c * (x + GELU_COEFF * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEFF * x * x)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

// out[k×n] += aᵀ · g where a is [m×k], g is [m×n]
fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

// out[m×k] += g · bᵀ where g is [m×n], b is [k×n]
fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let offset: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

// (outer, axis_len, inner) decomposition around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.push(value, op, tracked)
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `[g, m, k] × [g, k, n] → [g, m, n]`
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; g * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for grp in 0..g {
            matmul_raw(
                &ad[grp * m * k..(grp + 1) * m * k],
                &bd[grp * k * n..(grp + 1) * k * n],
                m,
                k,
                n,
                &mut out[grp * m * n..(grp + 1) * m * n],
            );
        }
        let value = Tensor::new(vec![g, m, n], out)?;
        Ok(self.derived(value, Op::BatchMatMul(a, b), &[a, b]))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `[n]` bias to every row of a `[..., n]` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(b.len())
            .flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        Ok(self.derived(value, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * factor).collect())?;
        Ok(self.derived(value, Op::Scale(x, factor), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.derived(value, Op::Reshape(x), &[x]))
    }

    /// Reorders axes; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::Contract(format!(
                "permutation {perm:?} is invalid for shape {shape:?}"
            )));
        }
        let (data, out_shape) = permute_data(self.value(x).data(), &shape, perm);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.derived(value, Op::Permute(x, perm.to_vec()), &[x]))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(TensorError::Contract(format!(
                "transpose expects 2-D input, got {:?}",
                self.shape(x)
            )));
        }
        self.permute(x, &[1, 0])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::Softmax(x, axis), &[x]))
    }

    /// Normalizes each row of a `[..., h]` tensor to zero mean and unit
    /// variance (biased estimator), then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let h = *sx.last().unwrap_or(&1);
        for p in [gain, bias] {
            if self.shape(p) != [h] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: sx.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if !(eps > 0.0) {
            return Err(TensorError::Contract(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let src = self.value(x).data();
        let rows = src.len() / h;
        let mut normalized = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(h) {
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            inv_std.push(rstd);
            for (j, v) in row.iter().enumerate() {
                let n = (v - mean) * rstd;
                normalized.push(n);
                out.push(n * g[j] + b[j]);
            }
        }
        let value = Tensor::new(sx, out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            inv_std,
        };
        Ok(self.derived(value, op, &[x, gain, bias]))
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| gelu_scalar(v)).collect())?;
        Ok(self.derived(value, Op::Gelu(x), &[x]))
    }

    /// Row lookup: `table[V, h]` indexed by `ids` gives `[ids.len(), h]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(TensorError::Contract(format!("gather_rows expects a 2-D table, got {st:?}")));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= st[0]) {
            return Err(TensorError::Contract(format!(
                "row index {bad} out of range for table with {} rows",
                st[0]
            )));
        }
        let src = self.value(table);
        let data: Vec<f64> = ids.iter().flat_map(|&i| src.row(i).iter().copied()).collect();
        let value = Tensor::new(vec![ids.len(), st[1]], data)?;
        Ok(self.derived(value, Op::GatherRows(table, ids.to_vec()), &[table]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        Ok(self.derived(Tensor::scalar(s), Op::SumAll(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x).data();
        let s = src.iter().sum::<f64>() / src.len() as f64;
        Ok(self.derived(Tensor::scalar(s), Op::MeanAll(x), &[x]))
    }

    /// Sums over the last axis: `[..., n] → [...]`.
    pub fn sum_last_axis(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&n, rest)) = shape.split_last() else {
            return Err(TensorError::Contract("sum_last_axis on a scalar".into()));
        };
        let data = self.value(x).data().chunks(n).map(|r| r.iter().sum()).collect();
        let out_shape = if rest.is_empty() { Vec::new() } else { rest.to_vec() };
        let value = Tensor::new(out_shape, data)?;
        Ok(self.derived(value, Op::SumLastAxis(x), &[x]))
    }

    fn check_btd(&self, op: &str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [b, t, d] => Ok((b, t, d)),
            ref s => Err(TensorError::Contract(format!("{op} expects [B, T, h], got {s:?}"))),
        }
    }

    fn check_mask(&self, op: &str, x: Var, mask: &[u8]) -> Result<(usize, usize, usize)> {
        let (b, t, d) = self.check_btd(op, x)?;
        if mask.len() != b * t {
            return Err(TensorError::ShapeMismatch {
                op: "mask",
                lhs: vec![b, t],
                rhs: vec![mask.len()],
            });
        }
        if let Some(row) = mask.chunks(t).position(|r| r.iter().all(|&m| m == 0)) {
            return Err(TensorError::Contract(format!("{op}: mask row {row} has no active position")));
        }
        Ok((b, t, d))
    }

    /// `[B, T, h] → [B, h]` taking position `index` of every row.
    pub fn select_axis1(&mut self, x: Var, index: usize) -> Result<Var> {
        let (b, t, d) = self.check_btd("select_axis1", x)?;
        if index >= t {
            return Err(TensorError::Contract(format!("position {index} out of range for length {t}")));
        }
        let src = self.value(x).data();
        let data = (0..b)
            .flat_map(|i| src[(i * t + index) * d..(i * t + index + 1) * d].iter().copied())
            .collect();
        let value = Tensor::new(vec![b, d], data)?;
        Ok(self.derived(value, Op::SelectAxis1(x, index), &[x]))
    }

    /// Mask-weighted mean over positions: `[B, T, h] → [B, h]`. `mask` is
    /// row-major `[B, T]` with entries 0 or 1.
    pub fn masked_mean(&mut self, x: Var, mask: &[u8]) -> Result<Var> {
        let (b, t, d) = self.check_mask("masked_mean", x, mask)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let row_mask = &mask[i * t..(i + 1) * t];
            let count = row_mask.iter().filter(|&&m| m != 0).count() as f64;
            let acc = &mut out[i * d..(i + 1) * d];
            for (pos, &m) in row_mask.iter().enumerate() {
                if m != 0 {
                    let h = &src[(i * t + pos) * d..(i * t + pos + 1) * d];
                    acc.iter_mut().zip(h).for_each(|(a, v)| *a += v);
                }
            }
            acc.iter_mut().for_each(|a| *a /= count);
        }
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.derived(value, Op::MaskedMean(x, mask.to_vec()), &[x]))
    }

    /// Elementwise max over active positions: `[B, T, h] → [B, h]`.
    /// Ties resolve to the lowest position.
    pub fn masked_max(&mut self, x: Var, mask: &[u8]) -> Result<Var> {
        let (b, t, d) = self.check_mask("masked_max", x, mask)?;
        let src = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; b * d];
        let mut argmax = vec![0usize; b * d];
        for i in 0..b {
            for pos in (0..t).filter(|&p| mask[i * t + p] != 0) {
                for j in 0..d {
                    let v = src[(i * t + pos) * d + j];
                    if v > out[i * d + j] {
                        out[i * d + j] = v;
                        argmax[i * d + j] = (i * t + pos) * d + j;
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.derived(value, Op::MaskedMax(x, argmax), &[x]))
    }

    /// Scales every row of a `[B, h]` tensor to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Contract(format!("normalize_rows expects 2-D input, got {shape:?}")));
        }
        let mut norms = Vec::with_capacity(shape[0]);
        let mut out = Vec::with_capacity(self.value(x).len());
        for (i, row) in self.value(x).data().chunks(shape[1]).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(TensorError::NumericDomain(format!("row {i} has norm {norm}")));
            }
            norms.push(norm);
            out.extend(row.iter().map(|v| v / norm));
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::NormalizeRows(x, norms), &[x]))
    }

    /// Stacks `[m, h]` on top of `[n, h]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(vec![sa[0] + sb[0], sa[1]], data)?;
        Ok(self.derived(value, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let c = shape[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::Contract(format!("target class {bad} out of range for {c} classes")));
        }
        let mut probs = Vec::with_capacity(shape[0] * c);
        let mut total = 0.0;
        for (row, &target) in self.value(logits).data().chunks(c).zip(targets) {
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            // log Σ exp(v - max) = ln_1p(Σ_{j≠arg} exp(v_j - max))
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, v)| (v - max).exp())
                .sum();
            total += (max - row[target]) + rest.ln_1p();
            let sum = 1.0 + rest;
            probs.extend(row.iter().map(|v| (v - max).exp() / sum));
        }
        let value = Tensor::scalar(total / targets.len() as f64);
        Ok(self.derived(value, Op::CrossEntropy(logits, targets.to_vec(), probs), &[logits]))
    }

    /// Reverse sweep from a one-element `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.tracked {
            return Err(TensorError::Contract("backward on an untracked value".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(i, n)| {
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; n.value.len()]);
                (i, Tensor { shape: n.value.shape.clone(), data })
            })
            .collect();
        Ok(Gradients { leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, delta: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[target.0];
        if !node.tracked {
            return;
        }
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        delta(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k, n) = (shp(*a)[0], shp(*a)[1], shp(*b)[1]);
                self.accumulate(grads, *a, |d| matmul_a_bt(g, val(*b), m, k, n, d));
                self.accumulate(grads, *b, |d| matmul_at_b(val(*a), g, m, k, n, d));
            }
            Op::BatchMatMul(a, b) => {
                let (grp, m, k, n) = (shp(*a)[0], shp(*a)[1], shp(*a)[2], shp(*b)[2]);
                self.accumulate(grads, *a, |d| {
                    for i in 0..grp {
                        matmul_a_bt(
                            &g[i * m * n..(i + 1) * m * n],
                            &val(*b)[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                            &mut d[i * m * k..(i + 1) * m * k],
                        );
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..grp {
                        matmul_at_b(
                            &val(*a)[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut d[i * k * n..(i + 1) * k * n],
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                self.accumulate(grads, *bias, |d| {
                    for row in g.chunks(d.len()) {
                        d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += factor * b));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
            }
            Op::Permute(x, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inverse);
                self.accumulate(grads, *x, |d| d.iter_mut().zip(&back).for_each(|(a, b)| *a += b));
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                d[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = val(*gain);
                let h = gv.len();
                self.accumulate(grads, *gain, |d| {
                    for (grow, nrow) in g.chunks(h).zip(normalized.chunks(h)) {
                        for j in 0..h {
                            d[j] += grow[j] * nrow[j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |d| {
                    for grow in g.chunks(h) {
                        d.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                });
                self.accumulate(grads, *x, |d| {
                    for (r, (grow, nrow)) in g.chunks(h).zip(normalized.chunks(h)).enumerate() {
                        let dn: Vec<f64> = grow.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dn = dn.iter().sum::<f64>() / h as f64;
                        let mean_dn_n = dn.iter().zip(nrow).map(|(a, b)| a * b).sum::<f64>() / h as f64;
                        for j in 0..h {
                            d[r * h + j] += inv_std[r] * (dn[j] - mean_dn - nrow[j] * mean_dn_n);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * gelu_derivative(xv[i]);
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                let h = shp(*table)[1];
                self.accumulate(grads, *table, |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..h {
                            d[id * h + j] += g[r * h + j];
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::MeanAll(x) => {
                self.accumulate(grads, *x, |d| {
                    let share = g[0] / d.len() as f64;
                    d.iter_mut().for_each(|a| *a += share);
                });
            }
            Op::SumLastAxis(x) => {
                let n = *shp(*x).last().unwrap_or(&1);
                self.accumulate(grads, *x, |d| {
                    for (row, gv) in d.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|a| *a += gv);
                    }
                });
            }
            Op::SelectAxis1(x, index) => {
                let (t, h) = (shp(*x)[1], shp(*x)[2]);
                self.accumulate(grads, *x, |d| {
                    for (i, grow) in g.chunks(h).enumerate() {
                        let base = (i * t + index) * h;
                        d[base..base + h].iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::MaskedMean(x, mask) => {
                let (t, h) = (shp(*x)[1], shp(*x)[2]);
                self.accumulate(grads, *x, |d| {
                    for (i, grow) in g.chunks(h).enumerate() {
                        let row_mask = &mask[i * t..(i + 1) * t];
                        let count = row_mask.iter().filter(|&&m| m != 0).count() as f64;
                        for (pos, &m) in row_mask.iter().enumerate() {
                            if m != 0 {
                                let base = (i * t + pos) * h;
                                for j in 0..h {
                                    d[base + j] += grow[j] / count;
                                }
                            }
                        }
                    }
                });
            }
            Op::MaskedMax(x, argmax) => {
                self.accumulate(grads, *x, |d| {
                    for (gv, &src) in g.iter().zip(argmax) {
                        d[src] += gv;
                    }
                });
            }
            Op::NormalizeRows(x, norms) => {
                let y = node.value.data();
                let h = node.value.shape()[1];
                self.accumulate(grads, *x, |d| {
                    for (r, norm) in norms.iter().enumerate() {
                        let (yr, gr) = (&y[r * h..(r + 1) * h], &g[r * h..(r + 1) * h]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..h {
                            d[r * h + j] += (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let split = self.nodes[a.0].value.len();
                self.accumulate(grads, *a, |d| d.iter_mut().zip(&g[..split]).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(&g[split..]).for_each(|(x, y)| *x += y));
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let c = shp(*logits)[1];
                let scale = g[0] / targets.len() as f64;
                self.accumulate(grads, *logits, |d| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            d[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

/// Gradients of every leaf of a consumed tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: std::collections::BTreeMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient for a leaf; `None` if `v` was not registered with
    /// [`Tape::leaf`]. Leaves the loss does not depend on get zeros.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.leaves.remove(&v.0)
    }
}
