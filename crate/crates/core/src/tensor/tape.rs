//! Operation tape for reverse-mode differentiation.
//!
//! Every value on the tape is a matrix. Nodes are appended in evaluation
//! order, so walking the node list backwards is a valid reverse topological
//! order and each input's gradient is complete before it is visited.

use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        param: ParamId,
        rows: Vec<usize>,
    },
    IndexRows {
        src: Var,
        rows: Vec<usize>,
    },
    ScatterRows {
        src: Var,
        rows: Vec<usize>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    RowSum(Var),
    Sum(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Softmax {
        src: Var,
        axis: usize,
    },
    LogSoftmax {
        src: Var,
        axis: usize,
    },
    SegmentSoftmax {
        src: Var,
        segments: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    MaskFill {
        src: Var,
        mask: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation; one tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Surrogate for negative infinity used by [`Tape::mask_fill`].
pub const MASKED: f64 = f64::MIN;

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
    }
}

// c[m×n] += a[m×k] · b[k×n]
fn mm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// c[m×k] += g[m×n] · b[k×n]ᵀ
fn mm_nt_acc(c: &mut [f64], g: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

// c[k×n] += a[m×k]ᵀ · g[m×n]
fn mm_tn_acc(c: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Visits every slice along `axis` as a list of flat indices.
fn for_each_slice(rows: usize, cols: usize, axis: usize, mut f: impl FnMut(usize, &[usize])) {
    let mut idx = Vec::new();
    if axis == 1 {
        for r in 0..rows {
            idx.clear();
            idx.extend((0..cols).map(|c| r * cols + c));
            f(r, &idx);
        }
    } else {
        for c in 0..cols {
            idx.clear();
            idx.extend((0..rows).map(|r| r * cols + c));
            f(c, &idx);
        }
    }
}

fn softmax_slice(x: &[f64], idx: &[usize], out: &mut [f64]) {
    let max = idx.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in idx {
        let e = (x[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in idx {
        out[i] /= total;
    }
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("tape nodes are never empty")
    }

    /// Records a tensor as a leaf; gradients are kept when the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.values().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if rows == 0 || cols == 0 || rows * cols != values.len() {
            return Err(TensorError::BadLength {
                shape: vec![rows, cols],
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Ok(self.push(rows, cols, values, Op::Leaf, false))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (r, c, val) = (n.rows, n.cols, n.value.clone());
        self.push(r, c, val, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let (r, c) = t.dims2();
        self.push(r, c, t.values().to_vec(), Op::Param(id), true)
    }

    /// Row lookup into a parameter table without copying the whole table.
    pub fn gather(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var> {
        let t = store.get(id);
        let (n, cols) = t.dims2();
        let mut value = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(TensorError::OutOfRange {
                    what: "parameter rows",
                    index: r,
                    size: n,
                });
            }
            value.extend_from_slice(t.row(r));
        }
        if rows.is_empty() {
            return Err(TensorError::BadLength {
                shape: vec![0, cols],
                expected: 0,
                actual: 0,
            });
        }
        Ok(self.push(
            rows.len(),
            cols,
            value,
            Op::Gather {
                param: id,
                rows: rows.to_vec(),
            },
            true,
        ))
    }

    /// `out[r] = src[rows[r]]`.
    pub fn index_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.dims(src);
        if rows.is_empty() {
            return Err(TensorError::BadLength {
                shape: vec![0, cols],
                expected: 0,
                actual: 0,
            });
        }
        let s = self.value(src);
        let mut value = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(TensorError::OutOfRange {
                    what: "rows",
                    index: r,
                    size: n,
                });
            }
            value.extend_from_slice(&s[r * cols..(r + 1) * cols]);
        }
        let ng = self.ng(src);
        Ok(self.push(
            rows.len(),
            cols,
            value,
            Op::IndexRows {
                src,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// `out[rows[r]] += src[r]`, producing `out_rows` rows.
    pub fn scatter_add_rows(&mut self, src: Var, rows: &[usize], out_rows: usize) -> Result<Var> {
        let (n, cols) = self.dims(src);
        if rows.len() != n {
            return Err(shape_err("scatter_add_rows", (n, cols), (rows.len(), 1)));
        }
        let s = self.value(src);
        let mut value = vec![0.0; out_rows * cols];
        for (i, &r) in rows.iter().enumerate() {
            if r >= out_rows {
                return Err(TensorError::OutOfRange {
                    what: "scatter target rows",
                    index: r,
                    size: out_rows,
                });
            }
            for c in 0..cols {
                value[r * cols + c] += s[i * cols + c];
            }
        }
        let ng = self.ng(src);
        Ok(self.push(
            out_rows,
            cols,
            value,
            Op::ScatterRows {
                src,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let mut value = vec![0.0; m * n];
        mm_acc(&mut value, self.value(a), self.value(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let s = self.value(a);
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = s[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(c, r, value, Op::Transpose(a), ng)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(shape_err(name, da, db));
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(da.0, da.1, value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, cols) = self.dims(a);
        let value = self.value(a).iter().map(|x| x * c).collect();
        let ng = self.ng(a);
        self.push(r, cols, value, Op::Scale(a, c), ng)
    }

    /// Adds a `1×d` row to every row of an `n×d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        let db = self.dims(row);
        if db != (1, d) {
            return Err(shape_err("add_row", (n, d), db));
        }
        let b = self.value(row);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % d])
            .collect();
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(n, d, value, Op::AddRow(x, row), ng))
    }

    /// Multiplies row `r` of an `n×d` matrix by entry `r` of an `n×1` column.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        let ds = self.dims(s);
        if ds != (n, 1) {
            return Err(shape_err("scale_rows", (n, d), ds));
        }
        let sv = self.value(s);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * sv[i / d])
            .collect();
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(n, d, value, Op::ScaleRows(x, s), ng))
    }

    /// Multiplies column `c` of an `n×d` matrix by entry `c` of a `1×d` row.
    pub fn scale_cols(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        let ds = self.dims(s);
        if ds != (1, d) {
            return Err(shape_err("scale_cols", (n, d), ds));
        }
        let sv = self.value(s);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * sv[i % d])
            .collect();
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(n, d, value, Op::ScaleCols(x, s), ng))
    }

    /// Sums each row into an `n×1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let (n, d) = self.dims(x);
        let v = self.value(x);
        let value = (0..n).map(|r| v[r * d..(r + 1) * d].iter().sum()).collect();
        let ng = self.ng(x);
        self.push(n, 1, value, Op::RowSum(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(1, 1, vec![total], Op::Sum(x), ng)
    }

    /// Joins matrices along `axis` (0 stacks rows, 1 places side by side).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::BadLength {
            shape: vec![0],
            expected: 1,
            actual: 0,
        })?;
        let (r0, c0) = self.dims(first);
        match axis {
            0 => {
                let mut rows = 0;
                let mut value = Vec::new();
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if c != c0 {
                        return Err(shape_err("concat", (r0, c0), (r, c)));
                    }
                    rows += r;
                    value.extend_from_slice(self.value(p));
                }
                let ng = parts.iter().any(|&p| self.ng(p));
                Ok(self.push(
                    rows,
                    c0,
                    value,
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis,
                    },
                    ng,
                ))
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if r != r0 {
                        return Err(shape_err("concat", (r0, c0), (r, c)));
                    }
                    cols += c;
                }
                let mut value = Vec::with_capacity(r0 * cols);
                for row in 0..r0 {
                    for &p in parts {
                        let c = self.dims(p).1;
                        value.extend_from_slice(&self.value(p)[row * c..(row + 1) * c]);
                    }
                }
                let ng = parts.iter().any(|&p| self.ng(p));
                Ok(self.push(
                    r0,
                    cols,
                    value,
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis,
                    },
                    ng,
                ))
            }
            _ => Err(TensorError::BadAxis {
                axis,
                shape: vec![r0, c0],
            }),
        }
    }

    /// Contiguous block `start..start+len` along `axis`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(src);
        let extent = match axis {
            0 => r,
            1 => c,
            _ => {
                return Err(TensorError::BadAxis {
                    axis,
                    shape: vec![r, c],
                })
            }
        };
        if len == 0 || start + len > extent {
            return Err(TensorError::OutOfRange {
                what: "slice end",
                index: start + len,
                size: extent,
            });
        }
        let s = self.value(src);
        let (rows, cols, value) = if axis == 0 {
            (len, c, s[start * c..(start + len) * c].to_vec())
        } else {
            let mut v = Vec::with_capacity(r * len);
            for row in 0..r {
                v.extend_from_slice(&s[row * c + start..row * c + start + len]);
            }
            (r, len, v)
        };
        let ng = self.ng(src);
        Ok(self.push(rows, cols, value, Op::Slice { src, axis, start }, ng))
    }

    fn check_axis(&self, v: Var, axis: usize) -> Result<()> {
        if axis > 1 {
            let (r, c) = self.dims(v);
            return Err(TensorError::BadAxis {
                axis,
                shape: vec![r, c],
            });
        }
        Ok(())
    }

    /// Softmax of every slice along `axis`: axis 1 normalizes each row,
    /// axis 0 each column. Uses max-subtraction.
    pub fn softmax(&mut self, src: Var, axis: usize) -> Result<Var> {
        self.check_axis(src, axis)?;
        let (r, c) = self.dims(src);
        let x = self.value(src);
        let mut out = vec![0.0; r * c];
        for_each_slice(r, c, axis, |_, idx| softmax_slice(x, idx, &mut out));
        let ng = self.ng(src);
        Ok(self.push(r, c, out, Op::Softmax { src, axis }, ng))
    }

    pub fn log_softmax(&mut self, src: Var, axis: usize) -> Result<Var> {
        self.check_axis(src, axis)?;
        let (r, c) = self.dims(src);
        let x = self.value(src);
        let mut out = vec![0.0; r * c];
        for_each_slice(r, c, axis, |_, idx| {
            let max = idx.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + idx.iter().map(|&i| (x[i] - max).exp()).sum::<f64>().ln();
            for &i in idx {
                out[i] = x[i] - lse;
            }
        });
        let ng = self.ng(src);
        Ok(self.push(r, c, out, Op::LogSoftmax { src, axis }, ng))
    }

    /// Softmax over groups of entries: entry `i` of the flattened input is
    /// normalized together with every other entry sharing `segments[i]`.
    pub fn segment_softmax(&mut self, src: Var, segments: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(src);
        if segments.len() != r * c {
            return Err(shape_err("segment_softmax", (r, c), (segments.len(), 1)));
        }
        let x = self.value(src);
        let groups = segments.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; groups];
        for (i, &s) in segments.iter().enumerate() {
            max[s] = max[s].max(x[i]);
        }
        let mut total = vec![0.0; groups];
        let mut out: Vec<f64> = segments
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let e = (x[i] - max[s]).exp();
                total[s] += e;
                e
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(segments) {
            *o /= total[s];
        }
        let ng = self.ng(src);
        Ok(self.push(
            r,
            c,
            out,
            Op::SegmentSoftmax {
                src,
                segments: segments.to_vec(),
            },
            ng,
        ))
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `1×d` affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims(x);
        for p in [gamma, beta] {
            let dp = self.dims(p);
            if dp != (1, d) {
                return Err(shape_err("layer_norm", (n, d), dp));
            }
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut normed = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                normed[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            n,
            d,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            ng,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let value = self.value(x).iter().map(|&v| gelu(v)).collect();
        let ng = self.ng(x);
        self.push(r, c, value, Op::Gelu(x), ng)
    }

    /// Replaces masked entries (`mask[i] == true`) with [`MASKED`]; they
    /// receive no gradient.
    pub fn mask_fill(&mut self, src: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(src);
        if mask.len() != r * c {
            return Err(shape_err("mask_fill", (r, c), (mask.len(), 1)));
        }
        let value = self
            .value(src)
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { MASKED } else { v })
            .collect();
        let ng = self.ng(src);
        Ok(self.push(
            r,
            c,
            value,
            Op::MaskFill {
                src,
                mask: mask.to_vec(),
            },
            ng,
        ))
    }

    /// Back-propagates from a `1×1` loss. A tape supports one backward pass;
    /// a second call is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        let (r, c) = self.dims(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss(vec![r, c]));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads, &mut params);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut Vec<ParamGrad>,
    ) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => params.push(ParamGrad {
                id: *id,
                rows: None,
                values: g.to_vec(),
            }),
            Op::Gather { param, rows } => params.push(ParamGrad {
                id: *param,
                rows: Some(rows.clone()),
                values: g.to_vec(),
            }),
            Op::IndexRows { src, rows: idx } => {
                if let Some(gs) = self.acc(grads, *src) {
                    for (i, &r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gs[r * cols + c] += g[i * cols + c];
                        }
                    }
                }
            }
            Op::ScatterRows { src, rows: idx } => {
                if let Some(gs) = self.acc(grads, *src) {
                    for (i, &r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gs[i * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.ng(*a) {
                    let bv = &self.nodes[b.0].value;
                    let ga = self.acc(grads, *a).unwrap();
                    mm_nt_acc(ga, g, bv, m, n, k);
                }
                if self.ng(*b) {
                    let av = &self.nodes[a.0].value;
                    let gb = self.acc(grads, *b).unwrap();
                    mm_tn_acc(gb, av, g, m, k, n);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    // node is cols×rows of the source
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = &self.nodes[b.0].value;
                    let ga = self.acc(grads, *a).unwrap();
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.ng(*b) {
                    let av = &self.nodes[a.0].value;
                    let gb = self.acc(grads, *b).unwrap();
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::AddRow(x, b) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % cols] += v;
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                if self.ng(*x) {
                    let sv = &self.nodes[s.0].value;
                    let gx = self.acc(grads, *x).unwrap();
                    for (i, v) in g.iter().enumerate() {
                        gx[i] += v * sv[i / cols];
                    }
                }
                if self.ng(*s) {
                    let xv = &self.nodes[x.0].value;
                    let gs = self.acc(grads, *s).unwrap();
                    for (i, v) in g.iter().enumerate() {
                        gs[i / cols] += v * xv[i];
                    }
                }
            }
            Op::ScaleCols(x, s) => {
                if self.ng(*x) {
                    let sv = &self.nodes[s.0].value;
                    let gx = self.acc(grads, *x).unwrap();
                    for (i, v) in g.iter().enumerate() {
                        gx[i] += v * sv[i % cols];
                    }
                }
                if self.ng(*s) {
                    let xv = &self.nodes[x.0].value;
                    let gs = self.acc(grads, *s).unwrap();
                    for (i, v) in g.iter().enumerate() {
                        gs[i % cols] += v * xv[i];
                    }
                }
            }
            Op::RowSum(x) => {
                let d = self.dims(*x).1;
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, v) in gx.iter_mut().enumerate() {
                        *v += g[i / d];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        if let Some(gp) = self.acc(grads, p) {
                            gp.iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(x, y)| *x += y);
                        }
                        offset += len;
                    }
                } else {
                    let mut col_off = 0;
                    for &p in parts {
                        let pc = self.dims(p).1;
                        if let Some(gp) = self.acc(grads, p) {
                            for r in 0..rows {
                                for c in 0..pc {
                                    gp[r * pc + c] += g[r * cols + col_off + c];
                                }
                            }
                        }
                        col_off += pc;
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let (_, sc) = self.dims(*src);
                if let Some(gs) = self.acc(grads, *src) {
                    if *axis == 0 {
                        let off = start * sc;
                        gs[off..off + g.len()]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(x, y)| *x += y);
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                gs[r * sc + start + c] += g[r * cols + c];
                            }
                        }
                    }
                }
            }
            Op::Softmax { src, axis } => {
                let y = &node.value;
                if let Some(gs) = self.acc(grads, *src) {
                    for_each_slice(rows, cols, *axis, |_, idx| {
                        let dot: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in idx {
                            gs[i] += y[i] * (g[i] - dot);
                        }
                    });
                }
            }
            Op::LogSoftmax { src, axis } => {
                let y = &node.value;
                if let Some(gs) = self.acc(grads, *src) {
                    for_each_slice(rows, cols, *axis, |_, idx| {
                        let total: f64 = idx.iter().map(|&i| g[i]).sum();
                        for &i in idx {
                            gs[i] += g[i] - y[i].exp() * total;
                        }
                    });
                }
            }
            Op::SegmentSoftmax { src, segments } => {
                let y = &node.value;
                if let Some(gs) = self.acc(grads, *src) {
                    let groups = segments.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; groups];
                    for (i, &s) in segments.iter().enumerate() {
                        dot[s] += g[i] * y[i];
                    }
                    for (i, &s) in segments.iter().enumerate() {
                        gs[i] += y[i] * (g[i] - dot[s]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let d = cols;
                let gv = &self.nodes[gamma.0].value;
                if self.ng(*x) {
                    let gx = self.acc(grads, *x).unwrap();
                    for r in 0..rows {
                        let off = r * d;
                        let mut mean_gh = 0.0;
                        let mut mean_ghh = 0.0;
                        for c in 0..d {
                            let gh = g[off + c] * gv[c];
                            mean_gh += gh;
                            mean_ghh += gh * normed[off + c];
                        }
                        mean_gh /= d as f64;
                        mean_ghh /= d as f64;
                        for c in 0..d {
                            let gh = g[off + c] * gv[c];
                            gx[off + c] += inv_std[r] * (gh - mean_gh - normed[off + c] * mean_ghh);
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    for (i, v) in g.iter().enumerate() {
                        gg[i % d] += v * normed[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % d] += v;
                    }
                }
            }
            Op::Gelu(x) => {
                if self.ng(*x) {
                    let xv = &self.nodes[x.0].value;
                    let gx = self.acc(grads, *x).unwrap();
                    for i in 0..g.len() {
                        gx[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
            }
            Op::MaskFill { src, mask } => {
                if let Some(gs) = self.acc(grads, *src) {
                    for i in 0..g.len() {
                        if !mask[i] {
                            gs[i] += g[i];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct ParamGrad {
    id: ParamId,
    rows: Option<Vec<usize>>,
    values: Vec<f64>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<ParamGrad>,
}

impl Gradients {
    /// d(loss)/d(v); `None` when `v` does not influence the loss or is a
    /// constant.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's gradient slots, creating
    /// zeroed slots where missing. Each recorded use contributes once.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for pg in &self.params {
            let t = store.get_mut(pg.id);
            let cols = t.dims2().1;
            let n = t.len();
            let slot = t.grad.get_or_insert_with(|| vec![0.0; n]);
            match &pg.rows {
                None => slot.iter_mut().zip(&pg.values).for_each(|(s, v)| *s += v),
                Some(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            slot[r * cols + c] += pg.values[i * cols + c];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::new();
        let i2 = t.constant(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let m = t.constant(2, 2, vec![5., 6., 7., 8.]).unwrap();
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p), &[5., 6., 7., 8.]);

        let a = t.constant(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let ones = t.constant(2, 1, vec![1., 1.]).unwrap();
        let q = t.matmul(a, ones).unwrap();
        assert_eq!(t.dims(q), (2, 1));
        assert_eq!(t.value(q), &[3., 7.]);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(2, 3, vec![0.; 6]).unwrap();
        let b = t.constant(2, 3, vec![0.; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { op: "matmul", .. }));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let z = t.constant(1, 3, vec![0., 0., 0.]).unwrap();
        let s = t.softmax(z, 1).unwrap();
        assert!(close(t.value(s), &[1. / 3.; 3], 1e-15));

        let big = t.constant(1, 2, vec![1000., 1000.]).unwrap();
        let s = t.softmax(big, 1).unwrap();
        assert_eq!(t.value(s), &[0.5, 0.5]);

        let logs = t
            .constant(1, 3, vec![1f64.ln(), 2f64.ln(), 3f64.ln()])
            .unwrap();
        let s = t.softmax(logs, 1).unwrap();
        assert!(close(t.value(s), &[1. / 6., 2. / 6., 3. / 6.], 1e-15));
    }

    #[test]
    fn softmax_column_axis() {
        let mut t = Tape::new();
        let x = t.constant(2, 2, vec![0., 1., 0., 1.]).unwrap();
        let s = t.softmax(x, 0).unwrap();
        assert!(close(t.value(s), &[0.5; 4], 1e-15));
        assert!(t.softmax(x, 2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let mut t = Tape::new();
        let g = t.constant(1, 3, vec![1.; 3]).unwrap();
        let b = t.constant(1, 3, vec![0.; 3]).unwrap();
        let x = t.constant(1, 3, vec![4.; 3]).unwrap();
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(t.value(y), &[0.; 3]);

        let g = t.constant(1, 2, vec![1.; 2]).unwrap();
        let b = t.constant(1, 2, vec![0.; 2]).unwrap();
        let x = t.constant(1, 2, vec![1., 3.]).unwrap();
        let y = t.layer_norm(x, g, b, 1e-300).unwrap();
        assert!(close(t.value(y), &[-1., 1.], 1e-12));
    }

    #[test]
    fn elementwise_and_concat() {
        let mut t = Tape::new();
        let a = t.constant(1, 2, vec![1., 2.]).unwrap();
        let b = t.constant(1, 2, vec![3., 4.]).unwrap();
        let p = t.mul(a, b).unwrap();
        assert_eq!(t.value(p), &[3., 8.]);

        let c = t.constant(1, 1, vec![3.]).unwrap();
        let j = t.concat(&[a, c], 1).unwrap();
        assert_eq!(t.value(j), &[1., 2., 3.]);

        let bad = t.constant(2, 1, vec![0., 0.]).unwrap();
        assert!(t.add(a, bad).is_err());
        assert!(t.concat(&[a, bad], 1).is_err());
    }

    #[test]
    fn backward_simple_losses() {
        let mut t = Tape::new();
        let w = t.leaf(&Tensor::new(vec![2, 2], vec![0.3, -1., 2., 7.]).unwrap().with_grad());
        let loss = t.sum(w);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[1.; 4]);

        let mut t = Tape::new();
        let w = t.leaf(&Tensor::new(vec![3], vec![1., 2., 3.]).unwrap().with_grad());
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[2., 4., 6.]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_second_call() {
        let mut t = Tape::new();
        let w = t.leaf(&Tensor::new(vec![2], vec![1., 2.]).unwrap().with_grad());
        assert!(matches!(t.backward(w), Err(TensorError::NonScalarLoss(_))));
        let loss = t.sum(w);
        t.backward(loss).unwrap();
        assert!(matches!(t.backward(loss), Err(TensorError::BackwardTwice)));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(1, 2, vec![1., 2.]).unwrap();
        let w = t.leaf(&Tensor::new(vec![2], vec![3., 4.]).unwrap().with_grad());
        let p = t.mul(c, w).unwrap();
        let loss = t.sum(p);
        let g = t.backward(loss).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(w).unwrap(), &[1., 2.]);
    }

    #[test]
    fn masked_entries_get_zero_probability() {
        let mut t = Tape::new();
        let x = t.constant(1, 3, vec![1., 2., 3.]).unwrap();
        let m = t.mask_fill(x, &[false, true, false]).unwrap();
        let s = t.softmax(m, 1).unwrap();
        let v = t.value(s);
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn segment_softmax_normalizes_per_group() {
        let mut t = Tape::new();
        let x = t.constant(4, 1, vec![0., 1., 5., 5.]).unwrap();
        let s = t.segment_softmax(x, &[0, 1, 1, 0]).unwrap();
        let v = t.value(s);
        assert!((v[0] + v[3] - 1.0).abs() < 1e-15);
        assert!((v[1] + v[2] - 1.0).abs() < 1e-15);
    }
}
