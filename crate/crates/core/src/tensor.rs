//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! Only the operations the classifier needs are provided. A [`Tape`] records
//! every operation in execution order; [`Tape::backward`] walks the record in
//! exact reverse and returns a [`Gradients`] table keyed by [`Var`].
//!
//! Broadcasting is limited to two cases: a length-1 operand (scalar) and a
//! vector of length `d` applied to every row of an `n x d` matrix.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("max pooling with every row masked")]
    AllMasked,
    #[error("convolution window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("convolution padding must be {expected} for window {window}, got {padding}")]
    Padding {
        window: usize,
        padding: usize,
        expected: usize,
    },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("index {index} out of range for axis of length {len}")]
    Index { index: usize, len: usize },
    #[error("{0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Shape-carrying real array. A shape of `[]` denotes a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
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

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
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

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    Full,
    Scalar,
    Row(usize),
}

impl Bcast {
    #[inline]
    fn at(self, i: usize) -> usize {
        match self {
            Bcast::Full => i,
            Bcast::Scalar => 0,
            Bcast::Row(d) => i % d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        ba: Bcast,
        bb: Bcast,
    },
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        p: usize,
        q: usize,
        r: usize,
    },
    Transpose(Var),
    Conv1d {
        x: Var,
        filters: Var,
        padding: usize,
    },
    MaxPoolRows {
        x: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
        width: usize,
    },
    Stack(Vec<Var>),
    ConcatCols(Var, Var),
    Reshape(Var),
    Sum(Var),
    Bce {
        probs: Var,
        label: u8,
        clamped: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Probability clamp used by [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-12;

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast, Bcast)> {
    let la: usize = a.iter().product();
    let lb: usize = b.iter().product();
    let err = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a == b {
        return Ok((a.to_vec(), Bcast::Full, Bcast::Full));
    }
    // The larger operand fixes the output shape.
    let (out, other, other_len, a_is_out) = if la >= lb {
        (a, b, lb, true)
    } else {
        (b, a, la, false)
    };
    let kind = if other_len == 1 {
        Bcast::Scalar
    } else if other.len() == 1 && out.len() == 2 && out[1] == other[0] {
        Bcast::Row(other[0])
    } else {
        return Err(err());
    };
    if a_is_out {
        Ok((out.to_vec(), Bcast::Full, kind))
    } else {
        Ok((out.to_vec(), kind, Bcast::Full))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (shape, ba, bb) = broadcast(name, self.shape(a), self.shape(b))?;
        let n: usize = shape.iter().product();
        let (x, y) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let data = (0..n)
            .map(|i| {
                let (u, v) = (x[ba.at(i)], y[bb.at(i)]);
                match kind {
                    Binary::Add => u + v,
                    Binary::Sub => u - v,
                    Binary::Mul => u * v,
                }
            })
            .collect();
        Ok(self.push(
            Tensor { shape, data },
            Op::Binary { kind, a, b, ba, bb },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = &self.nodes[x.0].value;
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| v * c).collect(),
        };
        self.push(out, Op::Scale(x, c))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(out, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    /// `x` for `x > 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    /// Matrix product. Rank-1 operands act as a row vector on the left or a
    /// column vector on the right; the result drops that axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (p, q, r, shape) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (sa[0], sa[1], sb[1], vec![sa[0], sb[1]]),
            (2, 1) if sa[1] == sb[0] => (sa[0], sa[1], 1, vec![sa[0]]),
            (1, 2) if sa[0] == sb[0] => (1, sa[0], sb[1], vec![sb[1]]),
            (1, 1) if sa[0] == sb[0] => (1, sa[0], 1, Vec::new()),
            _ => return Err(err()),
        };
        let (x, y) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let mut data = vec![0.0; p * r];
        for i in 0..p {
            let xi = &x[i * q..(i + 1) * q];
            let out = &mut data[i * r..(i + 1) * r];
            for (k, &xik) in xi.iter().enumerate() {
                if xik == 0.0 {
                    continue;
                }
                let yk = &y[k * r..(k + 1) * r];
                for (o, &ykj) in out.iter_mut().zip(yk) {
                    *o += xik * ykj;
                }
            }
        }
        Ok(self.push(Tensor { shape, data }, Op::MatMul { a, b, p, q, r }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 {
            return Err(TensorError::Rank {
                op: "transpose",
                expected: 2,
                shape: t.shape.clone(),
            });
        }
        let (n, m) = (t.shape[0], t.shape[1]);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = t.data[i * m + j];
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::Transpose(x),
        ))
    }

    /// Length-preserving 1-D convolution over the rows of `x` (`n x m`) with
    /// `filters` shaped `f x k x m`; rows outside the input are zero.
    pub fn conv1d_seq(&mut self, x: Var, filters: Var, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(filters).to_vec());
        if sx.len() != 2 {
            return Err(TensorError::Rank {
                op: "conv1d_seq",
                expected: 2,
                shape: sx,
            });
        }
        if sw.len() != 3 {
            return Err(TensorError::Rank {
                op: "conv1d_seq",
                expected: 3,
                shape: sw,
            });
        }
        let (n, m) = (sx[0], sx[1]);
        let (f, k, fm) = (sw[0], sw[1], sw[2]);
        if k % 2 == 0 {
            return Err(TensorError::EvenWindow(k));
        }
        if padding != (k - 1) / 2 {
            return Err(TensorError::Padding {
                window: k,
                padding,
                expected: (k - 1) / 2,
            });
        }
        if fm != m {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_seq",
                lhs: sx,
                rhs: sw,
            });
        }
        let (xd, wd) = (&self.nodes[x.0].value.data, &self.nodes[filters.0].value.data);
        let mut data = vec![0.0; n * f];
        for t in 0..n {
            for j in 0..k {
                let src = t as isize + j as isize - padding as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let row = &xd[src as usize * m..(src as usize + 1) * m];
                for o in 0..f {
                    let w = &wd[(o * k + j) * m..(o * k + j + 1) * m];
                    data[t * f + o] += w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![n, f],
                data,
            },
            Op::Conv1d {
                x,
                filters,
                padding,
            },
        ))
    }

    /// Column-wise maximum over the unmasked rows of a matrix. `mask[i] ==
    /// true` keeps row `i`. Ties resolve to the lowest row index.
    pub fn max_pool_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 {
            return Err(TensorError::Rank {
                op: "max_pool_rows",
                expected: 2,
                shape: t.shape.clone(),
            });
        }
        let (n, d) = (t.shape[0], t.shape[1]);
        if let Some(m) = mask {
            if m.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "max_pool_rows",
                    lhs: t.shape.clone(),
                    rhs: vec![m.len()],
                });
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let first = (0..n).find(|&i| keep(i)).ok_or(TensorError::AllMasked)?;
        let mut argmax = vec![first; d];
        let mut data = t.row(first).to_vec();
        for i in (first + 1)..n {
            if !keep(i) {
                continue;
            }
            for (j, &v) in t.row(i).iter().enumerate() {
                if v > data[j] {
                    data[j] = v;
                    argmax[j] = i;
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![d],
                data,
            },
            Op::MaxPoolRows { x, argmax },
        ))
    }

    pub fn softmax(&mut self, s: Var) -> Result<Var> {
        let t = &self.nodes[s.0].value;
        if t.rank() != 1 || t.is_empty() {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: 1,
                shape: t.shape.clone(),
            });
        }
        let data = softmax_slice(&t.data);
        Ok(self.push(
            Tensor {
                shape: t.shape.clone(),
                data,
            },
            Op::Softmax(s),
        ))
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::DropoutRate(p));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let t = &self.nodes[x.0].value;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Selects entries along the first axis. A rank-1 input yields a vector,
    /// a rank-2 input yields a matrix of the selected rows.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.rank() == 0 {
            return Err(TensorError::Rank {
                op: "gather",
                expected: 1,
                shape: t.shape.clone(),
            });
        }
        let len = t.shape[0];
        let width: usize = t.shape[1..].iter().product();
        let mut data = Vec::with_capacity(index.len() * width);
        for &i in index {
            if i >= len {
                return Err(TensorError::Index { index: i, len });
            }
            data.extend_from_slice(&t.data[i * width..(i + 1) * width]);
        }
        let mut shape = t.shape.clone();
        shape[0] = index.len();
        Ok(self.push(
            Tensor { shape, data },
            Op::Gather {
                x,
                index: index.to_vec(),
                width,
            },
        ))
    }

    /// Stacks equally shaped vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(TensorError::Empty("stack of zero rows"))?;
        let shape = self.shape(first).to_vec();
        let d: usize = shape.iter().product();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if self.shape(r) != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: shape,
                    rhs: self.shape(r).to_vec(),
                });
            }
            data.extend_from_slice(&self.nodes[r.0].value.data);
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows.len(), d],
                data,
            },
            Op::Stack(rows.to_vec()),
        ))
    }

    /// `[a | b]` for two matrices with equal row count, or two vectors.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = match (sa.len(), sb.len()) {
            (1, 1) => {
                let mut data = ta.data.clone();
                data.extend_from_slice(&tb.data);
                Tensor::vector(data)
            }
            (2, 2) if sa[0] == sb[0] => {
                let mut data = Vec::with_capacity(ta.len() + tb.len());
                for i in 0..sa[0] {
                    data.extend_from_slice(ta.row(i));
                    data.extend_from_slice(tb.row(i));
                }
                Tensor {
                    shape: vec![sa[0], sa[1] + sb[1]],
                    data,
                }
            }
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: sa,
                    rhs: sb,
                })
            }
        };
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Binary cross-entropy on the second component of a probability pair:
    /// `-y ln p - (1 - y) ln(1 - p)` with `p` clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, probs: Var, label: u8) -> Result<Var> {
        let t = &self.nodes[probs.0].value;
        if t.shape != [2] {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                lhs: t.shape.clone(),
                rhs: vec![2],
            });
        }
        let raw = t.data[1];
        let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let clamped = p != raw;
        let loss = if label == 1 { -p.ln() } else { -(1.0 - p).ln() };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                probs,
                label,
                clamped,
            },
        ))
    }

    /// Reverse pass from a scalar. Values on the tape are left untouched.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, ba, bb } => {
                let (x, y) = (&val(*a).data, &val(*b).data);
                {
                    let ga = slot(grads, *a, x.len());
                    for (i, gi) in g.iter().enumerate() {
                        ga[ba.at(i)] += match kind {
                            Binary::Add | Binary::Sub => *gi,
                            Binary::Mul => gi * y[bb.at(i)],
                        };
                    }
                }
                let gb = slot(grads, *b, y.len());
                for (i, gi) in g.iter().enumerate() {
                    gb[bb.at(i)] += match kind {
                        Binary::Add => *gi,
                        Binary::Sub => -gi,
                        Binary::Mul => gi * x[ba.at(i)],
                    };
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, g.len());
                for (d, gi) in gx.iter_mut().zip(g) {
                    *d += gi * c;
                }
            }
            Op::Sigmoid(x) => {
                let gx = slot(grads, *x, g.len());
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(&out.data) {
                    *d += gi * y * (1.0 - y);
                }
            }
            Op::Tanh(x) => {
                let gx = slot(grads, *x, g.len());
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(&out.data) {
                    *d += gi * (1.0 - y * y);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xin = &val(*x).data;
                let gx = slot(grads, *x, g.len());
                for ((d, gi), v) in gx.iter_mut().zip(g).zip(xin) {
                    *d += if *v > 0.0 { *gi } else { gi * slope };
                }
            }
            Op::MatMul { a, b, p, q, r } => {
                let (p, q, r) = (*p, *q, *r);
                let (x, y) = (&val(*a).data, &val(*b).data);
                {
                    // dA = dC * B^T
                    let ga = slot(grads, *a, p * q);
                    for i in 0..p {
                        let gi = &g[i * r..(i + 1) * r];
                        for k in 0..q {
                            let yk = &y[k * r..(k + 1) * r];
                            ga[i * q + k] += gi.iter().zip(yk).map(|(u, v)| u * v).sum::<f64>();
                        }
                    }
                }
                // dB = A^T * dC
                let gb = slot(grads, *b, q * r);
                for i in 0..p {
                    let gi = &g[i * r..(i + 1) * r];
                    for k in 0..q {
                        let xik = x[i * q + k];
                        if xik == 0.0 {
                            continue;
                        }
                        for (d, gv) in gb[k * r..(k + 1) * r].iter_mut().zip(gi) {
                            *d += xik * gv;
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (out.shape[0], out.shape[1]);
                let gx = slot(grads, *x, m * n);
                for j in 0..m {
                    for i in 0..n {
                        gx[i * m + j] += g[j * n + i];
                    }
                }
            }
            Op::Conv1d {
                x,
                filters,
                padding,
            } => {
                let (xt, wt) = (val(*x), val(*filters));
                let (n, m) = (xt.shape[0], xt.shape[1]);
                let (f, k) = (wt.shape[0], wt.shape[1]);
                {
                    let gx = slot(grads, *x, n * m);
                    for t in 0..n {
                        for j in 0..k {
                            let src = t as isize + j as isize - *padding as isize;
                            if src < 0 || src >= n as isize {
                                continue;
                            }
                            let src = src as usize;
                            for o in 0..f {
                                let go = g[t * f + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let w = &wt.data[(o * k + j) * m..(o * k + j + 1) * m];
                                for (d, wv) in gx[src * m..(src + 1) * m].iter_mut().zip(w) {
                                    *d += go * wv;
                                }
                            }
                        }
                    }
                }
                let gw = slot(grads, *filters, f * k * m);
                for t in 0..n {
                    for j in 0..k {
                        let src = t as isize + j as isize - *padding as isize;
                        if src < 0 || src >= n as isize {
                            continue;
                        }
                        let row = xt.row(src as usize);
                        for o in 0..f {
                            let go = g[t * f + o];
                            for (d, xv) in gw[(o * k + j) * m..(o * k + j + 1) * m]
                                .iter_mut()
                                .zip(row)
                            {
                                *d += go * xv;
                            }
                        }
                    }
                }
            }
            Op::MaxPoolRows { x, argmax } => {
                let xt = val(*x);
                let d = xt.shape[1];
                let gx = slot(grads, *x, xt.len());
                for (j, &i) in argmax.iter().enumerate() {
                    gx[i * d + j] += g[j];
                }
            }
            Op::Softmax(x) => {
                let dot: f64 = g.iter().zip(&out.data).map(|(a, b)| a * b).sum();
                let gx = slot(grads, *x, g.len());
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(&out.data) {
                    *d += y * (gi - dot);
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, *x, g.len());
                for ((d, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }
            Op::Gather { x, index, width } => {
                let gx = slot(grads, *x, val(*x).len());
                for (pos, &i) in index.iter().enumerate() {
                    for (d, gi) in gx[i * width..(i + 1) * width]
                        .iter_mut()
                        .zip(&g[pos * width..(pos + 1) * width])
                    {
                        *d += gi;
                    }
                }
            }
            Op::Stack(rows) => {
                let d = out.shape[1];
                for (i, &r) in rows.iter().enumerate() {
                    let gr = slot(grads, r, d);
                    for (dst, gi) in gr.iter_mut().zip(&g[i * d..(i + 1) * d]) {
                        *dst += gi;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if ta.rank() == 1 {
                    add_into(slot(grads, *a, ta.len()), &g[..ta.len()]);
                    add_into(slot(grads, *b, tb.len()), &g[ta.len()..]);
                } else {
                    let (n, p, q) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                    {
                        let ga = slot(grads, *a, n * p);
                        for i in 0..n {
                            add_into(&mut ga[i * p..(i + 1) * p], &g[i * (p + q)..i * (p + q) + p]);
                        }
                    }
                    let gb = slot(grads, *b, n * q);
                    for i in 0..n {
                        add_into(
                            &mut gb[i * q..(i + 1) * q],
                            &g[i * (p + q) + p..(i + 1) * (p + q)],
                        );
                    }
                }
            }
            Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
            Op::Sum(x) => {
                let n = val(*x).len();
                for d in slot(grads, *x, n).iter_mut() {
                    *d += g[0];
                }
            }
            Op::Bce {
                probs,
                label,
                clamped,
            } => {
                if *clamped {
                    slot(grads, *probs, 2);
                    return;
                }
                let p = val(*probs).data[1];
                let dp = if *label == 1 { -1.0 / p } else { 1.0 / (1.0 - p) };
                slot(grads, *probs, 2)[1] += g[0] * dp;
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically guarded softmax of a slice.
pub fn softmax_slice(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradients produced by [`Tape::backward`]. Values not reached from the
/// loss report zero.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, materialising zeros when `v` was not reached.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// Central finite-difference check of a scalar tensor function.
///
/// Returns the largest per-coordinate relative error between the tape
/// gradient and `(f(x + h e) - f(x - h e)) / 2h`, with denominator
/// `max(|a|, |b|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t.clone());
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    let analytic = tape.backward(out)?.get_or_zeros(v, x.len());
    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = eval(&probe)?;
        probe.data[i] = orig - h;
        let down = eval(&probe)?;
        probe.data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
