//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Values are dense `f64` buffers tagged with a [`Shape`]; matrices are row-major.
//! Every op checks shapes when recorded, computes its forward value eagerly and
//! keeps whatever it needs for the backward sweep. Nodes that do not depend on
//! any leaf are marked constant and skipped during backward.

use std::sync::Arc;

use faer::{MatMut, MatRef};
use thiserror::Error;

use crate::linalg::{LinalgError, Lu, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("{0}")]
    Contract(String),
    #[error("linear solve failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("non-finite value at component {component} (f = {value})")]
    NonFinite { component: usize, value: f64 },
    #[error("forward evaluation failed: {0}")]
    Forward(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(m, n) => m * n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    shape: Shape,
}

impl Var {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn index(&self) -> usize {
        self.idx
    }
}

/// User-defined op: the caller computes the forward value, the op supplies
/// input cotangents given the output cotangent.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    /// Returns one cotangent per input (`None` when `needs[i]` is false).
    fn backward(&self, inputs: &[&[f64]], output: &[f64], out_grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Powf(usize, f64),
    Square(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Tanh(usize),
    Dot(usize, usize),
    MatVec(usize, usize),
    MatVecConst(Arc<Matrix>, usize),
    MatMul(usize, usize),
    AddRowBroadcast(usize, usize),
    Sum(usize),
    Mean(usize),
    SumSq(usize),
    Concat(Vec<usize>),
    Reshape(usize),
    Slice(usize, usize),
    Gather(usize, Arc<Vec<usize>>),
    Scatter(usize, Arc<Vec<usize>>),
    Solve(usize, usize, Arc<Lu>),
    SolveConst(Arc<Lu>, usize),
    Custom(Box<dyn CustomOp>, Vec<usize>),
}

struct Node {
    op: Op,
    value: Vec<f64>,
    shape: Shape,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Cotangents of every node after one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient for `v`; zeros if `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.grads[v.idx].clone().unwrap_or_else(|| vec![0.0; self.shapes[v.idx].len()])
    }
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape, AdError> {
    match (a, b) {
        _ if a == b => Ok(a),
        (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
        _ => Err(AdError::Shape { op, lhs: a, rhs: b }),
    }
}

fn at(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Reduces a full-size cotangent to the input's (possibly scalar) size.
fn unbroadcast(g: Vec<f64>, target_len: usize) -> Vec<f64> {
    if target_len == 1 && g.len() != 1 {
        vec![g.iter().sum()]
    } else {
        g
    }
}

fn rm(data: &[f64], r: usize, c: usize) -> MatRef<'_, f64> {
    MatRef::from_row_major_slice(data, r, c)
}

fn rm_mut(data: &mut [f64], r: usize, c: usize) -> MatMut<'_, f64> {
    MatMut::from_row_major_slice_mut(data, r, c)
}

fn gemm(dst: MatMut<'_, f64>, a: MatRef<'_, f64>, b: MatRef<'_, f64>, accumulate: bool) {
    let accum = if accumulate { faer::Accum::Add } else { faer::Accum::Replace };
    faer::linalg::matmul::matmul(dst, accum, a, b, 1.0, faer::Par::Seq);
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.idx].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.idx].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>, shape: Shape, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.len());
        self.nodes.push(Node { op, value, shape, requires_grad });
        Var { idx: self.nodes.len() - 1, shape }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Vec<f64>, shape: Shape) -> Result<Var, AdError> {
        if value.len() != shape.len() {
            return Err(AdError::Contract(format!("leaf of shape {shape:?} given {} values", value.len())));
        }
        Ok(self.push(Op::Leaf, value, shape, true))
    }

    pub fn leaf_vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(Op::Leaf, value, Shape::Vector(n), true)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, vec![value], Shape::Scalar, true)
    }

    pub fn constant(&mut self, value: Vec<f64>, shape: Shape) -> Result<Var, AdError> {
        if value.len() != shape.len() {
            return Err(AdError::Contract(format!("constant of shape {shape:?} given {} values", value.len())));
        }
        Ok(self.push(Op::Constant, value, shape, false))
    }

    pub fn constant_vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(Op::Constant, value, Shape::Vector(n), false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(Op::Constant, vec![value], Shape::Scalar, false)
    }

    pub fn constant_matrix(&mut self, m: &Matrix) -> Var {
        self.push(Op::Constant, m.as_slice().to_vec(), Shape::Matrix(m.rows(), m.cols()), false)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var, AdError> {
        let shape = broadcast_shape(name, a.shape, b.shape)?;
        let (va, vb) = (&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        let value = (0..shape.len()).map(|i| f(at(va, i), at(vb, i))).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op(a.idx, b.idx), value, shape, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.idx].value.iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(op, value, a.shape, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a.idx))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a.idx, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a.idx))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a.idx, p))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.idx))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a.idx))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a.idx))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.idx))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.idx))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        if a.len() != b.len() || matches!(a.shape, Shape::Matrix(..)) || matches!(b.shape, Shape::Matrix(..)) {
            return Err(AdError::Shape { op: "dot", lhs: a.shape, rhs: b.shape });
        }
        let v = crate::linalg::dot(&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Dot(a.idx, b.idx), vec![v], Shape::Scalar, rg))
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var, AdError> {
        let (r, c) = match m.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => return Err(AdError::Shape { op: "matvec", lhs: m.shape, rhs: x.shape }),
        };
        if x.shape != Shape::Vector(c) {
            return Err(AdError::Shape { op: "matvec", lhs: m.shape, rhs: x.shape });
        }
        let (mv, xv) = (&self.nodes[m.idx].value, &self.nodes[x.idx].value);
        let value = (0..r).map(|i| crate::linalg::dot(&mv[i * c..(i + 1) * c], xv)).collect();
        let rg = self.rg(m) || self.rg(x);
        Ok(self.push(Op::MatVec(m.idx, x.idx), value, Shape::Vector(r), rg))
    }

    /// `M x` with a constant matrix kept outside the tape's value storage.
    pub fn matvec_const(&mut self, m: Arc<Matrix>, x: Var) -> Result<Var, AdError> {
        if x.shape != Shape::Vector(m.cols()) {
            return Err(AdError::Shape { op: "matvec_const", lhs: Shape::Matrix(m.rows(), m.cols()), rhs: x.shape });
        }
        let value = m.matvec(&self.nodes[x.idx].value);
        let rg = self.rg(x);
        let r = m.rows();
        Ok(self.push(Op::MatVecConst(m, x.idx), value, Shape::Vector(r), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let ((m, k), (k2, n)) = match (a.shape, b.shape) {
            (Shape::Matrix(m, k), Shape::Matrix(k2, n)) => ((m, k), (k2, n)),
            _ => return Err(AdError::Shape { op: "matmul", lhs: a.shape, rhs: b.shape }),
        };
        if k != k2 {
            return Err(AdError::Shape { op: "matmul", lhs: a.shape, rhs: b.shape });
        }
        let mut value = vec![0.0; m * n];
        gemm(rm_mut(&mut value, m, n), rm(&self.nodes[a.idx].value, m, k), rm(&self.nodes[b.idx].value, k, n), false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a.idx, b.idx), value, Shape::Matrix(m, n), rg))
    }

    /// Adds vector `v` (length = columns) to every row of matrix `m`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var, AdError> {
        let (r, c) = match m.shape {
            Shape::Matrix(r, c) if v.shape == Shape::Vector(c) => (r, c),
            _ => return Err(AdError::Shape { op: "add_row_broadcast", lhs: m.shape, rhs: v.shape }),
        };
        let mv = &self.nodes[m.idx].value;
        let vv = &self.nodes[v.idx].value;
        let mut value = mv.clone();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] += vv[j];
            }
        }
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(Op::AddRowBroadcast(m.idx, v.idx), value, m.shape, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.idx].value.iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a.idx), vec![s], Shape::Scalar, rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        if a.is_empty() {
            return Err(AdError::Contract("mean of empty value".into()));
        }
        let s = self.nodes[a.idx].value.iter().sum::<f64>() / a.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Op::Mean(a.idx), vec![s], Shape::Scalar, rg))
    }

    pub fn sumsq(&mut self, a: Var) -> Var {
        let s = self.nodes[a.idx].value.iter().map(|x| x * x).sum();
        let rg = self.rg(a);
        self.push(Op::SumSq(a.idx), vec![s], Shape::Scalar, rg)
    }

    /// Concatenates scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let mut value = Vec::new();
        for p in parts {
            if matches!(p.shape, Shape::Matrix(..)) {
                return Err(AdError::Shape { op: "concat", lhs: p.shape, rhs: Shape::Scalar });
            }
            value.extend_from_slice(&self.nodes[p.idx].value);
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        let n = value.len();
        Ok(self.push(Op::Concat(parts.iter().map(|p| p.idx).collect()), value, Shape::Vector(n), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var, AdError> {
        if shape.len() != a.len() {
            return Err(AdError::Shape { op: "reshape", lhs: a.shape, rhs: shape });
        }
        let value = self.nodes[a.idx].value.clone();
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a.idx), value, shape, rg))
    }

    /// Contiguous slice `[start, start+len)` of the flattened value.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AdError> {
        if start + len > a.len() {
            return Err(AdError::Contract(format!("slice {start}..{} out of range for length {}", start + len, a.len())));
        }
        let value = self.nodes[a.idx].value[start..start + len].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Op::Slice(a.idx, start), value, Shape::Vector(len), rg))
    }

    /// Picks entries of the flattened value: `out[k] = a[idx[k]]`.
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var, AdError> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.len()) {
            return Err(AdError::Contract(format!("gather index {bad} out of range for length {}", a.len())));
        }
        let av = &self.nodes[a.idx].value;
        let value = idx.iter().map(|&i| av[i]).collect();
        let rg = self.rg(a);
        let n = idx.len();
        Ok(self.push(Op::Gather(a.idx, idx), value, Shape::Vector(n), rg))
    }

    /// Zero vector of length `len` with `out[idx[k]] += a[k]`.
    pub fn scatter(&mut self, a: Var, idx: Arc<Vec<usize>>, len: usize) -> Result<Var, AdError> {
        if idx.len() != a.len() {
            return Err(AdError::Contract(format!("scatter of {} values with {} indices", a.len(), idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
            return Err(AdError::Contract(format!("scatter index {bad} out of range for length {len}")));
        }
        let mut value = vec![0.0; len];
        for (k, &i) in idx.iter().enumerate() {
            value[i] += self.nodes[a.idx].value[k];
        }
        let rg = self.rg(a);
        Ok(self.push(Op::Scatter(a.idx, idx), value, Shape::Vector(len), rg))
    }

    /// `x = A⁻¹ b` with the adjoint rule `Aᵀw = x̄, b̄ += w, Ā −= w xᵀ`.
    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let n = match a.shape {
            Shape::Matrix(r, c) if r == c => r,
            _ => return Err(AdError::Shape { op: "solve", lhs: a.shape, rhs: b.shape }),
        };
        if b.shape != Shape::Vector(n) {
            return Err(AdError::Shape { op: "solve", lhs: a.shape, rhs: b.shape });
        }
        let m = Matrix::from_row_major(n, n, self.nodes[a.idx].value.clone())?;
        let lu = Lu::factor(&m)?;
        let x = lu.solve(&self.nodes[b.idx].value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Solve(a.idx, b.idx, Arc::new(lu)), x, Shape::Vector(n), rg))
    }

    /// Solve with a prefactored constant matrix.
    pub fn solve_const(&mut self, lu: Arc<Lu>, b: Var) -> Result<Var, AdError> {
        if b.shape != Shape::Vector(lu.dim()) {
            return Err(AdError::Shape { op: "solve_const", lhs: Shape::Matrix(lu.dim(), lu.dim()), rhs: b.shape });
        }
        let x = lu.solve(&self.nodes[b.idx].value);
        let rg = self.rg(b);
        let n = lu.dim();
        Ok(self.push(Op::SolveConst(lu, b.idx), x, Shape::Vector(n), rg))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], value: Vec<f64>, shape: Shape) -> Result<Var, AdError> {
        if value.len() != shape.len() {
            return Err(AdError::Contract(format!("custom op `{}` produced {} values for {shape:?}", op.name(), value.len())));
        }
        let rg = inputs.iter().any(|v| self.rg(*v));
        Ok(self.push(Op::Custom(op, inputs.iter().map(|v| v.idx).collect()), value, shape, rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, AdError> {
        if output.shape != Shape::Scalar {
            return Err(AdError::Contract(format!("backward needs a scalar output, got {:?}", output.shape)));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[output.idx] = Some(vec![1.0]);
        for i in (0..=output.idx).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.shape).collect() })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], j: usize, g: Vec<f64>) {
        if !self.nodes[j].requires_grad {
            return;
        }
        match &mut grads[j] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, v)| *e += v),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<f64>>], j: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[j].requires_grad {
            return;
        }
        let slot = grads[j].get_or_insert_with(|| vec![0.0; self.nodes[j].shape.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |j: usize| &self.nodes[j].value;
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..g.len()).map(|k| g[k] * f(k)).collect() };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                let (la, lb) = (val(*a).len(), val(*b).len());
                self.acc(grads, *a, unbroadcast(g.to_vec(), la));
                self.acc(grads, *b, unbroadcast(g.to_vec(), lb));
            }
            Op::Sub(a, b) => {
                let (la, lb) = (val(*a).len(), val(*b).len());
                self.acc(grads, *a, unbroadcast(g.to_vec(), la));
                self.acc(grads, *b, unbroadcast(g.iter().map(|x| -x).collect(), lb));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[*a].requires_grad {
                    self.acc(grads, *a, unbroadcast(elementwise(&|k| at(vb, k)), va.len()));
                }
                if self.nodes[*b].requires_grad {
                    self.acc(grads, *b, unbroadcast(elementwise(&|k| at(va, k)), vb.len()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[*a].requires_grad {
                    self.acc(grads, *a, unbroadcast(elementwise(&|k| 1.0 / at(vb, k)), va.len()));
                }
                if self.nodes[*b].requires_grad {
                    let gb = elementwise(&|k| -at(va, k) / (at(vb, k) * at(vb, k)));
                    self.acc(grads, *b, unbroadcast(gb, vb.len()));
                }
            }
            Op::Neg(a) => self.acc(grads, *a, g.iter().map(|x| -x).collect()),
            Op::Scale(a, s) => self.acc(grads, *a, g.iter().map(|x| s * x).collect()),
            Op::AddScalar(a) => self.acc(grads, *a, g.to_vec()),
            Op::Powf(a, p) => {
                let va = val(*a);
                self.acc(grads, *a, elementwise(&|k| p * va[k].powf(p - 1.0)));
            }
            Op::Square(a) => {
                let va = val(*a);
                self.acc(grads, *a, elementwise(&|k| 2.0 * va[k]));
            }
            Op::Sin(a) => {
                let va = val(*a);
                self.acc(grads, *a, elementwise(&|k| va[k].cos()));
            }
            Op::Cos(a) => {
                let va = val(*a);
                self.acc(grads, *a, elementwise(&|k| -va[k].sin()));
            }
            Op::Exp(a) => {
                let out = &node.value;
                self.acc(grads, *a, elementwise(&|k| out[k]));
            }
            Op::Tanh(a) => {
                let out = &node.value;
                self.acc(grads, *a, elementwise(&|k| 1.0 - out[k] * out[k]));
            }
            Op::Dot(a, b) => {
                let s = g[0];
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, vb.iter().map(|x| s * x).collect());
                self.acc(grads, *b, va.iter().map(|x| s * x).collect());
            }
            Op::MatVec(m, x) => {
                let (r, c) = match self.nodes[*m].shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                let (vm, vx) = (val(*m), val(*x));
                self.acc_with(grads, *m, |gm| {
                    for i in 0..r {
                        if g[i] != 0.0 {
                            crate::linalg::axpy(g[i], vx, &mut gm[i * c..(i + 1) * c]);
                        }
                    }
                });
                self.acc_with(grads, *x, |gx| {
                    for i in 0..r {
                        if g[i] != 0.0 {
                            crate::linalg::axpy(g[i], &vm[i * c..(i + 1) * c], gx);
                        }
                    }
                });
            }
            Op::MatVecConst(m, x) => {
                self.acc(grads, *x, m.tr_matvec(g));
            }
            Op::MatMul(a, b) => {
                let (m, k) = match self.nodes[*a].shape {
                    Shape::Matrix(m, k) => (m, k),
                    _ => unreachable!(),
                };
                let n = node.shape.len() / m.max(1);
                let (va, vb) = (val(*a), val(*b));
                let gm = rm(g, m, n);
                self.acc_with(grads, *a, |ga| gemm(rm_mut(ga, m, k), gm, rm(vb, k, n).transpose(), true));
                self.acc_with(grads, *b, |gb| gemm(rm_mut(gb, k, n), rm(va, m, k).transpose(), gm, true));
            }
            Op::AddRowBroadcast(m, v) => {
                self.acc(grads, *m, g.to_vec());
                let c = val(*v).len();
                self.acc_with(grads, *v, |gv| {
                    for (k, x) in g.iter().enumerate() {
                        gv[k % c] += x;
                    }
                });
            }
            Op::Sum(a) => {
                let len = val(*a).len();
                self.acc(grads, *a, vec![g[0]; len]);
            }
            Op::Mean(a) => {
                let len = val(*a).len();
                self.acc(grads, *a, vec![g[0] / len as f64; len]);
            }
            Op::SumSq(a) => {
                let va = val(*a);
                self.acc(grads, *a, va.iter().map(|x| 2.0 * g[0] * x).collect());
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    self.acc(grads, p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::Reshape(a) => self.acc(grads, *a, g.to_vec()),
            Op::Slice(a, start) => {
                let start = *start;
                self.acc_with(grads, *a, |ga| {
                    for (k, x) in g.iter().enumerate() {
                        ga[start + k] += x;
                    }
                });
            }
            Op::Gather(a, idx) => {
                self.acc_with(grads, *a, |ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        ga[i] += g[k];
                    }
                });
            }
            Op::Scatter(a, idx) => {
                self.acc(grads, *a, idx.iter().map(|&i| g[i]).collect());
            }
            Op::Solve(a, b, lu) => {
                let w = lu.solve_transpose(g);
                let x = &node.value;
                let n = x.len();
                self.acc_with(grads, *a, |ga| {
                    for i in 0..n {
                        if w[i] != 0.0 {
                            crate::linalg::axpy(-w[i], x, &mut ga[i * n..(i + 1) * n]);
                        }
                    }
                });
                self.acc(grads, *b, w);
            }
            Op::SolveConst(lu, b) => {
                self.acc(grads, *b, lu.solve_transpose(g));
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&[f64]> = inputs.iter().map(|&j| self.nodes[j].value.as_slice()).collect();
                let needs: Vec<bool> = inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
                let out = op.backward(&vals, &node.value, g, &needs);
                for (&j, gj) in inputs.iter().zip(out) {
                    if let Some(gj) = gj {
                        self.acc(grads, j, gj);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub h: f64,
    pub rows: Vec<GradCheckRow>,
}

/// Central-difference comparison against a supplied gradient, with
/// relative error `|a − fd| / max(1, |a|)`.
pub fn compare_with_fd(
    f: impl Fn(&[f64]) -> Result<f64, AdError>,
    analytic: &[f64],
    x0: &[f64],
    h: f64,
) -> Result<GradCheckReport, AdError> {
    if analytic.len() != x0.len() {
        return Err(AdError::Contract(format!("gradient has {} entries for {} inputs", analytic.len(), x0.len())));
    }
    let mut rows = Vec::with_capacity(x0.len());
    let mut x = x0.to_vec();
    let mut max_rel: f64 = 0.0;
    for i in 0..x0.len() {
        // Use the representable step so the difference quotient is not
        // polluted by rounding of x ± h.
        x[i] = x0[i] + h;
        let xp = x[i];
        let fp = f(&x)?;
        x[i] = x0[i] - h;
        let xm = x[i];
        let fm = f(&x)?;
        x[i] = x0[i];
        for v in [fp, fm] {
            if !v.is_finite() {
                return Err(AdError::NonFinite { component: i, value: v });
            }
        }
        if !analytic[i].is_finite() {
            return Err(AdError::NonFinite { component: i, value: analytic[i] });
        }
        let numeric = (fp - fm) / (xp - xm);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
        rows.push(GradCheckRow { index: i, analytic: analytic[i], numeric, rel_error: rel });
    }
    Ok(GradCheckReport { max_rel_error: max_rel, h, rows })
}

/// Records `f` on a fresh tape for the analytic gradient and re-evaluates it
/// for central differences.
pub fn grad_check(
    f: impl Fn(&mut Tape, Var) -> Result<Var, AdError>,
    x0: &[f64],
    h: f64,
) -> Result<GradCheckReport, AdError> {
    let eval = |x: &[f64]| -> Result<(f64, Tape, Var, Var), AdError> {
        let mut tape = Tape::new();
        let xv = tape.leaf_vector(x.to_vec());
        let out = f(&mut tape, xv)?;
        if out.shape() != Shape::Scalar {
            return Err(AdError::Contract("grad_check function must return a scalar".into()));
        }
        Ok((tape.scalar_value(out), tape, xv, out))
    };
    let (_, tape, xv, out) = eval(x0)?;
    let analytic = tape.backward(out)?.wrt(xv);
    compare_with_fd(|x| eval(x).map(|r| r.0), &analytic, x0, h)
}
