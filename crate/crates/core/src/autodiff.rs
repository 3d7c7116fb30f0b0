//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar (1 × 1) output walks the record in reverse and
//! accumulates gradients for every node. Elementwise binary operations follow
//! numpy-style broadcasting restricted to two dimensions: an operand axis of
//! length 1 is stretched to match the other operand.
//!
//! The tape uses interior mutability so nested expressions such as
//! `t.relu(t.add(x, y))` borrow it immutably.

use std::cell::RefCell;

use ndarray::{s, Array2, Axis};

/// Dense row-major matrix used throughout the crate.
pub type Mat = Array2<f64>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Record of a computation, in evaluation order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, n) | (n, 1) => Some(n),
        _ => None,
    }
}

/// Sums `grad` down to `shape` along the axes that were broadcast.
fn reduce_to(grad: Mat, shape: (usize, usize)) -> Mat {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn shape_of(m: &Mat) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Records a constant or parameter input.
    pub fn leaf(&self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a 1 × 1 constant.
    pub fn scalar(&self, value: f64) -> Var {
        self.leaf(Mat::from_elem((1, 1), value))
    }

    /// Records a constant with the same value as `v` but no gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> Mat {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Mat) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    /// Value of a 1 × 1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.with_value(v, |m| m[[0, 0]])
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.with_value(v, shape_of)
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.with_value(x, |m| m.mapv(&f));
        self.push(value, op)
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl Fn(&Mat, &Mat) -> Mat) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let ok = broadcast_dim(va.nrows(), vb.nrows()).is_some() && broadcast_dim(va.ncols(), vb.ncols()).is_some();
            assert!(ok, "incompatible shapes for {op:?}: {:?} vs {:?}", va.shape(), vb.shape());
            f(va, vb)
        };
        self.push(value, op)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(va.ncols(), vb.nrows(), "matmul shape mismatch: {:?} x {:?}", va.shape(), vb.shape());
            va.dot(vb)
        };
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// `x + c` elementwise.
    pub fn offset(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Offset(x), |v| v + c)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let value = self.with_value(x, |m| Mat::from_elem((1, 1), m.sum()));
        self.push(value, Op::SumAll(x))
    }

    /// Row sums, producing an `n × 1` column.
    pub fn sum_rows(&self, x: Var) -> Var {
        let value = self.with_value(x, |m| m.sum_axis(Axis(1)).insert_axis(Axis(1)));
        self.push(value, Op::SumRows(x))
    }

    /// Column sums, producing a `1 × m` row.
    pub fn sum_cols(&self, x: Var) -> Var {
        let value = self.with_value(x, |m| m.sum_axis(Axis(0)).insert_axis(Axis(0)));
        self.push(value, Op::SumCols(x))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero parts");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch")
        };
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero parts");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch")
        };
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Var {
        let value = self.with_value(x, |m| m.slice(s![.., start..end]).to_owned());
        self.push(value, Op::SliceCols(x, start, end))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&self, x: Var, rows: &[usize]) -> Var {
        let value = self.with_value(x, |m| m.select(Axis(0), rows));
        self.push(value, Op::GatherRows(x, rows.to_vec()))
    }

    pub fn transpose(&self, x: Var) -> Var {
        let value = self.with_value(x, |m| m.t().to_owned());
        self.push(value, Op::Transpose(x))
    }

    /// Row-wise softmax. The row maximum is subtracted as a constant.
    pub fn softmax_rows(&self, x: Var) -> Var {
        let max = self.with_value(x, |m| {
            m.map_axis(Axis(1), |row| row.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).insert_axis(Axis(1))
        });
        let max = self.leaf(max);
        let e = self.exp(self.sub(x, max));
        let total = self.sum_rows(e);
        self.div(e, total)
    }

    /// Elementwise Gaussian log-density of `x` under `N(mean, exp(log_std)^2)`.
    pub fn gaussian_log_density(&self, x: Var, mean: Var, log_std: Var) -> Var {
        let z = self.div(self.sub(x, mean), self.exp(log_std));
        let quad = self.scale(self.square(z), -0.5);
        let norm = self.offset(self.neg(log_std), -0.5 * (2.0 * std::f64::consts::PI).ln());
        self.add(quad, norm)
    }

    /// Runs reverse-mode accumulation from a 1 × 1 `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(shape_of(&nodes[output.0].value), (1, 1), "backward requires a scalar output");
        let mut grads: Vec<Option<Mat>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Mat::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, *b, val(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), shape_of(val(*a))));
                    acc(&mut grads, *b, reduce_to(g.clone(), shape_of(val(*b))));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), shape_of(val(*a))));
                    acc(&mut grads, *b, reduce_to(-&g, shape_of(val(*b))));
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, reduce_to(&g * val(*b), shape_of(val(*a))));
                    acc(&mut grads, *b, reduce_to(&g * val(*a), shape_of(val(*b))));
                }
                Op::Div(a, b) => {
                    let ga = &g / val(*b);
                    let gb = -(&ga * &node.value);
                    acc(&mut grads, *a, reduce_to(ga, shape_of(val(*a))));
                    acc(&mut grads, *b, reduce_to(gb, shape_of(val(*b))));
                }
                Op::Scale(x, c) => acc(&mut grads, *x, g.mapv(|v| v * c)),
                Op::Offset(x) => acc(&mut grads, *x, g.clone()),
                Op::Exp(x) => acc(&mut grads, *x, &g * &node.value),
                Op::Ln(x) => acc(&mut grads, *x, &g / val(*x)),
                Op::Relu(x) => {
                    let mask = val(*x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *x, &g * &mask);
                }
                Op::Tanh(x) => {
                    let d = node.value.mapv(|t| 1.0 - t * t);
                    acc(&mut grads, *x, &g * &d);
                }
                Op::Sigmoid(x) => {
                    let d = node.value.mapv(|s| s * (1.0 - s));
                    acc(&mut grads, *x, &g * &d);
                }
                Op::Square(x) => acc(&mut grads, *x, &g * &val(*x).mapv(|v| 2.0 * v)),
                Op::Clamp(x, lo, hi) => {
                    let mask = val(*x).mapv(|v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 });
                    acc(&mut grads, *x, &g * &mask);
                }
                Op::SumAll(x) => {
                    let shape = shape_of(val(*x));
                    acc(&mut grads, *x, Mat::from_elem(shape, g[[0, 0]]));
                }
                Op::SumRows(x) => {
                    let shape = shape_of(val(*x));
                    acc(&mut grads, *x, g.broadcast(shape).unwrap().to_owned());
                }
                Op::SumCols(x) => {
                    let shape = shape_of(val(*x));
                    acc(&mut grads, *x, g.broadcast(shape).unwrap().to_owned());
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let mut full = Mat::zeros(shape_of(val(*x)));
                    full.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *x, full);
                }
                Op::GatherRows(x, rows) => {
                    let mut full = Mat::zeros(shape_of(val(*x)));
                    for (out_row, &src) in rows.iter().enumerate() {
                        let mut target = full.row_mut(src);
                        target += &g.row(out_row);
                    }
                    acc(&mut grads, *x, full);
                }
                Op::Transpose(x) => acc(&mut grads, *x, g.t().to_owned()),
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
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
