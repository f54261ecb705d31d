//! Minimal reverse-mode automatic differentiation over dense real tensors
//! (0-, 1- and 2-dimensional), sized for whole-graph training of the
//! synchronization pipeline.
//!
//! A [`Tape`] records one forward pass eagerly; [`Tape::backward`] replays
//! it in reverse creation order (which is a topological order by
//! construction) and accumulates gradients deterministically. Conventions at
//! non-differentiable points are fixed: `relu'(0) = 0`, elementwise `min`
//! routes the gradient to the first argument on ties, the wrap of `mod2pi`
//! carries derivative 1 almost everywhere, and the gradient of the
//! Frobenius norm at the origin is 0.
//!
//! Only scalar↔tensor broadcasting is supported; any other shape mismatch
//! panics (fail-fast).

use crate::angle::mod2pi;
use ndarray::{ArrayD, ArrayViewD, Axis, Ix2, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    ScalarMul(usize, f64),
    AddConst(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Sin(usize),
    Cos(usize),
    Atan2 { y: usize, x: usize },
    Mod2Pi(usize),
    Recip(usize),
    FrobNorm(usize),
    Sum(usize),
    Mean(usize),
    ConcatCols(usize, usize),
    SliceCols { parent: usize, start: usize, end: usize },
    Gather { parent: usize, indices: Rc<Vec<(usize, usize)>> },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Ordered record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients for every node of one backward pass, indexed by node id.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&ArrayD<f64>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

fn is_scalar_like(shape: &[usize]) -> bool {
    shape.iter().product::<usize>() == 1
}

/// Elementwise combine with scalar↔tensor broadcast only.
fn broadcast_zip(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(f64, f64) -> f64,
    opname: &str,
) -> ArrayD<f64> {
    if a.shape() == b.shape() {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
        out
    } else if is_scalar_like(b.shape()) {
        let s = *b.iter().next().unwrap();
        a.mapv(|x| f(x, s))
    } else if is_scalar_like(a.shape()) {
        let s = *a.iter().next().unwrap();
        b.mapv(|y| f(s, y))
    } else {
        panic!(
            "{opname}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        );
    }
}

/// Collapse a gradient onto a (possibly scalar-broadcast) parent shape.
fn reduce_to(grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    if grad.shape() == shape {
        grad
    } else {
        assert!(is_scalar_like(shape), "cannot reduce {:?} to {:?}", grad.shape(), shape);
        ArrayD::from_elem(IxDyn(shape), grad.sum())
    }
}

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
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Constant input (no gradient requested).
    pub fn leaf(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Trainable input; [`Tape::backward`] materializes its gradient.
    pub fn param(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, Op::Leaf { trainable: true })
    }

    /// 0-dimensional constant.
    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// 0-dimensional trainable value.
    pub fn scalar_param(&self, v: f64) -> Var<'_> {
        self.param(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn value(&self, var: Var<'_>) -> ArrayD<f64> {
        self.nodes.borrow()[var.id].value.clone()
    }

    pub fn with_value<R>(&self, var: Var<'_>, f: impl FnOnce(ArrayViewD<'_, f64>) -> R) -> R {
        f(self.nodes.borrow()[var.id].value.view())
    }

    pub fn scalar_value(&self, var: Var<'_>) -> f64 {
        let nodes = self.nodes.borrow();
        let v = &nodes[var.id].value;
        assert!(is_scalar_like(v.shape()), "expected scalar, got {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    /// Reverse accumulation from a scalar loss. Gradients are produced for
    /// every node reachable backwards from the loss; visiting order is the
    /// reverse of creation order, so accumulation is deterministic.
    pub fn backward(&self, loss: Var<'_>) -> crate::Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if !is_scalar_like(loss_value.shape()) {
            return Err(crate::Error::ShapeMismatch(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(ArrayD::from_elem(loss_value.raw_dim(), 1.0));

        for id in (0..=loss.id).rev() {
            let grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            let mut send = |parent: usize, contribution: ArrayD<f64>| {
                let target_shape: Vec<usize> = nodes[parent].value.shape().to_vec();
                let contribution = reduce_to(contribution, &target_shape);
                match &mut grads[parent] {
                    Some(acc) => *acc += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Leaf { trainable } => {
                    if *trainable {
                        grads[id] = Some(grad); // keep for the caller
                    }
                    continue;
                }
                Op::Add(a, b) => {
                    send(*a, grad.clone());
                    send(*b, grad.clone());
                }
                Op::Sub(a, b) => {
                    send(*a, grad.clone());
                    send(*b, grad.mapv(|g| -g));
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    send(*a, broadcast_zip(&grad, bv, |g, y| g * y, "mul-bwd"));
                    send(*b, broadcast_zip(&grad, av, |g, x| g * x, "mul-bwd"));
                }
                Op::Min(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    // ties route to the first argument
                    let mask = broadcast_zip(av, bv, |x, y| if x <= y { 1.0 } else { 0.0 }, "min-bwd");
                    let ga = broadcast_zip(&grad, &mask, |g, m| g * m, "min-bwd");
                    let gb = broadcast_zip(&grad, &mask, |g, m| g * (1.0 - m), "min-bwd");
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::ScalarMul(a, c) => send(*a, grad.mapv(|g| g * c)),
                Op::AddConst(a) => send(*a, grad.clone()),
                Op::MatMul(a, b) => {
                    let av = nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
                    let bv = nodes[*b].value.view().into_dimensionality::<Ix2>().unwrap();
                    let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                    send(*a, g2.dot(&bv.t()).into_dyn());
                    send(*b, av.t().dot(&g2).into_dyn());
                }
                Op::Transpose(a) => {
                    let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                    send(*a, g2.t().to_owned().into_dyn());
                }
                Op::Relu(a) => {
                    let av = &nodes[*a].value;
                    let mut g = grad.clone();
                    g.zip_mut_with(av, |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    send(*a, g);
                }
                Op::Sigmoid(a) => {
                    let out = &node.value;
                    let mut g = grad.clone();
                    g.zip_mut_with(out, |gv, &s| *gv *= s * (1.0 - s));
                    send(*a, g);
                }
                Op::Sin(a) => {
                    let av = &nodes[*a].value;
                    let mut g = grad.clone();
                    g.zip_mut_with(av, |gv, &x| *gv *= x.cos());
                    send(*a, g);
                }
                Op::Cos(a) => {
                    let av = &nodes[*a].value;
                    let mut g = grad.clone();
                    g.zip_mut_with(av, |gv, &x| *gv *= -x.sin());
                    send(*a, g);
                }
                Op::Atan2 { y, x } => {
                    let yv = &nodes[*y].value;
                    let xv = &nodes[*x].value;
                    let denom = broadcast_zip(xv, yv, |a, b| a * a + b * b, "atan2-bwd");
                    let gy = broadcast_zip(
                        &broadcast_zip(&grad, xv, |g, a| g * a, "atan2-bwd"),
                        &denom,
                        |n, d| n / d,
                        "atan2-bwd",
                    );
                    let gx = broadcast_zip(
                        &broadcast_zip(&grad, yv, |g, b| -g * b, "atan2-bwd"),
                        &denom,
                        |n, d| n / d,
                        "atan2-bwd",
                    );
                    send(*y, gy);
                    send(*x, gx);
                }
                Op::Mod2Pi(a) => send(*a, grad.clone()),
                Op::Recip(a) => {
                    let av = &nodes[*a].value;
                    let mut g = grad.clone();
                    g.zip_mut_with(av, |gv, &x| *gv *= -1.0 / (x * x));
                    send(*a, g);
                }
                Op::FrobNorm(a) => {
                    let av = &nodes[*a].value;
                    let norm = *node.value.iter().next().unwrap();
                    let gs = *grad.iter().next().unwrap();
                    let contribution = if norm == 0.0 {
                        ArrayD::zeros(av.raw_dim())
                    } else {
                        av.mapv(|x| gs * x / norm)
                    };
                    send(*a, contribution);
                }
                Op::Sum(a) => {
                    let gs = *grad.iter().next().unwrap();
                    send(*a, ArrayD::from_elem(nodes[*a].value.raw_dim(), gs));
                }
                Op::Mean(a) => {
                    let count = nodes[*a].value.len() as f64;
                    let gs = *grad.iter().next().unwrap() / count;
                    send(*a, ArrayD::from_elem(nodes[*a].value.raw_dim(), gs));
                }
                Op::ConcatCols(a, b) => {
                    let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                    let ca = nodes[*a].value.shape()[1];
                    send(*a, g2.slice(ndarray::s![.., ..ca]).to_owned().into_dyn());
                    send(*b, g2.slice(ndarray::s![.., ca..]).to_owned().into_dyn());
                }
                Op::SliceCols { parent, start, end } => {
                    let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                    let pshape = nodes[*parent].value.shape();
                    let mut full = ndarray::Array2::<f64>::zeros((pshape[0], pshape[1]));
                    full.slice_mut(ndarray::s![.., *start..*end]).assign(&g2);
                    send(*parent, full.into_dyn());
                }
                Op::Gather { parent, indices } => {
                    let pshape = nodes[*parent].value.shape();
                    let mut full = ndarray::Array2::<f64>::zeros((pshape[0], pshape[1]));
                    for (slot, &(i, j)) in indices.iter().enumerate() {
                        full[(i, j)] += grad[slot];
                    }
                    send(*parent, full.into_dyn());
                }
            }
        }
        Ok(Gradients { grads })
    }
}

macro_rules! same_tape {
    ($a:expr, $b:expr) => {
        assert!(
            std::ptr::eq($a.tape, $b.tape),
            "operands come from different tapes"
        )
    };
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    fn unary(self, op: impl FnOnce(usize) -> Op, value: ArrayD<f64>) -> Var<'t> {
        self.tape.push(value, op(self.id))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        same_tape!(self, other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            broadcast_zip(&nodes[self.id].value, &nodes[other.id].value, |a, b| a + b, "add")
        };
        self.tape.push(v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        same_tape!(self, other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            broadcast_zip(&nodes[self.id].value, &nodes[other.id].value, |a, b| a - b, "sub")
        };
        self.tape.push(v, Op::Sub(self.id, other.id))
    }

    /// Elementwise (Hadamard) product; either side may be scalar.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        same_tape!(self, other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            broadcast_zip(&nodes[self.id].value, &nodes[other.id].value, |a, b| a * b, "mul")
        };
        self.tape.push(v, Op::Mul(self.id, other.id))
    }

    /// Elementwise minimum; gradient follows the selected branch, first
    /// argument on ties.
    pub fn min(self, other: Var<'t>) -> Var<'t> {
        same_tape!(self, other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            broadcast_zip(&nodes[self.id].value, &nodes[other.id].value, f64::min, "min")
        };
        self.tape.push(v, Op::Min(self.id, other.id))
    }

    pub fn scalar_mul(self, c: f64) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(|x| x * c);
        self.unary(|p| Op::ScalarMul(p, c), v)
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(|x| x + c);
        self.unary(Op::AddConst, v)
    }

    pub fn neg(self) -> Var<'t> {
        self.scalar_mul(-1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        same_tape!(self, other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.id]
                .value
                .view()
                .into_dimensionality::<Ix2>()
                .expect("matmul lhs must be 2-d");
            let b = nodes[other.id]
                .value
                .view()
                .into_dimensionality::<Ix2>()
                .expect("matmul rhs must be 2-d");
            assert_eq!(a.ncols(), b.nrows(), "matmul inner dimensions differ");
            a.dot(&b).into_dyn()
        };
        self.tape.push(v, Op::MatMul(self.id, other.id))
    }

    pub fn t(self) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id]
                .value
                .view()
                .into_dimensionality::<Ix2>()
                .expect("transpose needs a 2-d value")
                .t()
                .to_owned()
                .into_dyn()
        };
        self.unary(Op::Transpose, v)
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(|x| x.max(0.0));
        self.unary(Op::Relu, v)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(sigmoid);
        self.unary(Op::Sigmoid, v)
    }

    pub fn sin(self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(f64::sin);
        self.unary(Op::Sin, v)
    }

    pub fn cos(self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(f64::cos);
        self.unary(Op::Cos, v)
    }

    /// Elementwise `atan2(self, x)`; errors out at the (0, 0) pole.
    pub fn atan2(self, x: Var<'t>) -> Var<'t> {
        same_tape!(self, x);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let yv = &nodes[self.id].value;
            let xv = &nodes[x.id].value;
            broadcast_zip(yv, xv, |a, b| {
                assert!(a != 0.0 || b != 0.0, "atan2 undefined at (0, 0)");
                a.atan2(b)
            }, "atan2")
        };
        self.tape.push(v, Op::Atan2 { y: self.id, x: x.id })
    }

    /// Elementwise wrap to `[0, 2π)`; derivative 1 almost everywhere.
    pub fn mod2pi(self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(mod2pi);
        self.unary(Op::Mod2Pi, v)
    }

    /// Elementwise reciprocal.
    pub fn recip(self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(|x| 1.0 / x);
        self.unary(Op::Recip, v)
    }

    /// Frobenius norm, returned as a 0-d scalar.
    pub fn frobenius_norm(self) -> Var<'t> {
        let norm = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        self.unary(Op::FrobNorm, ArrayD::from_elem(IxDyn(&[]), norm))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.tape.nodes.borrow()[self.id].value.sum();
        self.unary(Op::Sum, ArrayD::from_elem(IxDyn(&[]), s))
    }

    pub fn mean(self) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        assert!(!v.is_empty(), "mean of an empty tensor");
        let m = v.sum() / v.len() as f64;
        drop(nodes);
        self.unary(Op::Mean, ArrayD::from_elem(IxDyn(&[]), m))
    }

    /// Column-wise concatenation of two 2-d values.
    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        same_tape!(self, other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.id].value.view().into_dimensionality::<Ix2>().unwrap();
            let b = nodes[other.id].value.view().into_dimensionality::<Ix2>().unwrap();
            assert_eq!(a.nrows(), b.nrows(), "concat_cols row mismatch");
            ndarray::concatenate(Axis(1), &[a, b]).unwrap().into_dyn()
        };
        self.tape.push(v, Op::ConcatCols(self.id, other.id))
    }

    /// Columns `start..end` of a 2-d value.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.id].value.view().into_dimensionality::<Ix2>().unwrap();
            assert!(start < end && end <= a.ncols(), "slice_cols out of range");
            a.slice(ndarray::s![.., start..end]).to_owned().into_dyn()
        };
        self.tape.push(
            v,
            Op::SliceCols {
                parent: self.id,
                start,
                end,
            },
        )
    }

    /// Gather entries of a 2-d value into a 1-d vector; the backward pass
    /// scatter-adds, so repeated indices accumulate.
    pub fn gather(self, indices: Rc<Vec<(usize, usize)>>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.id].value.view().into_dimensionality::<Ix2>().unwrap();
            let mut out = ndarray::Array1::<f64>::zeros(indices.len());
            for (slot, &(i, j)) in indices.iter().enumerate() {
                out[slot] = a[(i, j)];
            }
            out.into_dyn()
        };
        self.tape.push(v, Op::Gather { parent: self.id, indices })
    }
}

/// One SGD update with decoupled-from-nothing plain L2 weight decay:
/// `p ← p − lr (g + wd·p)`.
pub fn sgd_step(param: &mut ArrayD<f64>, grad: &ArrayD<f64>, lr: f64, weight_decay: f64) {
    assert_eq!(param.shape(), grad.shape(), "sgd_step shape mismatch");
    param.zip_mut_with(grad, |p, &g| *p -= lr * (g + weight_decay * *p));
}
