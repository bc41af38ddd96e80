//! Reverse-mode tape with higher-order support.
//!
//! Every backward rule is expressed with the same differentiable operations
//! the forward pass uses, so a gradient computed with `create_graph = true`
//! is itself a node on the tape and can be differentiated again. The
//! gradient penalty relies on this: the input gradient of the discriminator
//! is trained through exactly, with no finite-difference shortcut.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Rc<Tensor<T>>),
    Pow(Var, T),
    Tanh(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddChan(Var, Var),
    BroadcastChan(Var),
    SumChan(Var),
    Conv { x: Var, w: Var, geom: ConvGeom },
    ConvInputGrad { gy: Var, w: Var, geom: ConvGeom },
    ConvWeightGrad { x: Var, gy: Var, geom: ConvGeom },
    Upsample2x(Var),
    Downsample2xSum(Var),
    SumLast(Var),
    ExpandLast(Var),
    Reshape(Var),
    SumAll(Var),
    ExpandScalar(Var),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddChan(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Conv { x, w, .. } => vec![*x, *w],
            ConvInputGrad { gy, w, .. } => vec![*gy, *w],
            ConvWeightGrad { x, gy, .. } => vec![*x, *gy],
            Scale(a, _)
            | AddScalar(a)
            | MulConst(a, _)
            | Pow(a, _)
            | Tanh(a)
            | BroadcastChan(a)
            | SumChan(a)
            | Upsample2x(a)
            | Downsample2xSum(a)
            | SumLast(a)
            | ExpandLast(a)
            | Reshape(a)
            | SumAll(a)
            | ExpandScalar(a) => vec![*a],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-use computation tape. Create one per training step.
pub struct Graph<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// A tape that never records: every node is a constant.
    pub fn no_grad() -> Self {
        let g = Self::new();
        g.recording.set(false);
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.recording.get() && op.parents().iter().any(|p| nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(&self, value: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad: self.recording.get(),
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Scalar value of a rank-0 (or single-element) node.
    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    /// Elementwise product with a tensor that is not differentiated (masks).
    pub fn mul_const(&self, a: Var, mask: Rc<Tensor<T>>) -> Var {
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn pow(&self, a: Var, p: T) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::Pow(a, p))
    }

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    /// Leaky ReLU as multiplication by a locally constant slope mask.
    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        let mask = self
            .value(a)
            .map(|x| if x > T::zero() { T::one() } else { slope });
        self.mul_const(a, Rc::new(mask))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn abs(&self, a: Var) -> Var {
        let mask = self
            .value(a)
            .map(|x| if x < T::zero() { -T::one() } else { T::one() });
        self.mul_const(a, Rc::new(mask))
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let v = kernels::matmul(&self.value(a), &self.value(b), ta, tb);
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    /// Adds a per-channel vector along axis 1.
    pub fn add_chan(&self, x: Var, b: Var) -> Var {
        let v = kernels::add_chan(&self.value(x), &self.value(b));
        self.push(v, Op::AddChan(x, b))
    }

    pub fn broadcast_chan(&self, b: Var, shape: &[usize]) -> Var {
        let v = kernels::broadcast_chan(&self.value(b), shape);
        self.push(v, Op::BroadcastChan(b))
    }

    pub fn sum_chan(&self, x: Var) -> Var {
        let v = kernels::sum_chan(&self.value(x));
        self.push(v, Op::SumChan(x))
    }

    pub fn conv2d(&self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let v = kernels::conv2d(&geom, &self.value(x), &self.value(w));
        self.push(v, Op::Conv { x, w, geom })
    }

    fn conv_input_grad(&self, gy: Var, w: Var, geom: ConvGeom) -> Var {
        let v = kernels::conv2d_input_grad(&geom, &self.value(gy), &self.value(w));
        self.push(v, Op::ConvInputGrad { gy, w, geom })
    }

    fn conv_weight_grad(&self, x: Var, gy: Var, geom: ConvGeom) -> Var {
        let v = kernels::conv2d_weight_grad(&geom, &self.value(x), &self.value(gy));
        self.push(v, Op::ConvWeightGrad { x, gy, geom })
    }

    pub fn upsample2x(&self, x: Var) -> Var {
        let v = kernels::upsample2x(&self.value(x));
        self.push(v, Op::Upsample2x(x))
    }

    fn downsample2x_sum(&self, x: Var) -> Var {
        let v = kernels::downsample2x_sum(&self.value(x));
        self.push(v, Op::Downsample2xSum(x))
    }

    /// Sums over the trailing `k` axes.
    pub fn sum_last(&self, x: Var, k: usize) -> Var {
        let v = kernels::sum_last(&self.value(x), k);
        self.push(v, Op::SumLast(x))
    }

    fn expand_last(&self, x: Var, shape: &[usize]) -> Var {
        let v = kernels::expand_last(&self.value(x), shape);
        self.push(v, Op::ExpandLast(x))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let v = (*self.value(x)).clone().reshape(shape);
        self.push(v, Op::Reshape(x))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::of(n as f64))
    }

    fn expand_scalar(&self, x: Var, shape: &[usize]) -> Var {
        let v = Tensor::full(shape, self.value(x).data()[0]);
        self.push(v, Op::ExpandScalar(x))
    }

    // ---- differentiation --------------------------------------------------

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned gradients are differentiable nodes
    /// (double backpropagation); otherwise they are constants. Variables the
    /// loss does not depend on receive all-zero gradients.
    pub fn grad(&self, loss: Var, wrt: &[Var], create_graph: bool) -> Vec<Var> {
        let n = loss.0 + 1;
        // Nodes on some path from a `wrt` leaf to the loss.
        let mut relevant = vec![false; n];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.0 < n && nodes[w.0].requires_grad {
                    relevant[w.0] = true;
                }
            }
            for i in 0..n {
                if !relevant[i] && nodes[i].requires_grad {
                    relevant[i] = nodes[i].op.parents().iter().any(|p| relevant[p.0]);
                }
            }
        }

        let prev = self.recording.replace(create_graph && self.recording.get());
        let mut grads: Vec<Option<Var>> = vec![None; n];
        if relevant[loss.0] {
            grads[loss.0] = Some(self.constant(Tensor::ones(&self.shape(loss))));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            for (p, gp) in self.backward_rule(Var(i), &op, g, &relevant) {
                grads[p.0] = Some(match grads[p.0] {
                    None => gp,
                    Some(acc) => self.add(acc, gp),
                });
            }
        }
        self.recording.set(prev);

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(&self.shape(*w))),
            })
            .collect()
    }

    fn backward_rule(&self, out: Var, op: &Op<T>, g: Var, relevant: &[bool]) -> Vec<(Var, Var)> {
        use Op::*;
        let want = |v: &Var| relevant[v.0];
        let mut res = Vec::with_capacity(2);
        match op {
            Leaf => {}
            Add(a, b) => {
                if want(a) {
                    res.push((*a, g));
                }
                if want(b) {
                    res.push((*b, g));
                }
            }
            Sub(a, b) => {
                if want(a) {
                    res.push((*a, g));
                }
                if want(b) {
                    res.push((*b, self.scale(g, -T::one())));
                }
            }
            Mul(a, b) => {
                if want(a) {
                    res.push((*a, self.mul(g, *b)));
                }
                if want(b) {
                    res.push((*b, self.mul(g, *a)));
                }
            }
            Scale(a, s) => res.push((*a, self.scale(g, *s))),
            AddScalar(a) => res.push((*a, g)),
            MulConst(a, m) => res.push((*a, self.mul_const(g, Rc::clone(m)))),
            Pow(a, p) => {
                let d = self.pow(*a, *p - T::one());
                let d = self.scale(d, *p);
                res.push((*a, self.mul(g, d)));
            }
            Tanh(a) => {
                // d tanh = 1 - y^2, with y the node's own output.
                let y2 = self.square(out);
                let d = self.add_scalar(self.scale(y2, -T::one()), T::one());
                res.push((*a, self.mul(g, d)));
            }
            MatMul { a, b, ta, tb } => {
                if want(a) {
                    let ga = if *ta {
                        self.matmul(*b, g, *tb, true)
                    } else {
                        self.matmul(g, *b, false, !*tb)
                    };
                    res.push((*a, ga));
                }
                if want(b) {
                    let gb = if *tb {
                        self.matmul(g, *a, true, *ta)
                    } else {
                        self.matmul(*a, g, !*ta, false)
                    };
                    res.push((*b, gb));
                }
            }
            AddChan(x, b) => {
                if want(x) {
                    res.push((*x, g));
                }
                if want(b) {
                    res.push((*b, self.sum_chan(g)));
                }
            }
            BroadcastChan(b) => res.push((*b, self.sum_chan(g))),
            SumChan(x) => {
                let shape = self.shape(*x);
                res.push((*x, self.broadcast_chan(g, &shape)));
            }
            Conv { x, w, geom } => {
                if want(x) {
                    res.push((*x, self.conv_input_grad(g, *w, *geom)));
                }
                if want(w) {
                    res.push((*w, self.conv_weight_grad(*x, g, *geom)));
                }
            }
            ConvInputGrad { gy, w, geom } => {
                if want(gy) {
                    res.push((*gy, self.conv2d(g, *w, *geom)));
                }
                if want(w) {
                    res.push((*w, self.conv_weight_grad(g, *gy, *geom)));
                }
            }
            ConvWeightGrad { x, gy, geom } => {
                if want(x) {
                    res.push((*x, self.conv_input_grad(*gy, g, *geom)));
                }
                if want(gy) {
                    res.push((*gy, self.conv2d(*x, g, *geom)));
                }
            }
            Upsample2x(x) => res.push((*x, self.downsample2x_sum(g))),
            Downsample2xSum(x) => res.push((*x, self.upsample2x(g))),
            SumLast(x) => {
                let shape = self.shape(*x);
                res.push((*x, self.expand_last(g, &shape)));
            }
            ExpandLast(x) => {
                let k = self.shape(out).len() - self.shape(*x).len();
                res.push((*x, self.sum_last(g, k)));
            }
            Reshape(x) => {
                let shape = self.shape(*x);
                res.push((*x, self.reshape(g, &shape)));
            }
            SumAll(x) => {
                let shape = self.shape(*x);
                res.push((*x, self.expand_scalar(g, &shape)));
            }
            ExpandScalar(x) => {
                let s = self.sum_all(g);
                let shape = self.shape(*x);
                res.push((*x, self.reshape(s, &shape)));
            }
        }
        res.retain(|(p, _)| want(p));
        res
    }
}
