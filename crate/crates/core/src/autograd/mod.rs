//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Define-by-run: every op builds a node holding clones of its parent
//! tensors plus whatever forward buffers its backward pass needs.
//! `Tensor::backward` walks the graph in reverse topological order and
//! accumulates gradients into every tensor it passes through, so callers
//! can read gradients of intermediates (attention maps need this), not
//! just leaves.
//!
//! Generic over the element type: 64-bit for finite-difference checks,
//! 32-bit for training. No fusion, no in-place graph tricks, no implicit
//! broadcasting — correctness and testability first; desk scale keeps
//! this affordable. A graph instance is confined to one thread.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod conv;
pub mod gradcheck;
pub mod norm;
pub mod optim;
pub mod pool;

pub use conv::conv3d;
pub use norm::{batchnorm3d, BatchNormState};
pub use optim::{AdamState, PlateauScheduler};
pub use pool::{global_max_pool, maxpool3d};

/// Element type of a tensor: the two float widths with a GEMM kernel.
pub trait Scalar:
    Copy + PartialOrd + fmt::Debug + Send + Sync + 'static + num_traits::Float
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Row-major C[m,n] = alpha * A[m,k] B[k,n] + beta * C.
    fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[Self], b: &[Self], beta: f64, c: &mut [Self]);
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f32], b: &[f32], beta: f64, c: &mut [f32]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m, k, n,
                alpha as f32,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta as f32,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m, k, n,
                alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

/// Backward pass of one op: reads the node's output gradient and
/// accumulates into its parents.
pub(crate) trait Backward<S: Scalar> {
    fn backward(&self, grad_out: &[S]);
}

pub(crate) struct Node<S: Scalar> {
    /// Parents in a fixed order; drives the deterministic graph walk.
    pub parents: Vec<Tensor<S>>,
    pub op: Box<dyn Backward<S>>,
}

pub(crate) struct Inner<S: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    node: Option<Node<S>>,
}

/// A shared dense tensor. Cloning is cheap (reference count); parameter
/// tensors are mutated in place by the optimizer between graph builds.
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::raw(shape, data, None))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::raw(shape, vec![S::zero(); len], None)
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let len = shape.iter().product();
        Self::raw(shape, vec![value; len], None)
    }

    pub fn scalar(value: S) -> Self {
        Self::raw(vec![1], vec![value], None)
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<S>, node: Option<Node<S>>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<S>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> std::cell::RefMut<'_, Vec<S>> {
        self.inner.data.borrow_mut()
    }

    /// Current gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn item(&self) -> S {
        debug_assert_eq!(self.len(), 1);
        self.inner.data.borrow()[0]
    }

    pub(crate) fn accumulate_grad(&self, delta: &[S]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, &di) in g.iter_mut().zip(delta) {
                    *gi = *gi + di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// tensor the graph touches (leaves and intermediates alike).
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        let order = self.topo_order();
        self.accumulate_grad(&[S::one()]);
        for t in order.iter().rev() {
            if let Some(node) = &t.inner.node {
                let grad = t
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .unwrap_or_else(|| vec![S::zero(); t.len()]);
                node.op.backward(&grad);
            }
        }
        Ok(())
    }

    /// Post-order DFS over parents; the fixed parent order makes both the
    /// walk and all float accumulation deterministic.
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Inner<S>> = HashSet::new();
        let mut stack: Vec<(Tensor<S>, usize)> = vec![(self.clone(), 0)];
        seen.insert(Rc::as_ptr(&self.inner));
        while let Some((t, child)) = stack.pop() {
            let parents = t.inner.node.as_ref().map(|n| n.parents.as_slice());
            let next = parents.and_then(|p| {
                p.iter()
                    .enumerate()
                    .skip(child)
                    .find(|(_, q)| !seen.contains(&Rc::as_ptr(&q.inner)))
            });
            match next {
                Some((i, q)) => {
                    let q = q.clone();
                    seen.insert(Rc::as_ptr(&q.inner));
                    stack.push((t, i + 1));
                    stack.push((q, 0));
                }
                None => order.push(t),
            }
        }
        order
    }
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Elementwise and affine ops.

struct AddBackward<S: Scalar> {
    a: Tensor<S>,
    b: Tensor<S>,
}

impl<S: Scalar> Backward<S> for AddBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        self.a.accumulate_grad(grad_out);
        self.b.accumulate_grad(grad_out);
    }
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(a, b, "add")?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + y)
        .collect();
    Ok(Tensor::raw(
        a.shape().to_vec(),
        data,
        Some(Node {
            parents: vec![a.clone(), b.clone()],
            op: Box::new(AddBackward {
                a: a.clone(),
                b: b.clone(),
            }),
        }),
    ))
}

struct ScaleBackward<S: Scalar> {
    x: Tensor<S>,
    c: S,
}

impl<S: Scalar> Backward<S> for ScaleBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let delta: Vec<S> = grad_out.iter().map(|&g| g * self.c).collect();
        self.x.accumulate_grad(&delta);
    }
}

pub fn scale<S: Scalar>(x: &Tensor<S>, c: S) -> Tensor<S> {
    let data = x.data().iter().map(|&v| v * c).collect();
    Tensor::raw(
        x.shape().to_vec(),
        data,
        Some(Node {
            parents: vec![x.clone()],
            op: Box::new(ScaleBackward { x: x.clone(), c }),
        }),
    )
}

struct ReluBackward<S: Scalar> {
    x: Tensor<S>,
}

impl<S: Scalar> Backward<S> for ReluBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let x = self.x.data();
        let delta: Vec<S> = grad_out
            .iter()
            .zip(x.iter())
            .map(|(&g, &v)| if v > S::zero() { g } else { S::zero() })
            .collect();
        drop(x);
        self.x.accumulate_grad(&delta);
    }
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > S::zero() { v } else { S::zero() })
        .collect();
    Tensor::raw(
        x.shape().to_vec(),
        data,
        Some(Node {
            parents: vec![x.clone()],
            op: Box::new(ReluBackward { x: x.clone() }),
        }),
    )
}

struct LinearBackward<S: Scalar> {
    x: Tensor<S>,
    w: Tensor<S>,
    b: Tensor<S>,
    n: usize,
    f: usize,
    o: usize,
}

impl<S: Scalar> Backward<S> for LinearBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let (n, f, o) = (self.n, self.f, self.o);
        // dX[n,f] = dY[n,o] · W[o,f]
        let mut dx = vec![S::zero(); n * f];
        S::gemm(n, o, f, 1.0, grad_out, &self.w.data(), 0.0, &mut dx);
        self.x.accumulate_grad(&dx);
        // dW[o,f] = dY^T[o,n] · X[n,f]
        let mut dyt = vec![S::zero(); o * n];
        for i in 0..n {
            for j in 0..o {
                dyt[j * n + i] = grad_out[i * o + j];
            }
        }
        let mut dw = vec![S::zero(); o * f];
        S::gemm(o, n, f, 1.0, &dyt, &self.x.data(), 0.0, &mut dw);
        self.w.accumulate_grad(&dw);
        // dB[o] = column sums of dY.
        let mut db = vec![S::zero(); o];
        for i in 0..n {
            for j in 0..o {
                db[j] = db[j] + grad_out[i * o + j];
            }
        }
        self.b.accumulate_grad(&db);
    }
}

/// Fully connected layer: x[N,F] · w[O,F]^T + b[O] -> [N,O].
pub fn linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::ShapeMismatch(format!(
            "linear: input {xs:?} vs weight {ws:?}"
        )));
    }
    if b.shape() != [ws[0]] {
        return Err(Error::ShapeMismatch(format!(
            "linear: bias {:?} vs weight {ws:?}",
            b.shape()
        )));
    }
    let (n, f, o) = (xs[0], xs[1], ws[0]);
    // Y[n,o] = X[n,f] · W^T[f,o]; transpose W explicitly (row-major GEMM).
    let wt = {
        let w = w.data();
        let mut wt = vec![S::zero(); f * o];
        for r in 0..o {
            for c in 0..f {
                wt[c * o + r] = w[r * f + c];
            }
        }
        wt
    };
    let mut y = vec![S::zero(); n * o];
    S::gemm(n, f, o, 1.0, &x.data(), &wt, 0.0, &mut y);
    {
        let b = b.data();
        for i in 0..n {
            for j in 0..o {
                y[i * o + j] = y[i * o + j] + b[j];
            }
        }
    }
    Ok(Tensor::raw(
        vec![n, o],
        y,
        Some(Node {
            parents: vec![x.clone(), w.clone(), b.clone()],
            op: Box::new(LinearBackward {
                x: x.clone(),
                w: w.clone(),
                b: b.clone(),
                n,
                f,
                o,
            }),
        }),
    ))
}

// ---------------------------------------------------------------------
// Losses: mean-reduced, target is a constant.

struct MseBackward<S: Scalar> {
    pred: Tensor<S>,
    target: Vec<S>,
}

impl<S: Scalar> Backward<S> for MseBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let n = S::from_f64(self.target.len() as f64);
        let two = S::from_f64(2.0);
        let p = self.pred.data();
        let delta: Vec<S> = p
            .iter()
            .zip(&self.target)
            .map(|(&pi, &ti)| grad_out[0] * two * (pi - ti) / n)
            .collect();
        drop(p);
        self.pred.accumulate_grad(&delta);
    }
}

/// Mean squared error over all elements.
pub fn mse_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(pred, target, "mse_loss")?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mse_loss on empty input".into()));
    }
    let t = target.data().clone();
    let mut sum = S::zero();
    for (&pi, &ti) in pred.data().iter().zip(&t) {
        let d = pi - ti;
        sum = sum + d * d;
    }
    let mean = sum / S::from_f64(t.len() as f64);
    Ok(Tensor::raw(
        vec![1],
        vec![mean],
        Some(Node {
            parents: vec![pred.clone()],
            op: Box::new(MseBackward {
                pred: pred.clone(),
                target: t,
            }),
        }),
    ))
}

struct SmoothL1Backward<S: Scalar> {
    pred: Tensor<S>,
    target: Vec<S>,
}

impl<S: Scalar> Backward<S> for SmoothL1Backward<S> {
    fn backward(&self, grad_out: &[S]) {
        let n = S::from_f64(self.target.len() as f64);
        let p = self.pred.data();
        let delta: Vec<S> = p
            .iter()
            .zip(&self.target)
            .map(|(&pi, &ti)| {
                let d = pi - ti;
                let g = if d.abs() < S::one() {
                    d
                } else if d > S::zero() {
                    S::one()
                } else {
                    -S::one()
                };
                grad_out[0] * g / n
            })
            .collect();
        drop(p);
        self.pred.accumulate_grad(&delta);
    }
}

/// Smooth-L1 (Huber at delta 1): 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
pub fn smooth_l1_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(pred, target, "smooth_l1_loss")?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument(
            "smooth_l1_loss on empty input".into(),
        ));
    }
    let t = target.data().clone();
    let half = S::from_f64(0.5);
    let mut sum = S::zero();
    for (&pi, &ti) in pred.data().iter().zip(&t) {
        let d = (pi - ti).abs();
        sum = sum + if d < S::one() { half * d * d } else { d - half };
    }
    let mean = sum / S::from_f64(t.len() as f64);
    Ok(Tensor::raw(
        vec![1],
        vec![mean],
        Some(Node {
            parents: vec![pred.clone()],
            op: Box::new(SmoothL1Backward {
                pred: pred.clone(),
                target: t,
            }),
        }),
    ))
}
