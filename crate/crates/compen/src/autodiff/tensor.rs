use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

/// Element type of a tensor. Implemented for `f32` (training) and `f64`
/// (gradient checks).
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maxs(self, other: Self) -> Self;
    fn mins(self, other: Self) -> Self;
    fn floor(self) -> Self;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f32(self) -> f32 {
                self as f32
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn maxs(self, other: Self) -> Self {
                self.max(other)
            }
            #[inline(always)]
            fn mins(self, other: Self) -> Self {
                self.min(other)
            }
            #[inline(always)]
            fn floor(self) -> Self {
                self.floor()
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                <$t>::mul_add(self, a, b)
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// RAII guard that disables graph recording on the current thread.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|f| f.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|f| f.set(self.prev));
    }
}

/// Run `f` with graph recording disabled.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = NoGradGuard::new();
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|f| f.get())
}

type BackwardFn<E> = Box<dyn Fn(&[E], &[Tensor<E>], &mut GradSink<E>)>;

/// Per-backward-call gradient router. Leaves accumulate into their
/// persistent buffers; interior nodes use transient per-call storage so
/// repeated backward calls double leaf gradients exactly.
pub(crate) struct GradSink<E: Scalar> {
    transient: HashMap<u64, Vec<E>>,
}

impl<E: Scalar> GradSink<E> {
    fn new() -> Self {
        GradSink {
            transient: HashMap::new(),
        }
    }

    pub(crate) fn add(&mut self, t: &Tensor<E>, g: &[E]) {
        if !t.requires_grad() {
            return;
        }
        if t.is_leaf() {
            t.accumulate_grad(g);
        } else {
            match self.transient.entry(t.id()) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    for (b, a) in e.get_mut().iter_mut().zip(g.iter()) {
                        *b += *a;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(g.to_vec());
                }
            }
        }
    }
}

pub(crate) struct Inner<E: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    parents: Vec<Tensor<E>>,
    backward: Option<BackwardFn<E>>,
}

/// Dense N-dimensional array with optional gradient tracking.
///
/// Cloning is cheap (reference-counted handle). The computation graph is
/// recorded implicitly by the ops as long as some input requires a
/// gradient and recording is enabled.
pub struct Tensor<E: Scalar> {
    inner: Rc<Inner<E>>,
}

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Leaf tensor that participates in autodiff.
    pub fn leaf(shape: &[usize], data: Vec<E>) -> Self {
        Tensor::new(shape, data).set_requires_grad()
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape, vec![E::ZERO; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Tensor::new(shape, vec![value; shape.iter().product()])
    }

    pub fn scalar(value: E) -> Self {
        Tensor::new(&[1], vec![value])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: track,
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
            }),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Marks this tensor as a differentiable leaf. Only valid on tensors
    /// that are not already part of a graph.
    pub fn set_requires_grad(self) -> Self {
        assert!(
            self.inner.backward.is_none(),
            "set_requires_grad on a non-leaf tensor"
        );
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: RefCell::new(self.inner.data.borrow().clone()),
                grad: RefCell::new(None),
                requires_grad: true,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.backward.is_none()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Copy of the raw values.
    pub fn values(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    pub fn value_at(&self, idx: usize) -> E {
        self.inner.data.borrow()[idx]
    }

    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    /// Borrow data for reading; used by op kernels.
    pub(crate) fn data(&self) -> std::cell::Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    /// Overwrite values in place (optimizer updates on leaves).
    pub fn set_values(&self, values: &[E]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), values.len());
        d.copy_from_slice(values);
    }

    pub fn update_values(&self, f: impl FnMut(&mut [E])) {
        let mut d = self.inner.data.borrow_mut();
        let mut f = f;
        f(&mut d[..]);
    }

    /// Copy of the gradient, if populated.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, add: &[E]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, a) in buf.iter_mut().zip(add.iter()) {
                    *b += *a;
                }
            }
            None => {
                *g = Some(add.to_vec());
            }
        }
    }

    /// Detached copy that shares no graph history.
    pub fn detach(&self) -> Tensor<E> {
        Tensor::new(&self.inner.shape, self.inner.data.borrow().clone())
    }

    /// Converts between element types (used to build f64 graphs from f32
    /// weights for gradient checks).
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        let data = self
            .inner
            .data
            .borrow()
            .iter()
            .map(|v| F::from_f64(v.to_f64()))
            .collect();
        Tensor::new(&self.inner.shape, data)
    }
}

/// Runs reverse-mode accumulation from a scalar loss. Gradients are added
/// into every reachable tensor that requires one; repeated calls accumulate
/// until `zero_grad` is invoked.
pub fn backward<E: Scalar>(loss: &Tensor<E>) {
    assert_eq!(
        loss.numel(),
        1,
        "backward requires a scalar loss, got shape {:?}",
        loss.shape()
    );
    if !loss.requires_grad() {
        return;
    }
    // Post-order DFS for a topological ordering.
    let mut order: Vec<Tensor<E>> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor<E>, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id());
    while let Some((node, child)) = stack.pop() {
        if child < node.inner.parents.len() {
            stack.push((node.clone(), child + 1));
            let parent = node.inner.parents[child].clone();
            if parent.requires_grad() && visited.insert(parent.id()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut sink = GradSink::new();
    sink.add(loss, &[E::ONE]);
    for node in order.iter().rev() {
        if node.is_leaf() {
            continue;
        }
        let Some(g) = sink.transient.remove(&node.id()) else {
            continue;
        };
        if let Some(bw) = &node.inner.backward {
            bw(&g, &node.inner.parents, &mut sink);
        }
        // Expose the last-call gradient on interior nodes too.
        *node.inner.grad.borrow_mut() = Some(g);
    }
}

impl<E: Scalar> Tensor<E> {
    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }
}
