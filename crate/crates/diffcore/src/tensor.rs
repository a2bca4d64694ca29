use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::conv::ConvGeom;
use crate::error::{Error, Result};
use crate::shape::LinMap;
use crate::Elem;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operation on the graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

pub(crate) fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Recorded operation: kind plus the inputs needed to run its backward rule.
pub(crate) enum Op<T: Elem> {
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Div(Tensor<T>, Tensor<T>),
    Affine(Tensor<T>, T),
    Exp(Tensor<T>),
    Log(Tensor<T>),
    Tanh(Tensor<T>),
    Powf(Tensor<T>, T),
    Sqrt(Tensor<T>),
    RecipOrZero(Tensor<T>),
    Abs(Tensor<T>),
    Relu(Tensor<T>),
    LeakyRelu(Tensor<T>, T),
    Linear(Tensor<T>, LinMap),
    MatMul(Tensor<T>, Tensor<T>),
    Concat(Vec<Tensor<T>>, usize),
    Conv(Tensor<T>, Tensor<T>, ConvGeom),
    ConvInputGrad(Tensor<T>, Tensor<T>, ConvGeom),
    ConvWeightGrad(Tensor<T>, Tensor<T>, ConvGeom),
    CrossEntropy(Tensor<T>, Rc<Vec<T>>),
}

impl<T: Elem> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::Conv(a, b, _)
            | Op::ConvInputGrad(a, b, _)
            | Op::ConvWeightGrad(a, b, _) => vec![a, b],
            Op::Affine(x, _)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Tanh(x)
            | Op::Powf(x, _)
            | Op::Sqrt(x)
            | Op::RecipOrZero(x)
            | Op::Abs(x)
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Linear(x, _)
            | Op::CrossEntropy(x, _) => vec![x],
            Op::Concat(xs, _) => xs.iter().collect(),
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine(..) => "affine",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Powf(..) => "powf",
            Op::Sqrt(..) => "sqrt",
            Op::RecipOrZero(..) => "recip",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Linear(_, m) => m.name(),
            Op::MatMul(..) => "matmul",
            Op::Concat(..) => "concat",
            Op::Conv(..) => "conv2d",
            Op::ConvInputGrad(..) => "conv_transpose2d",
            Op::ConvWeightGrad(..) => "conv2d_weight_grad",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }
}

pub(crate) struct Node<T: Elem> {
    pub(crate) id: usize,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<T>>,
    pub(crate) op: Option<Op<T>>,
    pub(crate) requires_grad: bool,
}

/// Dense row-major tensor, optionally attached to the computation graph.
///
/// Cloning is cheap: the element buffer and graph node are shared.
pub struct Tensor<T: Elem>(pub(crate) Rc<Node<T>>);

impl<T: Elem> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Elem> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("op", &self.0.op.as_ref().map(|o| o.name()))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn check_finite<T: Elem>(op: &'static str, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

impl<T: Elem> Tensor<T> {
    fn make(data: Vec<T>, shape: Vec<usize>, op: Option<Op<T>>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Rc::new(data),
            op,
            requires_grad,
        }))
    }

    /// Constant tensor outside the graph.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument {
                op: "from_vec",
                msg: format!("{} elements for shape {:?}", data.len(), shape),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Self::make(data, shape.to_vec(), None, false))
    }

    /// Leaf variable whose gradient is tracked.
    pub fn var(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(t.as_var())
    }

    pub fn scalar(v: T) -> Self {
        Self::make(vec![v], vec![], None, false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self::make(vec![v; n], shape.to_vec(), None, false)
    }

    /// Result of an operation; records `op` only when gradients are being tracked.
    pub(crate) fn from_op(
        name: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        op: Op<T>,
    ) -> Result<Self> {
        check_finite(name, &data)?;
        let track = grad_enabled() && op.inputs().iter().any(|t| t.tracks_grad());
        Ok(Self::make(data, shape, track.then_some(op), false))
    }

    /// Same values, fresh leaf variable (new graph identity).
    pub fn as_var(&self) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: self.0.shape.clone(),
            data: Rc::clone(&self.0.data),
            op: None,
            requires_grad: true,
        }))
    }

    /// Same values, detached from any graph.
    pub fn detach(&self) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: self.0.shape.clone(),
            data: Rc::clone(&self.0.data),
            op: None,
            requires_grad: false,
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(Error::InvalidArgument {
                op: "dims4",
                msg: format!("expected a 4-d tensor, got {s:?}"),
            }),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::InvalidArgument {
                op: "dims2",
                msg: format!("expected a 2-d tensor, got {s:?}"),
            }),
        }
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        Ok(self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True for tracked leaves and for any node with a recorded op.
    pub fn tracks_grad(&self) -> bool {
        self.0.requires_grad || self.0.op.is_some()
    }

    pub(crate) fn op(&self) -> Option<&Op<T>> {
        self.0.op.as_ref()
    }

    /// Converts between element types; the result is a constant.
    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64(v.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero))
            .collect();
        Tensor::make(data, self.shape().to_vec(), None, false)
    }
}
