"""
Reverse-mode automatic differentiation over dense float64 numpy arrays.

This module provides:
- Tensor, a value type holding a numpy array plus gradient bookkeeping
- Function, the base class every differentiable primitive derives from
- ComputationTape, the topologically ordered record replayed by backward()
- Finite-difference helpers used to verify analytic gradients
"""

import contextlib
import logging
import threading

import numpy as np

from uck.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_state = threading.local()


def is_grad_enabled():
    """Return True when new operations are recorded for differentiation."""
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """Disable recording for the current thread (evaluation forward passes)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _check_finite(array, where):
    if not np.all(np.isfinite(array)):
        raise NumericalError(f'{where} produced non-finite values')


# ==================== FUNCTION BASE ====================

class Function:
    """
    Base class for differentiable operations.

    Subclasses implement forward() over raw arrays and backward(), which maps
    the gradient of the output to one gradient (or None) per input tensor.
    """

    def __init__(self, *inputs):
        self.inputs = inputs

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError(f'{type(self).__name__}.forward')

    def backward(self, grad):
        raise NotImplementedError(f'{type(self).__name__}.backward')

    @classmethod
    def apply(cls, *tensors, **kwargs):
        """
        Run the forward pass and wrap the result in a Tensor linked to this op.

        Args:
            *tensors: Input tensors.
            **kwargs: Non-differentiable options forwarded to forward().

        Returns:
            Tensor: The output, recorded on the tape when any input requires grad.

        Raises:
            NumericalError: If the output contains NaN or Inf.
        """
        func = cls(*tensors)
        out = np.asarray(func.forward(*(t.data for t in tensors), **kwargs), dtype=DTYPE)
        _check_finite(out, cls.__name__)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _op=func if requires_grad else None, _trusted=True)

    @staticmethod
    def unbroadcast(grad, shape):
        """Sum out broadcast dimensions so that grad matches shape."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


def _broadcast_shape(a, b, op_name):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f'{op_name}: shapes {a} and {b} are not compatible') from None


# ==================== TENSOR ====================

class Tensor:
    """
    Dense float64 array with optional gradient tracking.

    Attributes:
        data: Row-major numpy array, always finite.
        requires_grad: Whether backward() should produce a gradient for this tensor.
        grad: Accumulated gradient with the same shape as data, or None.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _op=None, name=None, _trusted=False):
        if not _trusted:
            self.data = np.array(data, dtype=DTYPE)
            _check_finite(self.data, 'Tensor construction')
        else:
            self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._op is None

    @property
    def T(self):
        return self.transpose()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data.item())

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self, accumulate=True):
        return backward(self, accumulate=accumulate)

    def __repr__(self):
        label = f', name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})'

    # Operators
    def __add__(self, other):
        return Add.apply(self, as_tensor(other))

    def __radd__(self, other):
        return Add.apply(as_tensor(other), self)

    def __sub__(self, other):
        return Add.apply(self, Mul.apply(as_tensor(other), as_tensor(-1.0)))

    def __rsub__(self, other):
        return Add.apply(as_tensor(other), Mul.apply(self, as_tensor(-1.0)))

    def __mul__(self, other):
        return Mul.apply(self, as_tensor(other))

    def __rmul__(self, other):
        return Mul.apply(as_tensor(other), self)

    def __neg__(self):
        return Mul.apply(self, as_tensor(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError('division is only supported by a scalar constant')
        return Mul.apply(self, as_tensor(1.0 / float(other)))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, idx):
        return GetItem.apply(self, idx=idx)

    # Methods
    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, axes=None):
        return Transpose.apply(self, axes=axes)

    def broadcast_to(self, shape):
        return BroadcastTo.apply(self, shape=tuple(shape))

    def tanh(self):
        return Tanh.apply(self)

    def relu(self):
        return Relu.apply(self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)


def as_tensor(value):
    """Wrap a constant as a non-differentiable Tensor; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


# ==================== ELEMENTWISE ====================

class Add(Function):
    def forward(self, x, y):
        _broadcast_shape(x.shape, y.shape, 'add')
        self.x_shape, self.y_shape = x.shape, y.shape
        return x + y

    def backward(self, grad):
        return (Function.unbroadcast(grad, self.x_shape),
                Function.unbroadcast(grad, self.y_shape))


class Mul(Function):
    def forward(self, x, y):
        _broadcast_shape(x.shape, y.shape, 'multiply')
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return (Function.unbroadcast(grad * self.y, self.x.shape),
                Function.unbroadcast(grad * self.x, self.y.shape))


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return grad * (1.0 - self.out ** 2)


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return np.where(self.mask, grad, 0.0)


class Clamp(Function):
    """Elementwise clamp; gradient passes only strictly inside (lo, hi)."""

    def forward(self, x, lo, hi):
        self.inside = (x > lo) & (x < hi)
        return np.minimum(np.maximum(x, lo), hi)

    def backward(self, grad):
        return np.where(self.inside, grad, 0.0)


# ==================== LINEAR ALGEBRA ====================

class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f'matmul expects 2-D operands, got {a.shape} and {b.shape}')
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f'matmul inner extents differ: {a.shape} @ {b.shape}')
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class LayerNormFunction(Function):
    """Per-row normalisation over the last axis followed by the affine map."""

    def forward(self, x, gamma, beta, eps):
        d = x.shape[-1]
        if gamma.shape != (d,) or beta.shape != (d,):
            raise ShapeError(f'layer_norm: last extent {d} does not match gamma {gamma.shape} / beta {beta.shape}')
        mu = x.mean(axis=-1, keepdims=True)
        centred = x - mu
        var = (centred ** 2).mean(axis=-1, keepdims=True)
        with np.errstate(divide='ignore', invalid='ignore'):
            self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = centred * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad):
        d = self.xhat.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        dgamma = (grad * self.xhat).sum(axis=lead)
        dbeta = grad.sum(axis=lead)
        dxhat = grad * self.gamma
        dx = (self.inv_std / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta


# ==================== REDUCTIONS & SHAPE ====================

def _normalise_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.x_shape = x.shape
        self.axes = _normalise_axis(axis, x.ndim)
        self.keepdims = keepdims
        return x.sum(axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return np.broadcast_to(grad, self.x_shape).copy()


class Mean(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.x_shape = x.shape
        self.axes = _normalise_axis(axis, x.ndim)
        self.keepdims = keepdims
        self.count = int(np.prod([x.shape[a] for a in self.axes])) if self.axes else 1
        if self.count == 0:
            raise ShapeError('mean over an empty axis')
        return x.mean(axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return np.broadcast_to(grad / self.count, self.x_shape).copy()


class Reshape(Function):
    def forward(self, x, shape):
        self.x_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f'cannot reshape {x.shape} to {shape}') from None

    def backward(self, grad):
        return grad.reshape(self.x_shape)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad):
        if self.axes is None:
            return np.transpose(grad)
        return np.transpose(grad, np.argsort(self.axes))


class BroadcastTo(Function):
    def forward(self, x, shape):
        _broadcast_shape(x.shape, shape, 'broadcast_to')
        self.x_shape = x.shape
        return np.broadcast_to(x, shape).copy()

    def backward(self, grad):
        return Function.unbroadcast(grad, self.x_shape)


class GetItem(Function):
    """Basic or integer-array indexing; backward scatters with np.add.at."""

    def forward(self, x, idx):
        self.x_shape = x.shape
        self.idx = idx
        try:
            return np.array(x[idx], dtype=DTYPE)
        except IndexError as e:
            raise ShapeError(f'index out of range: {e}') from None

    def backward(self, grad):
        out = np.zeros(self.x_shape, dtype=DTYPE)
        np.add.at(out, self.idx, grad)
        return out


class Concat(Function):
    def forward(self, *arrays, axis=0):
        ndim = arrays[0].ndim
        axis = axis % ndim
        for a in arrays[1:]:
            if a.ndim != ndim or any(a.shape[i] != arrays[0].shape[i] for i in range(ndim) if i != axis):
                raise ShapeError(f'concat: incompatible shapes {[arr.shape for arr in arrays]} along axis {axis}')
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


# ==================== PUBLIC OPERATIONS ====================

def matmul(a, b):
    """Matrix product of two 2-D tensors; raises ShapeError on mismatch."""
    return MatMul.apply(as_tensor(a), as_tensor(b))


def add(a, b):
    return Add.apply(as_tensor(a), as_tensor(b))


def multiply(a, b):
    return Mul.apply(as_tensor(a), as_tensor(b))


def scale(x, factor):
    """Multiply by a constant scalar."""
    return Mul.apply(as_tensor(x), as_tensor(float(factor)))


def tanh(x):
    return Tanh.apply(as_tensor(x))


def relu(x):
    return Relu.apply(as_tensor(x))


def mean(x, axis=None, keepdims=False):
    return Mean.apply(as_tensor(x), axis=axis, keepdims=keepdims)


def concat(tensors, axis=0):
    """Concatenate tensors along an existing axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError('concat needs at least one tensor')
    return Concat.apply(*tensors, axis=axis)


def clamp(x, lo, hi):
    """
    Elementwise min(max(x, lo), hi).

    The gradient is the piecewise derivative: one strictly inside the bounds,
    zero on or outside them.

    Raises:
        ValueError: If lo > hi.
    """
    if lo > hi:
        raise ValueError(f'clamp bounds reversed: lo={lo} > hi={hi}')
    return Clamp.apply(as_tensor(x), lo=float(lo), hi=float(hi))


def layer_norm(x, gamma, beta, eps=1e-5):
    """
    Normalise each row over the last axis to zero mean / unit variance, then
    apply gamma and beta.

    Args:
        x: Tensor with trailing extent d.
        gamma: Scale, shape (d,).
        beta: Shift, shape (d,).
        eps: Variance floor.

    Returns:
        Tensor: Same shape as x.
    """
    return LayerNormFunction.apply(as_tensor(x), as_tensor(gamma), as_tensor(beta), eps=float(eps))


# ==================== TAPE & BACKWARD ====================

class ComputationTape:
    """
    Topologically ordered list of the tensors leading to one output.

    Every tensor appears after all of its inputs. Replaying the tape does not
    consume it, so repeated runs return bitwise-identical gradients.
    """

    def __init__(self, output, nodes):
        self.output = output
        self.nodes = nodes

    @classmethod
    def record(cls, output):
        """Build the tape for output by iterative post-order traversal."""
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._op is not None:
                for parent in reversed(node._op.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(output, order)

    def __len__(self):
        return len(self.nodes)

    def run(self, seed=None):
        """
        Propagate gradients from the output back to every recorded leaf.

        Args:
            seed: Gradient of the output; defaults to ones.

        Returns:
            dict: Leaf tensor -> gradient array, for reachable requires_grad leaves only.
        """
        grads = {id(self.output): np.ones_like(self.output.data) if seed is None
                 else np.asarray(seed, dtype=DTYPE)}
        for node in reversed(self.nodes):
            grad = grads.get(id(node))
            if grad is None or node._op is None:
                continue
            input_grads = node._op.backward(grad)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for parent, parent_grad in zip(node._op.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
        return {node: grads[id(node)] for node in self.nodes
                if node._op is None and id(node) in grads}


def backward(loss, accumulate=True):
    """
    Reverse-mode differentiation of a scalar loss.

    Args:
        loss: Scalar (single-element) tensor.
        accumulate: Also add each gradient into the leaf's .grad attribute.

    Returns:
        dict: Leaf tensor -> d loss / d leaf. Leaves that do not reach the loss
        are absent from the map.

    Raises:
        ShapeError: If loss has more than one element.
    """
    if loss.size != 1:
        raise ShapeError(f'backward() needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        return {}
    grads = ComputationTape.record(loss).run()
    if accumulate:
        for leaf, grad in grads.items():
            leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad
    return grads


# ==================== GRADIENT CHECKING ====================

def numerical_gradient(f, x, eps=1e-6):
    """
    Central finite-difference gradient of a scalar function.

    Args:
        f: Callable taking an array shaped like x and returning a float.
        x: Point of evaluation (not modified).
        eps: Step size.

    Returns:
        np.ndarray: Estimated gradient, same shape as x.
    """
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        upper = f(x)
        flat[i] = original - eps
        lower = f(x)
        flat[i] = original
        grad_flat[i] = (upper - lower) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor=1e-12):
    """Norm-based relative error ||a - n|| / max(||a||, ||n||, floor)."""
    analytic = np.asarray(analytic, dtype=DTYPE)
    numeric = np.asarray(numeric, dtype=DTYPE)
    scale_ = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale_)


def _gradient_pairs(f, inputs, eps):
    analytic = backward(f(*inputs), accumulate=False)
    pairs = []
    for tensor in inputs:
        def scalar(values, tensor=tensor):
            saved = tensor.data
            tensor.data = values
            try:
                with no_grad():
                    return f(*inputs).item()
            finally:
                tensor.data = saved
        numeric = numerical_gradient(scalar, tensor.data, eps=eps)
        pairs.append((analytic.get(tensor, np.zeros_like(tensor.data)), numeric))
    return pairs


def gradient_errors(f, inputs, eps=1e-6):
    """
    Compare analytic and central-difference gradients for each input tensor.

    Args:
        f: Callable mapping the input tensors to a scalar Tensor.
        inputs: Leaf tensors with requires_grad=True; their data is perturbed
            in place and restored.
        eps: Finite-difference step.

    Returns:
        list[float]: Relative error per input.
    """
    return [relative_error(a, n) for a, n in _gradient_pairs(f, inputs, eps)]


def gradcheck(f, inputs, eps=1e-6, rtol=1e-5, atol=0.0):
    """
    Return True when, for every input, ||analytic - numeric|| is within
    atol + rtol * max(||analytic||, ||numeric||).
    """
    failures = []
    for index, (analytic, numeric) in enumerate(_gradient_pairs(f, inputs, eps)):
        diff = np.linalg.norm(analytic - numeric)
        bound = atol + rtol * max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        if diff > bound:
            failures.append((index, relative_error(analytic, numeric)))
    if failures:
        logger.warning(f'gradcheck failed for inputs (index, relative error): {failures}')
        return False
    return True
