"""Dense float64 arrays with tape-based reverse-mode differentiation.

Arrays are numpy ``float64`` buffers wrapped in :class:`Tensor`. Operations
executed while a :class:`Tape` is active are recorded in order; calling
:func:`backward` replays their adjoints in reverse and returns a gradient
for every parameter registered on the tape.

Outside of any tape the same functions simply compute values, which is what
inference uses.

Example::

    with Tape() as tape:
        w = tape.parameter("w", np.ones((2, 3)))
        loss = sum_(matmul(w, x) * matmul(w, x))
    grads = backward(tape, loss)
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "name", "requires_grad", "_parents", "_backward")

    __array_priority__ = 100.0  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.parameters: dict[str, Tensor] = {}

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def parameter(self, name, data):
        """Register a leaf whose gradient :func:`backward` will report."""
        if name in self.parameters:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        leaf = Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self.parameters[name] = leaf
        return leaf

    def watch(self, arrays):
        return {name: self.parameter(name, value) for name, value in arrays.items()}

    def __len__(self):
        return len(self.nodes)


def current_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, parents, backward_fn):
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def backward(tape, loss):
    """Gradients of the scalar ``loss`` for every parameter on ``tape``.

    Parameters that did not contribute to ``loss`` get exact zeros.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ValueError(f"backward needs a scalar loss, got shape {shape}")
    for node in tape.nodes:
        node.grad = None
    for leaf in tape.parameters.values():
        leaf.grad = None
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(tape.nodes):
            if node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
    return {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in tape.parameters.items()
    }


# ---------------------------------------------------------------- elementwise


def _pair(a, b, opname):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _fit(g, shape):
    # reduce a gradient back onto a scalar operand
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b):
    a, b = _pair(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (_fit(g, a.shape), _fit(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (_fit(g, a.shape), _fit(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b, "mul")

    def grad(g):
        ga = _fit(g * b.data, a.shape) if a.requires_grad else None
        gb = _fit(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), grad)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _stable_sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_tensor(x)
    on = x.data > 0
    return _result(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def smooth_l1(pred, truth):
    """Elementwise smooth L1: quadratic below |r| < 1, linear above."""
    pred, truth = _pair(pred, truth, "smooth_l1")
    r = pred.data - truth.data
    small = np.abs(r) < 1.0
    value = np.where(small, 0.5 * r * r, np.abs(r) - 0.5)
    slope = np.where(small, r, np.sign(r))
    return _result(value, (pred, truth), lambda g: (_fit(g * slope, pred.shape), _fit(-g * slope, truth.shape)))


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "add": add,
    "mul": mul,
    "sub": sub,
}


def elementwise(op, *args):
    """Apply a named elementwise primitive (sigmoid, tanh, relu, add, mul, sub)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; choose from {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


# ------------------------------------------------------------------- linear


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from exc

    def grad(g):
        A = a.data[None, :] if a.ndim == 1 else a.data
        B = b.data[:, None] if b.ndim == 1 else b.data
        G = g
        if a.ndim == 1:
            G = np.expand_dims(G, -2)
        if b.ndim == 1:
            G = np.expand_dims(G, -1)
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(G, np.swapaxes(B, -1, -2))
            ga = _sum_to(ga, A.shape).reshape(a.shape)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(A, -1, -2), G)
            gb = _sum_to(gb, B.shape).reshape(b.shape)
        return ga, gb

    return _result(out, (a, b), grad)


def _sum_to(g, shape):
    # undo matmul batch broadcasting
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def linear(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` over the last axis of ``x``.

    ``weight`` has shape (out, in), matching the usual W·v convention.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.ndim == 0 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} does not fit weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)

    def grad(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g @ weight.data) if x.requires_grad else None
        gw = (g2.T @ x.data.reshape(-1, weight.shape[1])) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result(out, parents, grad)


# ---------------------------------------------------------------- reductions


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), grad)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def softmax(scores, axis=-1, mask=None):
    """Softmax along ``axis`` with max subtraction.

    ``mask`` (bool, broadcastable to ``scores``) marks the entries that take
    part; masked-out entries get probability exactly zero.
    """
    scores = as_tensor(scores)
    if scores.data.size == 0 or scores.ndim == 0 or scores.shape[axis] == 0:
        raise ValueError("softmax of an empty array")
    s = scores.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a slice has every entry masked out")
        s = np.where(mask, s, -np.inf)
    shifted = s - s.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (scores,), grad)


# ---------------------------------------------------------------- structure


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, index):
    x = as_tensor(x)

    def grad(g):
        full = np.zeros_like(x.data)
        if _is_basic(index):
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), grad)


def _is_basic(index):
    # basic indexing never repeats an element, so plain assignment suffices
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice)) for p in parts)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), grad)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from exc

    def grad(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tuple(tensors), grad)
