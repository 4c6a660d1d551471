"""Dense-tensor reverse-mode automatic differentiation.

A Tensor wraps a contiguous float64 numpy array.  Every differentiable
operation records its inputs and a backward closure on the output node; the
recorded parent graph is the tape, and its construction order guarantees
topological consistency.  Gradients accumulate: calling backward twice
without zero_grad yields exactly twice the single-pass gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidAxisError,
    InvalidLabelError,
    NotScalarError,
    ShapeMismatchError,
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(()))

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def backward(self):
        """Reverse traversal from a scalar; grads accumulate into .grad."""
        if self.size != 1:
            raise NotScalarError("backward() requires a scalar, got shape %s" % (self.shape,))
        order = _toposort(self)
        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                acc = flowing.get(id(parent))
                if acc is None:
                    flowing[id(parent)] = pg.reshape(parent.shape).copy()
                else:
                    acc += pg.reshape(parent.shape)


def _toposort(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _needs_grad(t):
    return t.requires_grad or t._backward_fn is not None


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(data, parents, backward_fn):
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None
    return _record(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None
    return _record(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None
    return _record(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def elementwise(op, a, b):
    """Dispatch by name; the spec-level elementwise surface."""
    try:
        return {"add": add, "sub": sub, "mul": mul}[op](a, b)
    except KeyError:
        raise ValueError("unknown elementwise op %r" % (op,)) from None


# -- linear algebra ------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul needs >=2-D operands")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(data, (a, b), backward)


def graph_contract(a, x):
    """Channel-wise adjacency contraction.

    a: (..., C, N, N) per-channel topology, x: (..., T, N, C) features;
    out[..., t, i, c] = sum_j a[..., c, i, j] * x[..., t, j, c].
    Leading batch axes must match between a and x (either both absent or
    both a single batch axis).
    """
    a, x = as_tensor(a), as_tensor(x)
    if a.ndim == 3 and x.ndim == 3:
        fwd, da_s, dx_s = "cij,tjc->tic", "tic,tjc->cij", "cij,tic->tjc"
    elif a.ndim == 4 and x.ndim == 4:
        fwd, da_s, dx_s = "bcij,btjc->btic", "btic,btjc->bcij", "bcij,btic->btjc"
    else:
        raise ShapeMismatchError("graph_contract: got a%s x%s" % (a.shape, x.shape))
    if a.shape[-1] != a.shape[-2] or a.shape[-1] != x.shape[-2] or a.shape[-3] != x.shape[-1]:
        raise ShapeMismatchError("graph_contract: got a%s x%s" % (a.shape, x.shape))
    data = np.einsum(fwd, a.data, x.data)

    def backward(g):
        return np.einsum(da_s, g, x.data), np.einsum(dx_s, a.data, g)

    return _record(data, (a, x), backward)


# -- activations ---------------------------------------------------------


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0.0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def activation(op, x):
    try:
        return {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}[op](x)
    except KeyError:
        raise ValueError("unknown activation %r" % (op,)) from None


def absolute(x):
    x = as_tensor(x)
    return _record(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sqrt(x):
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _record(y, (x,), lambda g: (g * 0.5 / y,))


def reciprocal(x):
    x = as_tensor(x)
    y = 1.0 / x.data
    return _record(y, (x,), lambda g: (-g * y * y,))


# -- reductions & shape --------------------------------------------------


def _check_axis(axis, ndim):
    if not isinstance(axis, int) or not (-ndim <= axis < ndim):
        raise InvalidAxisError("axis %r invalid for ndim %d" % (axis, ndim))
    return axis % ndim


def reduce_mean(x, axis):
    x = as_tensor(x)
    axis = _check_axis(axis, x.ndim)
    n = x.shape[axis]
    data = x.data.mean(axis=axis)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape),)

    return _record(data, (x,), backward)


def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis(axis, x.ndim)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.shape),)

    return _record(data, (x,), backward)


def reduce_max(x, axis, keepdims=False):
    """Max along one axis; subgradient flows to the first argmax."""
    x = as_tensor(x)
    axis = _check_axis(axis, x.ndim)
    data = x.data.max(axis=axis, keepdims=keepdims)
    idx = np.argmax(x.data, axis=axis)

    def backward(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        out = np.zeros_like(x.data)
        np.put_along_axis(out, np.expand_dims(idx, axis), ge, axis=axis)
        return (out,)

    return _record(data, (x,), backward)


def clip_min(x, lo):
    """max(x, lo) with gradient only where x > lo."""
    x = as_tensor(x)
    mask = x.data > lo
    return _record(np.where(mask, x.data, lo), (x,), lambda g: (g * mask,))


def reshape(x, shape):
    x = as_tensor(x)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inv = np.argsort(axes)
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def take(x, idx):
    """Basic slicing/indexing with scatter-add backward."""
    x = as_tensor(x)
    data = x.data[idx]

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _record(np.ascontiguousarray(data), (x,), backward)


# -- loss ----------------------------------------------------------------


def softmax_cross_entropy(logits, labels):
    """Mean over batch of -log softmax(logits)[label]; max-stabilized."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeMismatchError("logits must be B x K, got %s" % (logits.shape,))
    b, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ShapeMismatchError("labels length %d != batch %d" % (labels.size, b))
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise InvalidLabelError("labels must lie in [0, %d)" % k)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    data = -logp[np.arange(b), labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(b), labels] -= 1.0
        return (grad * (float(np.asarray(g).reshape(())) / b),)

    return _record(np.asarray(data), (logits,), backward)


# -- finite-difference oracle -------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    entries: list = field(default_factory=list)

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self):
        lines = []
        for e in self.entries:
            lines.append(
                "%-40s rel_err=%.3e %s" % (e.name, e.max_rel_err, "ok" if e.passed else "FAIL")
            )
        return "\n".join(lines)


def finite_diff_check(f, params, eps=1e-5, tol=1e-4, names=None):
    """Compare tape gradients of scalar f() against central differences.

    Every entry of every parameter is perturbed by +/-eps; relative error
    uses denominator max(|g_analytic|, |g_numeric|, 1e-8).
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    report = GradCheckReport(tol=tol, eps=eps)
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = f().item()
            flat[j] = orig - eps
            lo = f().item()
            flat[j] = orig
            numeric[j] = (hi - lo) / (2.0 * eps)
        ga = analytic[i].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(numeric)), 1e-8)
        err = float(np.max(np.abs(ga - numeric) / denom)) if flat.size else 0.0
        name = names[i] if names else "param[%d]" % i
        report.entries.append(GradCheckEntry(name=name, max_rel_err=err, passed=err < tol))
    return report
