"""Reverse-mode automatic differentiation over float64 numpy arrays.

The primitive set is deliberately closed: matmul, bias add, relu,
log-softmax, exp, log, elementwise add/sub/mul, scaling by a constant,
sum/mean and l1/l2 norms. Each primitive records a closure mapping the
output cotangent to its parents' cotangents; :func:`backward` replays those
closures in reverse topological order.

Only leaves with ``requires_grad=True`` receive a ``.grad`` buffer. A second
``backward`` on the same graph adds into existing buffers, so gradients must
be cleared explicitly (``t.grad = None`` or ``Params.zero_grad``).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .rng import Rng


class Tensor:
    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf", _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._op = _op
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (),
                  _op=op, _backward=backward if req else None)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _node(ad @ bd, (a, b), "matmul", bw)


def add(a, b):
    """Elementwise sum; a 1-D ``b`` matching the last axis of 2-D ``a`` is a bias add."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), "add", lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _node(a.data + b.data, (a, b), "bias_add", lambda g: (g, g.sum(axis=0)))
    raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not conform")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not conform")
    return _node(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), "scale", lambda g: (g * c,))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), "exp", lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore"):
        out = np.log(ad)
    return _node(out, (a,), "log", lambda g: (g / ad,))


def log_softmax(a):
    """Log-softmax along the last axis."""
    a = _as_tensor(a)
    if a.data.ndim not in (1, 2):
        raise DimensionError(f"log_softmax: expected 1-D or 2-D input, got {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _node(out, (a,), "log_softmax", bw)


def sum(a):  # noqa: A001 - mirrors the primitive name
    a = _as_tensor(a)
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), "sum", lambda g: (np.full(shape, float(g)),))


def mean(a):
    a = _as_tensor(a)
    shape, n = a.shape, a.size
    if n == 0:
        raise DimensionError("mean: empty tensor")
    return _node(np.array(a.data.mean()), (a,), "mean", lambda g: (np.full(shape, float(g) / n),))


def l1_norm(a):
    a = _as_tensor(a)
    sgn = np.sign(a.data)
    return _node(np.array(np.abs(a.data).sum()), (a,), "l1_norm", lambda g: (float(g) * sgn,))


def l2_norm(a):
    a = _as_tensor(a)
    ad = a.data
    norm = float(np.sqrt((ad * ad).sum()))

    def bw(g):
        if norm == 0.0:
            return (np.zeros_like(ad),)
        return (float(g) * ad / norm,)

    return _node(np.array(norm), (a,), "l2_norm", bw)


def topological_order(root):
    """Nodes reachable from ``root`` that require grad, parents before children."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    cotangents = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = cotangents.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            cotangents[key] = pg if key not in cotangents else cotangents[key] + pg
    return


def sample_gaussian(rng: Rng, shape, mean=0.0, std=1.0):
    if std < 0:
        raise ContractError(f"sample_gaussian: std must be >= 0, got {std}")
    return Tensor(mean + std * rng.normal(shape))


def sample_rademacher(rng: Rng, shape):
    return Tensor(rng.signs(shape))
