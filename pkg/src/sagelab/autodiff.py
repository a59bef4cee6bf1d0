"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Every op records its parents and a closure that pushes the upstream gradient
back to them. ``backward`` walks the reachable graph in reverse creation order,
so the traversal is the exact reverse of the forward evaluation sequence.
Gradients are only allocated for tensors with ``requires_grad=True``.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

_counter = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")
    # make numpy defer to our reflected operators (ndarray @ Tensor, ndarray * Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_counter)
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph -------------------------------------------------------------
    def backward(self) -> None:
        backward(self)

    # -- operator sugar ----------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _scalar_error():
    raise ValueError("item() requires a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    # freshly computed results are adopted as-is; views are copied so later
    # in-place edits of a parent cannot leak into this node
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags.owndata:
        arr = arr.copy()
    out = Tensor.__new__(Tensor)
    out.data, out.grad, out.requires_grad = arr, None, False
    out._parents, out._backward, out._id, out.name = (), None, next(_counter), None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(output: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``output``."""
    if output.data.size != 1:
        raise ValueError(f"backward() needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)
    order = sorted(nodes.values(), key=lambda n: n._id, reverse=True)
    # intermediate grads are transient; leaves keep theirs
    for node in order:
        if node._parents:
            node.grad = None
    output.grad = np.ones_like(output.data)
    for node in order:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents:
            node.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: _accumulate(a, -g))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**exponent

    def bw(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return _make(out, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accumulate(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: _accumulate(a, g * out * (1.0 - out)))


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return _make(out, (a,), lambda g: _accumulate(a, g * special.expit(-a.data)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: _accumulate(a, g * (1.0 - out * out)))


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)

    return _make(x * cdf, (a,), lambda g: _accumulate(a, g * (cdf + x * pdf)))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where mask is true, else ``b``; mask carries no gradient."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, np.where(mask, g, 0.0))
        _accumulate(b, np.where(mask, 0.0, g))

    return _make(np.where(mask, a.data, b.data), (a, b), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(a.data.shape)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (a,), lambda g: _accumulate(a, np.transpose(g, inverse)))


def take(a, index) -> Tensor:
    """Basic or advanced indexing; the backward scatters with ``np.add.at``."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _make(a.data[index], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra and normalisers
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ValueError("matmul needs at least 1-d operands")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            _accumulate(a, g * bd)
            _accumulate(b, g * ad)
            return
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if ad.ndim == 1:
            ga = ga.squeeze(-2)
        if bd.ndim == 1:
            gb = gb.squeeze(-1)
        if a.requires_grad:
            _accumulate(a, _unbroadcast(ga, ad.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(gb, bd.shape))

    return _make(a.data @ b.data, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = special.softmax(a.data, axis=axis)

    def bw(g):
        _accumulate(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = special.log_softmax(a.data, axis=axis)

    def bw(g):
        _accumulate(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean token cross-entropy; ``logits`` is (..., V), ``targets`` integer (...)."""
    targets = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(logits, axis=-1)
    flat = reshape(logp, (-1, logp.shape[-1]))
    rows = np.arange(flat.shape[0])
    picked = take(flat, (rows, targets.reshape(-1)))
    if mask is None:
        return -mean(picked)
    weights = np.asarray(mask, dtype=np.float64).reshape(-1)
    total = weights.sum()
    if total == 0:
        raise ValueError("cross_entropy mask selects no positions")
    return -(sum_(picked * weights) * (1.0 / total))


# ---------------------------------------------------------------------------
# initialisation, optimisation, checkpoints
# ---------------------------------------------------------------------------


def init_std(num_layers: int) -> float:
    """Depth-scaled standard deviation 0.02 / sqrt(2 L)."""
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    return 0.02 / math.sqrt(2.0 * num_layers)


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples, redrawn until |v| <= bound * std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound * std
    return out


def init_weights(rows: int, cols: int, num_layers: int, seed: int, *, requires_grad: bool = True) -> Tensor:
    if rows <= 0 or cols <= 0:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    std = init_std(num_layers)
    rng = np.random.default_rng(seed)
    return Tensor(truncated_normal(rng, (rows, cols), std), requires_grad=requires_grad)


def truncated_normal_std(std: float, bound: float = 2.0) -> float:
    """Standard deviation of Normal(0, std) truncated symmetrically at bound*std."""
    a = bound
    pdf = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    mass = math.erf(a / math.sqrt(2))
    return std * math.sqrt(1.0 - 2.0 * a * pdf / mass)


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-2):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


CHECKPOINT_MAGIC = "SAGECKPT 1"


def save_checkpoint(path, tensors: dict[str, Tensor | np.ndarray]) -> None:
    """Write a text manifest followed by little-endian float64 payloads.

    Layout::

        SAGECKPT 1\\n
        <name> <d0>,<d1>,...\\n      (one line per tensor, in payload order;
                                     scalars use the empty dimension list)
        END\\n
        <raw <f8 bytes of every tensor, row-major, concatenated>
    """
    lines = [CHECKPOINT_MAGIC]
    payload = []
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name may not contain whitespace: {name!r}")
        lines.append(f"{name} {','.join(str(d) for d in arr.shape)}")
        payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    lines.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = blob.index(b"\nEND\n") + len(b"\nEND\n")
    header = blob[:header_end].decode("ascii").splitlines()
    if header[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    out: dict[str, np.ndarray] = {}
    offset = header_end
    for line in header[1:-1]:
        name, _, dims = line.partition(" ")
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        out[name] = np.frombuffer(blob[offset:offset + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise ValueError("checkpoint payload length does not match manifest")
    return out
