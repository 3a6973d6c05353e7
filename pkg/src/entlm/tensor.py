"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Plain row-major numpy kernels, float64 by default.  A Tensor records the op
that produced it and closures that push gradients to its parents; backward()
walks the implicit graph once in reverse topological order.  No fusion, no
views with aliasing surprises: every op materializes its output.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float64
LAYER_NORM_EPS = 1e-5


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    Treat instances as immutable after construction; kernels never write
    into their inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, _op=""):
        self.data = np.asarray(data, dtype=DEFAULT_DTYPE if np.asarray(data).dtype.kind == "f" else None)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self._op!r}{tag})"

    # operator sugar; all arithmetic routes through the module-level kernels
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("div: tensor/tensor division is not a provided kernel")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=DEFAULT_DTYPE), requires_grad=True, name=name)


def constant(data):
    return Tensor(np.asarray(data, dtype=DEFAULT_DTYPE))


def _needs_grad(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, backward, op):
    if _needs_grad(*parents):
        return Tensor(data, _parents=parents, _backward=backward, _op=op)
    return Tensor(data, _op=op)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a, b, kernel):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kernel}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out_data, (a, b), backward, "add")


def sub(a, b):
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b):
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out_data, (a, b), backward, "mul")


def scale(a, c):
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward, "scale")


def matmul(a, b):
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul: ranks {a.ndim} and {b.ndim} unsupported")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner axes disagree, lhs axis -1 has {a.shape[-1]}, rhs axis -2 has {b.shape[-2]}"
        )
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out_data, (a, b), backward, "matmul")


def embedding(table, ids):
    """Row gather: table is (V, H), ids any integer shape; output ids.shape + (H,)."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be rank 2, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table with {table.shape[0]} rows")
    out_data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(out_data, (table,), backward, "embedding")


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize over the last axis, then scale and shift."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm: gain/bias must match last axis {x.shape[-1]}, got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        n = x.shape[-1]
        gy = g * gain.data
        gxhat_sum = gy.sum(axis=-1, keepdims=True)
        gxhat_dot = (gy * xhat).sum(axis=-1, keepdims=True)
        gx = inv * (gy - gxhat_sum / n - xhat * gxhat_dot / n)
        ggain = (g * xhat).reshape(-1, n).sum(axis=0)
        gbias = g.reshape(-1, n).sum(axis=0)
        return gx, ggain, gbias

    return _make(out_data, (x, gain, bias), backward, "layer_norm")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _make(out_data, (x,), backward, "gelu")


def softmax(x, axis=-1):
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)

    return _make(p, (x,), backward, "softmax")


def dropout(x, p, rng):
    """Inverted dropout with an explicit RNG handle; p == 0 is the identity."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: rate {p} outside [0, 1)")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out_data = x.data * mask

    def backward(g):
        return (g * mask,)

    return _make(out_data, (x,), backward, "dropout")


def concat(tensors, axis=0):
    if not tensors:
        raise ShapeError("concat: empty input list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        s[axis] = base[axis]
        if s != base:
            raise ShapeError(f"concat: shape {t.shape} incompatible with {tensors[0].shape} on axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out_data, tuple(tensors), backward, "concat")


def reduce_sum(x, axis=None):
    out_data = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full_like(x.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out_data, (x,), backward, "sum")


def reduce_mean(x, axis=None):
    n = x.data.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis=axis), 1.0 / n)


def reshape(x, shape):
    out_data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out_data, (x,), backward, "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(x.data, axes), (x,), backward, "transpose")


def getitem(x, idx):
    out_data = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(np.array(out_data, copy=True), (x,), backward, "getitem")


def cross_entropy_logits(logits, labels, ignore_index=-100):
    """Mean cross-entropy over rows whose label != ignore_index.

    logits: (N, V); labels: (N,) integer.  Rows with the ignore label
    contribute nothing.  With zero live rows the loss is exactly 0 and the
    gradient is zero everywhere; callers that average across batches should
    check `count_live_labels` first.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} need rank 2 with labels shaped ({logits.shape[0]},), "
            f"got labels {labels.shape}"
        )
    live = labels != ignore_index
    n_live = int(live.sum())
    if n_live and (labels[live].min() < 0 or labels[live].max() >= logits.shape[1]):
        raise ShapeError(f"cross_entropy: label out of range for {logits.shape[1]} classes")

    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True)) + m
    if n_live == 0:
        out_data = np.float64(0.0)

        def backward(g):
            return (np.zeros_like(logits.data),)

        return _make(out_data, (logits,), backward, "cross_entropy")

    rows = np.nonzero(live)[0]
    nll = lse[rows, 0] - logits.data[rows, labels[rows]]
    out_data = np.float64(nll.sum() / n_live)

    def backward(g):
        p = np.exp(logits.data - lse)
        gl = np.zeros_like(logits.data)
        gl[rows] = p[rows]
        gl[rows, labels[rows]] -= 1.0
        return (gl * (g / n_live),)

    return _make(out_data, (logits,), backward, "cross_entropy")


def count_live_labels(labels, ignore_index=-100):
    return int((np.asarray(labels) != ignore_index).sum())


def log_softmax_np(x, axis=-1):
    """Forward-only log-softmax on a plain array (used by scoring paths)."""
    x = np.asarray(x, dtype=DEFAULT_DTYPE)
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    Visits each graph node exactly once in reverse topological order.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones((), dtype=DEFAULT_DTYPE)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise ContractError(f"backward: non-finite gradient at node {node!r}")
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def zero_grads(params):
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


def grad_check(build_loss, params, eps=1e-5, rng=None, samples_per_param=8):
    """Max relative error between analytic gradients and central differences.

    `build_loss()` must rebuild the graph from the live values in `params`
    (a dict name -> Tensor) and return the scalar loss.  For each parameter
    up to `samples_per_param` coordinates are probed, preferring the
    largest-magnitude analytic gradients: central differences cannot
    resolve coordinates whose true gradient sits near the float64 noise
    floor, and a wrong gradient formula shows up in the dominant
    coordinates anyway.  A parameter whose analytic gradient is all zero
    gets random probes instead, which catches missing-gradient bugs.
    """
    if eps <= 0:
        raise ContractError(f"grad_check: eps must be positive, got {eps}")
    rng = rng or np.random.default_rng(0)
    zero_grads(params)
    loss = build_loss()
    if not np.isfinite(loss.data):
        raise ContractError("grad_check: non-finite loss at base point")
    backward(loss)

    worst = 0.0
    for name, p in params.items():
        if not p.requires_grad:
            continue
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= samples_per_param:
            coords = range(n)
        elif np.any(analytic != 0):
            coords = np.argsort(-np.abs(analytic).reshape(-1))[:samples_per_param]
        else:
            coords = rng.choice(n, size=samples_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = build_loss().item()
            flat[c] = orig - eps
            dn = build_loss().item()
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(dn)):
                raise ContractError(f"grad_check: non-finite loss probing {name}[{c}]")
            numeric = (up - dn) / (2.0 * eps)
            a = analytic.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
