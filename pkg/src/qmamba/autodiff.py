"""Reverse-mode automatic differentiation over dense float64 tensors.

A `Tensor` wraps a numpy array and, when an operation involves at least one
tensor with ``requires_grad=True``, records its parents and a backward rule.
``backward()`` on a scalar loss replays the recorded graph in reverse
topological order, accumulating gradients additively into ``.grad``.

Broadcasting is deliberately restricted: an operand may gain *leading* batch
dimensions (a ``(c,)`` bias against a ``(b, l, c)`` activation is fine), but
interior or trailing size-1 stretching raises ``DimensionError``. Explicit
reshape is required for anything else; fewer silent shape bugs that way.

``custom_op`` registers an externally differentiated operation (used to splice
the quantum projector and the selective scan into the graph).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, UsageError

__all__ = [
    "Tensor",
    "add",
    "mul",
    "matmul",
    "conv1d_causal",
    "silu",
    "softplus",
    "sigmoid",
    "exp",
    "rmsnorm",
    "embedding_lookup",
    "softmax_cross_entropy",
    "narrow",
    "concat",
    "reshape",
    "reduce_sum",
    "reduce_mean",
    "custom_op",
]


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        # _grad_fn(grad_out) -> tuple of per-parent gradient arrays (or None)
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        self must hold a single scalar.
        """
        if self.data.size != 1:
            raise UsageError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._grad_fn is None:
                continue
            parent_grads = node._grad_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                pg = np.asarray(pg, dtype=np.float64)
                if pg.shape != parent.data.shape:
                    raise DimensionError(
                        f"backward rule produced gradient of shape {pg.shape} "
                        f"for parent of shape {parent.data.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._grad_fn is not None


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order, iterative to survive deep graphs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _check_leading_broadcast(sa: tuple, sb: tuple) -> tuple:
    """Shapes must match after the shorter one gains leading dims; no size-1
    stretching of explicitly present dimensions."""
    if sa == sb:
        return sa
    n = max(len(sa), len(sb))
    pa = (1,) * (n - len(sa)) + sa
    pb = (1,) * (n - len(sb)) + sb
    for i, (da, db) in enumerate(zip(pa, pb)):
        if da == db:
            continue
        # the mismatching dim must be a padded (not explicit) dim
        a_explicit = i >= n - len(sa)
        b_explicit = i >= n - len(sb)
        if a_explicit and b_explicit:
            raise DimensionError(
                f"shapes {sa} and {sb} broadcast beyond leading dimensions"
            )
    return tuple(max(da, db) for da, db in zip(pa, pb))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the pre-broadcast shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _make(out, (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    """Matrix product; either operand may carry leading batch dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), grad_fn)


def conv1d_causal(x, kernel, bias=None) -> Tensor:
    """Depthwise causal 1-d convolution.

    x: (batch, length, channels); kernel: (channels, k); left-pads k-1 zeros
    so position t sees inputs t-k+1 .. t of its own channel only.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 2:
        raise DimensionError(
            f"conv1d_causal expects x (b,l,c) and kernel (c,k), got {x.shape} and {kernel.shape}"
        )
    if x.shape[2] != kernel.shape[0]:
        raise DimensionError(
            f"channel mismatch: x has {x.shape[2]}, kernel has {kernel.shape[0]}"
        )
    b, length, c = x.shape
    k = kernel.shape[1]
    xd, kd = x.data, kernel.data
    out = np.zeros_like(xd)
    for i in range(k):
        shift = k - 1 - i  # tap i reads x[t - shift]
        if shift == 0:
            out += kd[:, i] * xd
        elif shift < length:
            out[:, shift:, :] += kd[:, i] * xd[:, : length - shift, :]
    parents = [x, kernel]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (c,):
            raise DimensionError(f"bias shape {bias.shape} != ({c},)")
        out = out + bias.data
        parents.append(bias)

    def grad_fn(g):
        gx = np.zeros_like(xd)
        gk = np.zeros_like(kd)
        for i in range(k):
            shift = k - 1 - i
            if shift == 0:
                gx += kd[:, i] * g
                gk[:, i] = (g * xd).sum(axis=(0, 1))
            elif shift < length:
                gx[:, : length - shift, :] += kd[:, i] * g[:, shift:, :]
                gk[:, i] = (g[:, shift:, :] * xd[:, : length - shift, :]).sum(axis=(0, 1))
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    return _make(out, parents, grad_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x) -> Tensor:
    """x * sigmoid(x)."""
    x = _as_tensor(x)
    s = _sigmoid(x.data)
    out = x.data * s
    return _make(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), evaluated stably."""
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    s = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * s,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def rmsnorm(x, gain, eps: float = 1e-5) -> Tensor:
    """x / sqrt(mean(x^2, last axis) + eps) * gain."""
    x, gain = _as_tensor(x), _as_tensor(gain)
    d = x.shape[-1]
    if gain.shape != (d,):
        raise DimensionError(f"gain shape {gain.shape} != ({d},)")
    ms = np.mean(x.data**2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    normed = x.data * inv
    out = normed * gain.data

    def grad_fn(g):
        gg = (g * normed).reshape(-1, d).sum(axis=0)
        gn = g * gain.data
        # d(normed)/dx pulls in the -x * mean(x*gn) / (rms^2 * d) correction
        dot = np.sum(gn * x.data, axis=-1, keepdims=True)
        gx = inv * gn - (inv**3 / d) * x.data * dot
        return gx, gg

    return _make(out, (x, gain), grad_fn)


def embedding_lookup(table, ids: np.ndarray) -> Tensor:
    """Row gather: table (vocab, d), ids integer array -> ids.shape + (d,)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DimensionError("embedding ids must be integers")
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError("embedding id out of range")
    out = table.data[ids]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(out, (table,), grad_fn)


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (batch, classes) logits against integer labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be (batch, classes), got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(n), labels].mean()
    probs = np.exp(logp)

    def grad_fn(g):
        gl = probs.copy()
        gl[np.arange(n), labels] -= 1.0
        return (gl * (float(g) / n),)

    return _make(np.asarray(loss), (logits,), grad_fn)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` elements along `axis`."""
    x = _as_tensor(x)
    dim = x.shape[axis]
    if start < 0 or length < 0 or start + length > dim:
        raise DimensionError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} of size {dim}"
        )
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = x.data[idx]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _make(out, (x,), grad_fn)


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of zero tensors")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def grad_fn(g):
        grads, ofs = [], 0
        for size in sizes:
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(ofs, ofs + size)
            grads.append(g[tuple(idx)])
            ofs += size
        return tuple(grads)

    return _make(out, ts, grad_fn)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size and -1 not in shape:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.data.shape),))


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return _make(out, (x,), grad_fn)


def reduce_mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        return (
            np.broadcast_to(np.expand_dims(g, axis) / count, x.data.shape).copy(),
        )

    return _make(out, (x,), grad_fn)


def custom_op(forward_fn, backward_fn, name: str | None = None):
    """Register an externally differentiated operation.

    forward_fn(*arrays) -> (out_array, ctx); backward_fn(ctx, grad_out) ->
    one gradient array (or None) per forward input. The returned callable
    takes and returns Tensors and participates in backward() like any
    primitive.
    """

    def op(*inputs) -> Tensor:
        ts = [_as_tensor(t) for t in inputs]
        out, ctx = forward_fn(*[t.data for t in ts])

        def grad_fn(g):
            grads = backward_fn(ctx, g)
            if not isinstance(grads, (tuple, list)) or len(grads) != len(ts):
                raise UsageError(
                    f"custom op {name or forward_fn.__name__}: backward returned "
                    f"{0 if not isinstance(grads, (tuple, list)) else len(grads)} "
                    f"gradients for {len(ts)} inputs"
                )
            return tuple(grads)

        return _make(np.asarray(out, dtype=np.float64), ts, grad_fn)

    return op
