"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. :func:`backward`
orders the recorded graph topologically (the tape) and replays it in reverse.

Shapes must agree exactly for elementwise ops. The only implicit broadcast is
a Python scalar combined with a tensor; anything else goes through
:meth:`Tensor.expand`, whose backward sums over the expanded axes.
``matmul`` accepts leading batch axes on one side and a plain matrix on the
other (shared weights), which is the standard stacked-matmul convention.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

EXP_CAP = 700.0  # exp(700) ~ 1e304, still finite in float64
CE_EPS = 1e-12


class ShapeError(ValueError):
    pass


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    # ascontiguousarray would promote 0-d input to 1-d
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


class Tensor:
    """A float64 array that can participate in gradient recording."""

    __array_priority__ = 1000  # make ndarray + Tensor dispatch to Tensor

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = _op

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method forms -------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, axis, "mean", keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def expand(self, shape):
        return expand(self, shape)

    def relu(self):
        return elementwise_unary(self, "relu")

    def sigmoid(self):
        return elementwise_unary(self, "sigmoid")

    def tanh(self):
        return elementwise_unary(self, "tanh")

    def exp(self):
        return elementwise_unary(self, "exp")

    def abs(self):
        return elementwise_unary(self, "abs")

    def log(self):
        return elementwise_unary(self, "log")

    def leaky_relu(self, slope=0.2):
        return elementwise_unary(self, "leaky_relu", slope=slope)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    out = Tensor(data, _op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_scalar(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar-tensor broadcast is the only implicit one
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def binary_elementwise(a, b, fn: str) -> Tensor:
    """Pointwise ``add``, ``sub``, ``mul`` or ``div`` on equal shapes."""
    a, b = _wrap(a), _wrap(b)
    _check_same(a, b, fn)
    ad, bd = a.data, b.data
    if fn == "add":
        out = ad + bd

        def bw(g):
            return _reduce_scalar(g, a), _reduce_scalar(g, b)
    elif fn == "sub":
        out = ad - bd

        def bw(g):
            return _reduce_scalar(g, a), _reduce_scalar(-g, b)
    elif fn == "mul":
        out = ad * bd

        def bw(g):
            return _reduce_scalar(g * bd, a), _reduce_scalar(g * ad, b)
    elif fn == "div":
        out = ad / bd

        def bw(g):
            return _reduce_scalar(g / bd, a), _reduce_scalar(-g * ad / (bd * bd), b)
    else:
        raise ValueError(f"unknown binary op {fn!r}")
    return _make(out, (a, b), bw, fn)


def add(a, b):
    return binary_elementwise(a, b, "add")


def sub(a, b):
    return binary_elementwise(a, b, "sub")


def mul(a, b):
    return binary_elementwise(a, b, "mul")


def div(a, b):
    return binary_elementwise(a, b, "div")


def elementwise_unary(x, fn: str, slope: float = 0.2) -> Tensor:
    """Pointwise nonlinearity.

    ``exp`` clamps its argument at ``EXP_CAP``; past the cap the output is
    constant and the gradient is zero (saturated). ``abs`` has gradient 0 at 0.
    ``log`` expects positive input.
    """
    x = _wrap(x)
    xd = x.data
    if fn == "relu":
        out = np.maximum(xd, 0.0)

        def bw(g):
            return (g * (xd > 0),)
    elif fn == "leaky_relu":
        out = np.where(xd > 0, xd, slope * xd)

        def bw(g):
            return (g * np.where(xd > 0, 1.0, slope),)
    elif fn == "sigmoid":
        out = np.empty_like(xd)
        pos = xd >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
        ex = np.exp(xd[~pos])
        out[~pos] = ex / (1.0 + ex)

        def bw(g):
            return (g * out * (1.0 - out),)
    elif fn == "tanh":
        out = np.tanh(xd)

        def bw(g):
            return (g * (1.0 - out * out),)
    elif fn == "exp":
        clipped = np.minimum(xd, EXP_CAP)
        out = np.exp(clipped)

        def bw(g):
            return (g * out * (xd < EXP_CAP),)
    elif fn == "abs":
        out = np.abs(xd)

        def bw(g):
            return (g * np.sign(xd),)
    elif fn == "log":
        out = np.log(xd)

        def bw(g):
            return (g / xd,)
    else:
        raise ValueError(f"unknown unary op {fn!r}")
    return _make(out, (x,), bw, fn)


def relu(x):
    return elementwise_unary(x, "relu")


def leaky_relu(x, slope=0.2):
    return elementwise_unary(x, "leaky_relu", slope=slope)


def sigmoid(x):
    return elementwise_unary(x, "sigmoid")


def tanh(x):
    return elementwise_unary(x, "tanh")


def exp(x):
    return elementwise_unary(x, "exp")


def absolute(x):
    return elementwise_unary(x, "abs")


def log(x):
    return elementwise_unary(x, "log")


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Either both operands carry identical leading batch axes, or one of them is
    a plain 2-D matrix shared across the other's batch.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        if a.ndim == 2 and ga.ndim > 2:
            ga = ga.reshape(-1, *a.shape).sum(axis=0)
        if b.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *b.shape).sum(axis=0)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        norm.append(ax % ndim)
    return tuple(norm)


def reduce(x, axis=None, fn: str = "sum", keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[ax] for ax in axes])) if axes else 1
    if fn == "sum":
        out = x.data.sum(axis=axes, keepdims=keepdims)
        scale = 1.0
    elif fn == "mean":
        out = x.data.mean(axis=axes, keepdims=keepdims)
        scale = 1.0 / n
    else:
        raise ValueError(f"unknown reduction {fn!r}")

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, x.shape).copy(),)

    return _make(out, (x,), bw, fn)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _wrap(x)
    if axes is None:
        axes = tuple(range(x.ndim))[:-2] + (x.ndim - 1, x.ndim - 2)
    inv = np.argsort(axes)
    out = np.transpose(x.data, axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def expand(x, shape) -> Tensor:
    """Explicit broadcast to ``shape`` (numpy rules); backward sums back."""
    x = _wrap(x)
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape).copy()
    lead = len(shape) - x.ndim

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        keep = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
        if keep:
            g = g.sum(axis=keep, keepdims=True)
        return (g,)

    return _make(out, (x,), bw, "expand")


def getitem(x, idx) -> Tensor:
    x = _wrap(x)
    out = x.data[idx]

    basic = all(
        isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
        for i in (idx if isinstance(idx, tuple) else (idx,))
    )

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (x,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    ref = ts[0]
    ax = axis % ref.ndim
    for t in ts[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, ts, bw, "concat")


def split(x, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    x = _wrap(x)
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {x.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(start, start + n)
        out.append(getitem(x, tuple(sl)))
        start += n
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shape mismatch {ts[0].shape} vs {t.shape}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _make(out, ts, bw, "stack")


# ---------------------------------------------------------------------------
# normalizations and losses


def softmax_axis(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def weighted_softmax(x, weights, axis: int = -1) -> Tensor:
    """``w * exp(x) / sum(w * exp(x))`` along ``axis``, computed stably.

    Zero weights give exactly zero output. A slice whose weights are all zero
    cannot be normalized and raises ``ValueError``.
    """
    x, w = _wrap(x), _wrap(weights)
    _check_same(x, w, "weighted_softmax")
    if np.any(w.data < 0):
        raise ValueError("weighted_softmax: negative weights")
    if np.any(w.data.sum(axis=axis) == 0):
        raise ValueError("weighted_softmax: a slice has all-zero weights")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    num = w.data * e
    s = num.sum(axis=axis, keepdims=True)
    out = num / s

    def bw(g):
        centered = g - (g * out).sum(axis=axis, keepdims=True)
        return out * centered, e / s * centered

    return _make(out, (x, w), bw, "weighted_softmax")


def cross_entropy_loss(probs, one_hot) -> Tensor:
    """``-sum(y * log(p + 1e-12))``, averaged over leading batch rows if any."""
    probs = _wrap(probs)
    y = one_hot.data if isinstance(one_hot, Tensor) else _as_array(one_hot)
    if y.shape != probs.shape:
        raise ShapeError(f"cross_entropy_loss: probs {probs.shape} vs label {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValueError("cross_entropy_loss: label is not one-hot")
    n = int(np.prod(probs.shape[:-1])) if probs.ndim > 1 else 1
    pd = probs.data
    out = -(y * np.log(pd + CE_EPS)).sum() / n

    def bw(g):
        return (-g * y / (pd + CE_EPS) / n,)

    return _make(out, (probs,), bw, "cross_entropy")


def dropout(x, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``p == 0``."""
    x = _wrap(x)
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def max_eigenvalue(x) -> Tensor:
    """Largest eigenvalue of symmetric matrices over the last two axes.

    Gradient is ``v v^T`` for the top eigenvector ``v`` (valid for a simple
    top eigenvalue).
    """
    x = _wrap(x)
    vals, vecs = np.linalg.eigh(x.data)
    out = vals[..., -1]
    v = vecs[..., :, -1]

    def bw(g):
        return (g[..., None, None] * v[..., :, None] * v[..., None, :],)

    return _make(out, (x,), bw, "max_eigenvalue")


# ---------------------------------------------------------------------------
# gradient propagation


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires gradients.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def finite_difference_check(
    f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5
) -> float:
    """Max relative error between the analytic gradient of ``f`` at ``x`` and
    central differences.

    The per-coordinate error is ``|a - n| / max(|a|, |n|, GRAD_FLOOR)``; see
    :func:`relative_error`.
    """
    x = Tensor(x.data.copy(), requires_grad=True)
    backward(f(x))
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad
    numeric = np.empty_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(Tensor(x.data)).item()
        flat[i] = orig - step
        fm = f(Tensor(x.data)).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
    return relative_error(analytic, numeric)


GRAD_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    """Worst per-coordinate ``|a - n| / max(|a|, |n|, floor)``.

    Coordinates smaller than ``floor`` are compared on an absolute scale;
    central differences at step 1e-5 on an O(1) loss carry roundoff near
    1e-11, which would dominate a purely relative measure on such entries.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


# ---------------------------------------------------------------------------
# checkpoint container: 8-byte LE manifest length, JSON manifest, LE float64 payload

MAGIC = b"PGSN"
FORMAT_VERSION = 1


def write_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = {"version": FORMAT_VERSION, "arrays": entries, "meta": meta or {}}
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a container file")
    (n,) = struct.unpack("<Q", raw[4:12])
    manifest = json.loads(raw[12 : 12 + n].decode("utf-8"))
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: container version {manifest.get('version')} != {FORMAT_VERSION}")
    payload = np.frombuffer(raw[12 + n :], dtype="<f8")
    expected = sum(int(np.prod(e["shape"])) for e in manifest["arrays"])
    if expected != payload.size:
        raise ValueError(
            f"{path}: manifest describes {expected} values but payload holds {payload.size}"
        )
    arrays = {}
    for e in manifest["arrays"]:
        size = int(np.prod(e["shape"]))
        arrays[e["name"]] = payload[e["offset"] : e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return arrays, manifest["meta"]


def save_parameters(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    write_container(path, {k: v.data for k, v in params.items()}, meta)


def load_parameters(path) -> tuple[dict[str, Tensor], dict]:
    arrays, meta = read_container(path)
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}, meta


def parameters_grad_check(
    loss_fn: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5
) -> float:
    """Finite-difference check of ``loss_fn`` against every entry of ``params``."""
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
