"""Dense arrays with tape-based reverse-mode differentiation.

Every operation returns a :class:`Node`. When at least one input requires a
gradient, the node keeps a reference to its inputs and a closure mapping the
output adjoint to input adjoints. The tape is rebuilt on every forward pass.

Broadcasting is deliberately absent: binary operations accept two arrays of
identical shape or an array and a Python scalar. Row-wise bias addition is a
separate, explicit operation (:func:`add_bias`).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Node",
    "ShapeError",
    "PrecisionError",
    "precision",
    "no_grad",
    "tensor",
    "constant",
    "pointwise",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "neg",
    "tanh",
    "sigmoid",
    "relu",
    "log_softmax",
    "softmax",
    "matmul",
    "add_bias",
    "layer_norm",
    "conv1d",
    "pad_time",
    "take",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "sum",
    "mean",
    "masked_fill",
    "dropout",
    "custom_op",
    "backward",
    "zero_grad",
    "grad_check",
    "GradCheckReport",
]

_DTYPES = {"single": np.float32, "double": np.float64}
_state = {"precision": "single", "grad_enabled": True}


class ShapeError(ValueError):
    pass


class PrecisionError(TypeError):
    pass


@contextlib.contextmanager
def precision(mode: str):
    """Set the dtype used when wrapping raw arrays (``single`` or ``double``)."""
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}; got {mode!r}")
    old = _state["precision"]
    _state["precision"] = mode
    try:
        yield
    finally:
        _state["precision"] = old


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape."""
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


def default_dtype() -> type:
    return _DTYPES[_state["precision"]]


class _IndexedGrad:
    """Adjoint contribution that only touches ``parent[key]``."""

    __slots__ = ("key", "value", "advanced")

    def __init__(self, key, value, advanced):
        self.key = key
        self.value = value
        self.advanced = advanced


class Node:
    __slots__ = ("data", "_adjoint", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, name: str | None = None):
        if not isinstance(data, np.ndarray) or data.dtype not in (np.float32, np.float64):
            raise PrecisionError("Node data must be a float32 or float64 ndarray")
        self.data = data
        self._adjoint = None
        self.parents: tuple[Node, ...] = ()
        self.backward_fn = None
        self.op = "leaf"
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def adjoint(self) -> np.ndarray:
        if self._adjoint is None:
            self._adjoint = np.zeros_like(self.data)
        return self._adjoint

    @adjoint.setter
    def adjoint(self, value):
        self._adjoint = value

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(op={self.op}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None, dtype=None) -> Node:
    """Wrap array-like data in a leaf node, using the current precision by default."""
    return Node(np.array(data, dtype=dtype or default_dtype()), requires_grad, name)


def constant(data, like: Node | None = None) -> Node:
    dtype = like.dtype if like is not None else default_dtype()
    return Node(np.asarray(data, dtype=dtype))


def _as_node(x, like: Node | None = None) -> Node:
    if isinstance(x, Node):
        return x
    return constant(x, like)


def _check_dtypes(nodes: Sequence[Node]):
    dtype = nodes[0].dtype
    for n in nodes[1:]:
        if n.dtype != dtype:
            raise PrecisionError(f"mixed precision in one computation: {dtype} and {n.dtype}")


def _result(data: np.ndarray, parents: Sequence[Node], backward_fn, op: str) -> Node:
    out = Node(np.asarray(data))
    out.op = op
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _same_shape(a: Node, b: Node, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def custom_op(data: np.ndarray, parents: Sequence[Node], backward_fn, op: str) -> Node:
    """Record an operation defined outside this module.

    ``backward_fn(g)`` must return one adjoint per parent (or ``None``).
    """
    _check_dtypes(list(parents))
    return _result(np.asarray(data, dtype=parents[0].dtype), parents, backward_fn, op)


# --- pointwise -------------------------------------------------------------


def add(a, b) -> Node:
    if not isinstance(b, Node):
        return add_scalar(a, b)
    if not isinstance(a, Node):
        return add_scalar(b, a)
    _check_dtypes([a, b])
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_scalar(a: Node, c: float) -> Node:
    return _result(a.data + a.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def sub(a, b) -> Node:
    if not isinstance(b, Node):
        return add_scalar(a, -b)
    _check_dtypes([a, b])
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Node:
    if not isinstance(b, Node):
        return scale(a, b)
    if not isinstance(a, Node):
        return scale(b, a)
    _check_dtypes([a, b])
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Node, c: float) -> Node:
    c = a.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Node) -> Node:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a: Node) -> Node:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(a: Node) -> Node:
    # tanh form is stable at both tails and gives exactly 0.5 at 0
    y = 0.5 * (np.tanh(0.5 * a.data) + 1)
    return _result(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def relu(a: Node) -> Node:
    mask = a.data > 0
    # maximum keeps NaN visible; a masked select would silently zero it
    return _result(np.maximum(a.data, a.dtype.type(0)), (a,), lambda g: (g * mask,), "relu")


_POINTWISE = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "add": add,
    "mul": mul,
    "scale": scale,
}


def pointwise(op: str, *args) -> Node:
    """Dispatch an elementwise operation by name."""
    try:
        fn = _POINTWISE[op]
    except KeyError:
        raise ValueError(f"unknown pointwise op {op!r}; expected one of {sorted(_POINTWISE)}") from None
    return fn(*args)


# --- reductions and normalisations ----------------------------------------


def log_softmax(x: Node) -> Node:
    """Log-softmax over the last axis, stabilised by max subtraction."""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("log_softmax needs at least one entry on the last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def back(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), back, "log_softmax")


def softmax(x: Node) -> Node:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), back, "softmax")


def sum(x: Node, axis: int | None = None) -> Node:
    shape = x.shape
    if axis is None:
        return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),), "sum")
    axis = axis % x.ndim

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(x.data.sum(axis=axis), (x,), back, "sum")


def mean(x: Node) -> Node:
    return scale(sum(x), 1.0 / x.data.size)


def layer_norm(x: Node, gain: Node, bias: Node, eps: float = 1e-5) -> Node:
    """Standardise every row over the last axis, then apply a learned affine map."""
    c = x.shape[-1]
    if c < 2:
        raise ShapeError("layer_norm over a single channel is degenerate (C must be >= 2)")
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({c},)")
    _check_dtypes([x, gain, bias])
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = centred * inv
    y = xhat * gain.data + bias.data

    def back(g):
        gxhat = g * gain.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, c)
        return gx, (flat_g * xhat.reshape(-1, c)).sum(axis=0), flat_g.sum(axis=0)

    return _result(y, (x, gain, bias), back, "layer_norm")


# --- linear algebra ----------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    """Matrix product.

    ``b`` is either 2-D (``a`` may then carry any number of leading axes) or has
    exactly the same leading axes as ``a`` (stacked product, no broadcasting).
    """
    _check_dtypes([a, b])
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        y = ad @ bd

        def back(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if ad.ndim > 1 else np.outer(ad, g)
            return ga, gb

    else:
        if a.shape[:-2] != b.shape[:-2] or a.ndim != b.ndim:
            raise ShapeError(f"matmul: leading axes must match exactly, {a.shape} @ {b.shape}")
        y = np.matmul(ad, bd)

        def back(g):
            return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _result(y, (a, b), back, "matmul")


def add_bias(x: Node, b: Node) -> Node:
    """Add a vector along the last axis of ``x`` (explicit row broadcast)."""
    _check_dtypes([x, b])
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    n = b.shape[0]
    return _result(x.data + b.data, (x, b), lambda g: (g, g.reshape(-1, n).sum(axis=0)), "add_bias")


def conv1d(x: Node, kernel: Node, bias: Node | None, stride: int = 1, pad: int = 0) -> Node:
    """Strided 1-D convolution over time.

    ``x`` is ``[T, C_in]`` or ``[B, T, C_in]``; ``kernel`` is ``[C_out, C_in, k]``.
    Output length is ``(T + 2*pad - k) // stride + 1``.
    """
    parents = [x, kernel] + ([bias] if bias is not None else [])
    _check_dtypes(parents)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d: expected [B, T, C] input and [C_out, C_in, k] kernel; got {x.shape}, {kernel.shape}")
    n_batch, t_in, c_in = xd.shape
    c_out, k_in, k = kernel.shape
    if k_in != c_in:
        raise ShapeError(f"conv1d: kernel expects C_in={k_in} but input has C_in={c_in}")
    if stride < 1 or pad < 0:
        raise ValueError("conv1d: stride must be positive and pad non-negative")
    if k > t_in + 2 * pad:
        raise ShapeError(f"conv1d: kernel width {k} exceeds padded input length {t_in + 2 * pad}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias {bias.shape} must be ({c_out},)")
    t_out = (t_in + 2 * pad - k) // stride + 1
    span = stride * (t_out - 1) + 1
    xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0))) if pad else xd
    cols = np.stack([xp[:, j : j + span : stride, :] for j in range(k)], axis=-1)
    cols = cols.reshape(n_batch, t_out, c_in * k)
    wmat = kernel.data.reshape(c_out, c_in * k)
    # stacked product keeps each sequence's arithmetic independent of batch size
    y = np.matmul(cols, wmat.T)
    if bias is not None:
        y = y + bias.data

    def back(g):
        g3 = g[None] if squeeze else g
        gcols = np.matmul(g3, wmat).reshape(n_batch, t_out, c_in, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j : j + span : stride, :] += gcols[..., j]
        gx = gxp[:, pad : pad + t_in, :]
        if squeeze:
            gx = gx[0]
        flat_g = g3.reshape(-1, c_out)
        gw = (flat_g.T @ cols.reshape(-1, c_in * k)).reshape(c_out, c_in, k)
        grads = [gx, gw]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return tuple(grads)

    return _result(y[0] if squeeze else y, parents, back, "conv1d")


def pad_time(x: Node, left: int, right: int = 0) -> Node:
    """Zero-pad the time axis (second to last)."""
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    t = x.shape[-2]

    def back(g):
        return (g[..., left : left + t, :],)

    return _result(np.pad(x.data, widths), (x,), back, "pad_time")


# --- structural ------------------------------------------------------------


def _is_advanced(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def take(x: Node, key) -> Node:
    """Index with any numpy key; repeated advanced indices accumulate adjoints."""
    advanced = _is_advanced(key)
    y = x.data[key]
    if advanced:
        y = np.ascontiguousarray(y)
    return _result(y, (x,), lambda g: (_IndexedGrad(key, g, advanced),), "take")


def reshape(x: Node, shape: Sequence[int]) -> Node:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Node, axes: Sequence[int] | None = None) -> Node:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    _check_dtypes(list(xs))
    axis = axis % xs[0].ndim
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, back, "concat")


def stack(xs: Sequence[Node], axis: int = 0) -> Node:
    _check_dtypes(list(xs))
    for x in xs[1:]:
        _same_shape(xs[0], x, "stack")
    axis = axis % (xs[0].ndim + 1)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _result(np.stack([x.data for x in xs], axis=axis), xs, back, "stack")


def masked_fill(x: Node, mask: np.ndarray, value: float) -> Node:
    """Replace entries where ``mask`` is true by a constant; they get zero adjoint."""
    if mask.shape != x.shape:
        raise ShapeError(f"masked_fill: mask {mask.shape} vs input {x.shape}")
    y = np.where(mask, x.dtype.type(value), x.data)
    return _result(y, (x,), lambda g: (np.where(mask, 0, g).astype(g.dtype),), "masked_fill")


def dropout(x: Node, rate: float, rng: np.random.Generator, training: bool) -> Node:
    """Inverted dropout: kept entries are scaled by 1/(1-rate)."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1); got {rate}")
    if not training or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return mul(x, Node(keep))


# --- reverse pass ------------------------------------------------------------


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def _accumulate(store: dict, node: Node, grad):
    current = store.get(id(node))
    if isinstance(grad, _IndexedGrad):
        if current is None:
            current = np.zeros_like(node.data)
            store[id(node)] = current
        if grad.advanced:
            np.add.at(current, grad.key, grad.value)
        else:
            current[grad.key] += grad.value
    elif current is None:
        # own the buffer: later in-place accumulation must not alias a view
        store[id(node)] = np.array(grad, dtype=node.dtype, copy=True)
    else:
        current += grad


def backward(root: Node) -> None:
    """Propagate d(root)/d(leaf) into the ``adjoint`` of every reachable leaf.

    Leaf adjoints accumulate across calls; intermediate adjoints live only for
    the duration of one call.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root; got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    store: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = store.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.adjoint = node.adjoint + g
            continue
        grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, grads):
            if pg is not None and parent.requires_grad:
                _accumulate(store, parent, pg)


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.adjoint = None


# --- verification ------------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-6
    failed: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def lines(self) -> list[str]:
        return [
            f"{name}\t{err:.3e}\t{'FAIL' if name in self.failed else 'ok'}"
            for name, err in self.errors.items()
        ]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps entries whose true derivative is ~0 from dividing noise by noise.
    """
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    f: Callable[[], Node],
    params: Mapping[str, Node] | Sequence[Node],
    eps: float = 1e-5,
    tolerance: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare adjoints against central differences ``(f(p+eps) - f(p-eps)) / 2eps``.

    ``f`` must rebuild the graph from the current parameter values on each call.
    With ``max_entries`` set, a random subset of each parameter's entries is checked.
    """
    if not isinstance(params, Mapping):
        params = {p.name or f"param{i}": p for i, p in enumerate(params)}
    for name, p in params.items():
        if p.dtype != np.float64:
            raise PrecisionError(f"grad_check requires double precision; {name} is {p.dtype}")
    rng = rng or np.random.default_rng(0)
    zero_grad(params.values())
    backward(f())
    report = GradCheckReport(tolerance=tolerance)
    with no_grad():
        for name, p in params.items():
            analytic = p.adjoint.copy()
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ValueError(f"grad_check needs contiguous parameter storage ({name})")
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
            numeric = np.empty(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                numeric[j] = (up - down) / (2 * eps)
            err = float(relative_error(analytic.reshape(-1)[idx], numeric).max(initial=0.0))
            report.errors[name] = err
            if not err <= tolerance:
                report.failed.append(name)
    zero_grad(params.values())
    return report
