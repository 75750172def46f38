"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor produced by a primitive remembers its parents and a closure that
maps the output gradient to one gradient per parent.  ``backward`` walks the
recorded graph in reverse topological order and accumulates gradients into the
``grad`` buffers of leaf tensors created with ``requires_grad=True``.

Shapes are numpy shapes; a scalar is shape ``()``.  All values are float64 and
must stay finite: constructing a tensor with NaN or Inf raises ``NumericError``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

DEFAULT_LEAKY_SLOPE = 0.2


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if op == "leaf":
            arr = arr.copy()
        if not np.isfinite(arr).all():
            raise NumericError(f"{op}: non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def max(self, axis: int, keepdims=False) -> "Tensor":
        return reduce_max(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def custom_op(data: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
    """Record an arbitrary primitive whose backward is ``fn``."""
    return _record(np.asarray(data, dtype=np.float64), tuple(parents), fn, op)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------
def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that carry gradients, inputs before consumers."""
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
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(
                    f"{node.op}: backward produced grad of shape {pg.shape} for input {parent.shape}"
                )
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------
def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bshape(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape("add", a, b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape("sub", a, b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape("mul", a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {x.shape} to {shape}") from None
    return _record(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast")


# ---------------------------------------------------------------------------
# linear algebra and layout
# ---------------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _record(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat_channels: no inputs")
    ref = ts[0].shape
    ax = axis % len(ref) if ref else 0
    for t in ts:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1 :] != ref[:ax] + ref[ax + 1 :]:
            raise ShapeError(
                f"concat_channels: shapes {[t.shape for t in ts]} differ off axis {axis}"
            )
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=ax))

    return _record(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), fn, "concat_channels")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _record(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inv),),
        "transpose",
    )


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    if idx.size and (idx.min() < -x.shape[ax] or idx.max() >= x.shape[ax]):
        raise IndexError(f"take: index out of range for axis {axis} of extent {x.shape[ax]}")
    k = idx.ndim

    def fn(g):
        gx = np.zeros(x.shape)
        target = np.moveaxis(gx, ax, 0)
        src = np.moveaxis(g, list(range(ax, ax + k)), list(range(k)))
        np.add.at(target, idx, src)
        return (gx,)

    return _record(np.take(x.data, idx, axis=ax), (x,), fn, "take")


def pad2d(x, pad: int, mode: str = "zeros") -> Tensor:
    """Pad the last two axes of a c×H×W tensor by ``pad`` on every side."""
    x = as_tensor(x)
    if pad == 0:
        return x
    if x.ndim != 3:
        raise ShapeError(f"pad: expected c×H×W, got {x.shape}")
    if mode == "zeros":
        out = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
        h, w = x.shape[1:]
        return _record(out, (x,), lambda g: (g[:, pad : pad + h, pad : pad + w],), "pad")
    if mode == "replicate":
        rows = np.clip(np.arange(-pad, x.shape[1] + pad), 0, x.shape[1] - 1)
        cols = np.clip(np.arange(-pad, x.shape[2] + pad), 0, x.shape[2] - 1)
        return take(take(x, rows, axis=1), cols, axis=2)
    raise ValueError(f"pad: unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------
def leaky_relu(x, alpha: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    if not alpha > 0:
        raise ValueError(f"leaky_relu: slope must be positive, got {alpha}")
    slope = np.where(x.data > 0, 1.0, alpha)
    return _record(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log: nonpositive input")
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    """Square root; the gradient at exactly zero is taken as zero."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(x.data)
    safe = np.where(out > 0, out, 1.0)
    return _record(out, (x,), lambda g: (np.where(out > 0, 0.5 * g / safe, 0.0),), "sqrt")


def relu_clamp_min(x, floor: float = 0.0) -> Tensor:
    """max(x, floor) with gradient passing only where x > floor."""
    x = as_tensor(x)
    keep = x.data > floor
    return _record(np.where(keep, x.data, floor), (x,), lambda g: (g * keep,), "clamp_min")


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; the gradient is zero where clamping is active."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _record(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax: last extent must be >= 1, got shape {x.shape}")
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record(out, (x,), fn, "softmax")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------
def _axes(x: Tensor, axis) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(x.ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % x.ndim for a in axis))


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axes(x, axis)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), fn, "reduce_sum")


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axes(x, axis)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _record(out, (x,), fn, "reduce_mean")


def reduce_max(x, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    ax = axis % x.ndim
    idx = np.argmax(x.data, axis=ax)[(slice(None),) * ax + (None,)]
    out = np.take_along_axis(x.data, idx, axis=ax)

    def fn(g):
        gx = np.zeros(x.shape)
        g = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(gx, idx, g, axis=ax)
        return (gx,)

    return _record(out if keepdims else out.squeeze(ax), (x,), fn, "reduce_max")


# ---------------------------------------------------------------------------
# spatial operators on c×H×W tensors
# ---------------------------------------------------------------------------
def conv2d(
    x,
    weight,
    bias=None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    padding_mode: str = "zeros",
) -> Tensor:
    """2-D cross-correlation of a c_in×H×W input with a c_out×c_in×kh×kw kernel."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} dilation={dilation} padding={padding}")
    c_out, c_in, kh, kw = weight.shape
    h, w = x.shape[1] + 2 * padding, x.shape[2] + 2 * padding
    ho = (h - dilation * (kh - 1) - 1) // stride + 1
    wo = (w - dilation * (kw - 1) - 1) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: output extent {ho}x{wo} < 1 for input {x.shape}, kernel {weight.shape}, "
            f"padding {padding}, dilation {dilation}"
        )
    xp = pad2d(x, padding, padding_mode)
    xd = xp.data
    cols = np.empty((c_in, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            cols[:, i, j] = xd[:, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride]
    cols2 = cols.reshape(c_in * kh * kw, ho * wo)
    w2 = weight.data.reshape(c_out, -1)
    out = (w2 @ cols2).reshape(c_out, ho, wo)
    parents: tuple[Tensor, ...] = (xp, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data[:, None, None]
        parents = parents + (bias,)

    def fn(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols2.T).reshape(weight.shape)
        gcols = (w2.T @ g2).reshape(c_in, kh, kw, ho, wo)
        gx = np.zeros(xd.shape)
        for i in range(kh):
            for j in range(kw):
                r0, c0 = i * dilation, j * dilation
                gx[:, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride] += gcols[:, i, j]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return grads

    return _record(out, parents, fn, "conv2d")


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def upsample_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of a c×H×W tensor with half-pixel (align-corners-false) sampling."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample_bilinear: expected c×H×W, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"upsample_bilinear: invalid output size {out_h}x{out_w}")
    rh = _interp_matrix(x.shape[1], out_h)
    rw = _interp_matrix(x.shape[2], out_w)
    out = rh @ x.data @ rw.T
    return _record(out, (x,), lambda g: (rh.T @ g @ rw,), "upsample_bilinear")


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "concat_channels": lambda *ts, axis=0: concat(ts, axis=axis),
    "reshape": reshape,
    "transpose": transpose,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "reduce_max": reduce_max,
    "reduce_mean": reduce_mean,
    "reduce_sum": reduce_sum,
    "broadcast": broadcast_to,
    "exp": exp,
    "clip": clip,
    "log": log,
    "sqrt": sqrt,
    "take": take,
    "softmax": softmax_lastdim,
    "conv2d": conv2d,
    "upsample_bilinear": upsample_bilinear,
}


def apply_primitive(kind: str, inputs: Sequence, **params) -> Tensor:
    """Dispatch a primitive by name, e.g. ``apply_primitive("leaky_relu", [x], alpha=0.2)``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **params)
