"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Forward passes run eagerly on numpy arrays.  When a ``Graph`` is active, every
primitive that touches a gradient-tracked tensor appends a backward closure to
the tape; ``backward(loss)`` replays the tape in exact reverse recording order
and accumulates gradients into the ``grad`` slot of each participating tensor.
A tape can be consumed once; re-running backward without re-recording raises.

All kernels validate that their outputs are finite: a NaN or Inf anywhere is
treated as a hard numerical error rather than propagated silently.

The module also keeps a multiply-accumulate counter for the dense kernels
(matmul, batched matmul, convolution, affine), used to verify that exemplar
(per-instance-weight) kernels cost exactly as much as their shared-weight
counterparts.  Elementwise plumbing does not contribute to the counter.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "GraphError",
    "NonFiniteError",
    "backward",
    "add",
    "mul",
    "neg",
    "relu",
    "exp",
    "log",
    "xlogx",
    "softmax",
    "log_softmax",
    "tensor_sum",
    "tensor_mean",
    "reshape",
    "transpose",
    "getitem",
    "minimum",
    "matmul",
    "batched_matmul",
    "conv2d",
    "exemplar_conv2d",
    "affine",
    "exemplar_affine",
    "mac_count",
    "reset_mac_count",
    "pause_mac_count",
    "set_default_dtype",
    "get_default_dtype",
]


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the recording tape (double backward, non-scalar loss, ...)."""


_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Select float64 (default) or float32 for newly created tensors.

    Gradient-check tolerances in the test suite assume float64; float32 is a
    throughput option only.
    """
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


# ---------------------------------------------------------------------------
# multiply-accumulate instrumentation
# ---------------------------------------------------------------------------

_MACS = 0
_MAC_PAUSED = 0


def _add_macs(n: int) -> None:
    global _MACS
    if not _MAC_PAUSED:
        _MACS += int(n)


def mac_count() -> int:
    """Multiply-accumulate operations performed by dense kernels since reset."""
    return _MACS


def reset_mac_count() -> None:
    global _MACS
    _MACS = 0


class pause_mac_count:
    """Context manager that suspends MAC counting.

    Used around parameter sampling: generated weights are temporary and are
    excluded from the kernel-cost parity accounting on both the shared and the
    exemplar path.
    """

    def __enter__(self):
        global _MAC_PAUSED
        _MAC_PAUSED += 1
        return self

    def __exit__(self, exc_type, exc, tb):
        global _MAC_PAUSED
        _MAC_PAUSED -= 1
        return False


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_GRAPH_STACK: list["Graph"] = []


class Graph:
    """Recording tape for one forward pass.

    Use as a context manager; primitives executed inside record their backward
    closures in order.  ``backward(loss)`` walks the tape once, in reverse.
    """

    def __init__(self):
        self._tape: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPH_STACK.pop()
        assert popped is self
        return False

    def _record(self, out: "Tensor", fn: Callable[[np.ndarray], None]) -> None:
        self._tape.append((out, fn))

    def __len__(self) -> int:
        return len(self._tape)

    def backward(self, loss: "Tensor") -> None:
        """Populate ``grad`` slots of all gradient-tracked tensors feeding loss."""
        if self._consumed:
            raise GraphError("backward was already run on this graph; re-record the forward pass")
        if loss.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._tape):
            if out.grad is not None:
                fn(out.grad)


def _active_graph() -> Optional[Graph]:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def backward(loss: "Tensor") -> None:
    """Run reverse-mode differentiation from a scalar loss."""
    if loss._graph is None:
        raise GraphError("tensor was not recorded on a graph; wrap the forward pass in `with Graph() as g:`")
    loss._graph.backward(loss)


# ---------------------------------------------------------------------------
# tensor
# ---------------------------------------------------------------------------


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """A dense n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_graph")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._graph: Optional[Graph] = None

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap a kernel result, recording the backward closure when needed."""
    _check_finite(out_data, op)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    graph = _active_graph()
    track = graph is not None and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    out._graph = graph if track else None
    if track:
        graph._record(out, backward_fn)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the given shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data + b.data

    def _backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), _backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data * b.data

    def _backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), _backward, "mul")


def neg(a: Tensor) -> Tensor:
    a = _coerce(a)

    def _backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), _backward, "neg")


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def _backward(g):
        _accumulate(a, g * (a.data > 0))

    return _make(out_data, (a,), _backward, "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def _backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), _backward, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive input")
    out_data = np.log(a.data)

    def _backward(g):
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), _backward, "log")


def xlogx(a: Tensor) -> Tensor:
    """x * ln(x) with the entropy convention 0 * ln(0) = 0.  Requires x >= 0."""
    if np.any(a.data < 0):
        raise ValueError("xlogx needs non-negative input")
    pos = a.data > 0
    out_data = np.zeros_like(a.data)
    out_data[pos] = a.data[pos] * np.log(a.data[pos])

    def _backward(g):
        local = np.zeros_like(a.data)
        local[pos] = np.log(a.data[pos]) + 1.0
        _accumulate(a, g * local)

    return _make(out_data, (a,), _backward, "xlogx")


def _softmax_data(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    out_data = _softmax_data(a.data, axis)

    def _backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - inner))

    return _make(out_data, (a,), _backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    # max subtraction keeps exp in range for any finite logits
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g):
        p = np.exp(out_data)
        _accumulate(a, g - p * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), _backward, "log_softmax")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    out_data = np.asarray(out_data)

    def _backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.ndim for ax in axes)
            shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
            g = g.reshape(shape)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), _backward, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax % a.ndim]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def _backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out_data, (a,), _backward, "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes).copy()
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(out_data, (a,), _backward, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    """Differentiable indexing: basic slicing plus integer-array gathers."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    norm = []
    advanced = False
    for i in idx:
        if isinstance(i, Tensor):
            i = i.data
        if isinstance(i, list):
            i = np.asarray(i)
        if isinstance(i, np.ndarray) and i.ndim > 0:
            if not (np.issubdtype(i.dtype, np.integer) or i.dtype == bool):
                raise TypeError("index arrays must be integer or boolean")
            advanced = True
        norm.append(i)
    norm = tuple(norm)
    out_data = np.array(a.data[norm])

    def _backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, norm, g)
        else:
            full[norm] += g
        _accumulate(a, full)

    return _make(out_data, (a,), _backward, "getitem")


def minimum(a: Tensor, bound: float) -> Tensor:
    """Elementwise min(a, bound) for scalar bound; zero gradient where a >= bound."""
    bound = float(bound)
    out_data = np.minimum(a.data, bound)

    def _backward(g):
        _accumulate(a, g * (a.data < bound))

    return _make(out_data, (a,), _backward, "minimum")


# ---------------------------------------------------------------------------
# dense kernels
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    counted = not _MAC_PAUSED
    _add_macs(m * k * n)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data @ b.data

    def _backward(g):
        if a.requires_grad:
            if counted:
                _add_macs(m * n * k)
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            if counted:
                _add_macs(k * m * n)
            _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), _backward, "matmul")


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError(f"batched_matmul needs 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"batch dimensions disagree: {a.shape} x {b.shape}")
    if a.shape[2] != b.shape[1]:
        raise ValueError(f"batched_matmul inner dimensions disagree: {a.shape} x {b.shape}")
    bsz, m, k = a.shape
    n = b.shape[2]
    counted = not _MAC_PAUSED
    _add_macs(bsz * m * k * n)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = np.matmul(a.data, b.data)

    def _backward(g):
        if a.requires_grad:
            if counted:
                _add_macs(bsz * m * n * k)
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, 1, 2)))
        if b.requires_grad:
            if counted:
                _add_macs(bsz * k * m * n)
            _accumulate(b, np.matmul(np.swapaxes(a.data, 1, 2), g))

    return _make(out_data, (a, b), _backward, "batched_matmul")


def _conv_out_size(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel does not fit the padded input")
    return ho, wo


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding, via im2col + block matmul."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d needs 4-D input and weight, got {x.shape} and {w.shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError("stride must be >= 1, padding >= 0, groups >= 1")
    b, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups or cout % groups:
        raise ValueError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g * groups != cin:
        raise ValueError(f"weight expects {cin_g * groups} input channels, input has {cin}")
    ho, wo = _conv_out_size(h, wd, kh, kw, stride, padding)
    cout_g = cout // groups
    counted = not _MAC_PAUSED
    _add_macs(b * cout * cin_g * kh * kw * ho * wo)

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    colsg = cols.reshape(b, groups, cin_g * kh * kw, ho * wo)
    wm = w.data.reshape(groups, cout_g, cin_g * kh * kw)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = np.einsum("gok,bgkn->bgon", wm, colsg, optimize=True).reshape(b, cout, ho, wo)

    def _backward(g):
        gout = g.reshape(b, groups, cout_g, ho * wo)
        if w.requires_grad:
            if counted:
                _add_macs(b * cout * cin_g * kh * kw * ho * wo)
            dwm = np.einsum("bgon,bgkn->gok", gout, colsg, optimize=True)
            _accumulate(w, dwm.reshape(w.shape))
        if x.requires_grad:
            if counted:
                _add_macs(b * cout * cin_g * kh * kw * ho * wo)
            dcols = np.einsum("gok,bgon->bgkn", wm, gout, optimize=True)
            dcols = dcols.reshape(b, cin, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
            _accumulate(x, dxp)

    return _make(out_data, (x, w), _backward, "conv2d")


def exemplar_conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Convolution with a dedicated kernel per batch instance.

    Realized by folding the batch into the channel dimension and running one
    grouped convolution with groups = batch size, so the multiply-accumulate
    cost is identical to a shared-weight convolution over the same batch.
    """
    if x.ndim != 4 or w.ndim != 5:
        raise ValueError(f"exemplar_conv2d needs 4-D input and 5-D weight, got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[0]:
        raise ValueError(f"batch dimensions disagree: input {x.shape[0]}, weight {w.shape[0]}")
    b, cin, h, wd = x.shape
    _, cout, w_cin, kh, kw = w.shape
    if w_cin != cin:
        raise ValueError(f"weight expects {w_cin} input channels, input has {cin}")
    xg = reshape(x, (1, b * cin, h, wd))
    wg = reshape(w, (b * cout, cin, kh, kw))
    out = conv2d(xg, wg, stride=stride, padding=padding, groups=b)
    return reshape(out, (b, cout) + out.shape[2:])


def _affine_views(x_shape: tuple[int, ...], param_ndim: int) -> tuple[int, ...]:
    # broadcast shape for the scale/bias over trailing spatial axes
    return tuple(x_shape[:param_ndim]) + (1,) * (len(x_shape) - param_ndim)


def affine(x: Tensor, scale: Tensor, bias: Tensor) -> Tensor:
    """Shared per-channel affine map: y[b, c, ...] = scale[c] * x[b, c, ...] + bias[c]."""
    if scale.ndim != 1 or bias.ndim != 1:
        raise ValueError("affine needs 1-D scale and bias")
    if x.ndim < 2 or x.shape[1] != scale.shape[0] or scale.shape != bias.shape:
        raise ValueError(f"affine shapes disagree: x {x.shape}, scale {scale.shape}, bias {bias.shape}")
    view = (1, scale.shape[0]) + (1,) * (x.ndim - 2)
    counted = not _MAC_PAUSED
    _add_macs(x.size)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = x.data * scale.data.reshape(view) + bias.data.reshape(view)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def _backward(g):
        if counted:
            _add_macs(2 * x.size)
        if x.requires_grad:
            _accumulate(x, g * scale.data.reshape(view))
        if scale.requires_grad:
            _accumulate(scale, (g * x.data).sum(axis=reduce_axes))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=reduce_axes))

    return _make(out_data, (x, scale, bias), _backward, "affine")


def exemplar_affine(x: Tensor, scale: Tensor, bias: Tensor) -> Tensor:
    """Affine map with dedicated scale and bias per batch instance.

    y[b, c, ...] = scale[b, c] * x[b, c, ...] + bias[b, c]; same
    multiply-accumulate count as the shared affine over the same input.
    """
    if scale.ndim != 2 or bias.ndim != 2:
        raise ValueError("exemplar_affine needs 2-D scale and bias")
    if x.ndim < 2 or x.shape[:2] != scale.shape or scale.shape != bias.shape:
        raise ValueError(
            f"exemplar_affine shapes disagree: x {x.shape}, scale {scale.shape}, bias {bias.shape}"
        )
    view = x.shape[:2] + (1,) * (x.ndim - 2)
    counted = not _MAC_PAUSED
    _add_macs(x.size)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = x.data * scale.data.reshape(view) + bias.data.reshape(view)
    reduce_axes = tuple(range(2, x.ndim))

    def _backward(g):
        if counted:
            _add_macs(2 * x.size)
        if x.requires_grad:
            _accumulate(x, g * scale.data.reshape(view))
        if scale.requires_grad:
            gs = (g * x.data).sum(axis=reduce_axes) if reduce_axes else g * x.data
            _accumulate(scale, gs)
        if bias.requires_grad:
            gb = g.sum(axis=reduce_axes) if reduce_axes else g.copy()
            _accumulate(bias, gb)

    return _make(out_data, (x, scale, bias), _backward, "exemplar_affine")
