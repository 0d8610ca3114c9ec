"""Minimal reverse-mode differentiation over rank-4 numpy arrays.

Every array is laid out as (batch, channel, height, width). Operations are
recorded on the active :class:`Tape` only when at least one input requires a
gradient, so code run outside a tape (teacher inference, evaluation) carries
no differentiation records at all.

Model state is float32; reductions accumulate in float64. Gradient checks run
the same graph in float64 so that central differences are meaningful.
"""
from __future__ import annotations

import builtins
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a validation pass finds NaN or inf values."""


_TAPES: list["Tape"] = []


def _active_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """Immutable rank-4 array, optionally tracked for differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor must be rank 4 (B, C, H, W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """Named learnable tensor with a gradient slot of identical shape."""

    def __init__(self, data, name: str, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def assign(self, values: np.ndarray):
        values = np.asarray(values, dtype=self.data.dtype)
        if values.shape != self.data.shape:
            raise ShapeError(f"{self.name}: cannot assign shape {values.shape} to {self.data.shape}")
        self.data = values.copy()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass
class _Node:
    name: str
    out: Tensor
    inputs: tuple
    vjp: Callable


class Tape:
    """Records operations in application order and replays them backwards.

    Use as a context manager; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[int, Parameter] = {}
        self._grads: dict[int, np.ndarray] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, name, out, inputs, vjp):
        self.nodes.append(_Node(name, out, tuple(inputs), vjp))
        for t in inputs:
            if isinstance(t, Parameter):
                self.leaves.setdefault(id(t), t)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Populate ``.grad`` of every recorded Parameter with d loss / d param.

        Gradients are overwritten, never accumulated, so replaying twice
        yields identical results.
        """
        if any(s != 1 for s in loss.shape):
            raise ShapeError(f"backward needs a scalar loss (all dims 1), got {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            in_grads = node.vjp(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=t.data.dtype)
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, p in self.leaves.items():
            g = grads.get(key)
            p.grad = np.zeros_like(p.data) if g is None else g.copy()
        self._grads = grads
        return grads

    def gradient(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward pass w.r.t. any recorded tensor."""
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def validate(self) -> list[str]:
        """Names of recorded operations whose outputs are not finite."""
        return [n.name for n in self.nodes if not np.all(np.isfinite(n.out.data))]


def backward(loss: Tensor, tape: Tape) -> dict[int, np.ndarray]:
    return tape.backward(loss)


def no_grad():
    """Context in which nothing is recorded (an empty tape is not pushed)."""
    return _NoGrad()


class _NoGrad:
    def __enter__(self):
        self._saved = list(_TAPES)
        _TAPES.clear()

    def __exit__(self, *exc):
        _TAPES.extend(self._saved)
        return False


def validate_finite(t: Tensor, what: str = "tensor"):
    if not np.all(np.isfinite(t.data)):
        bad = int(np.size(t.data) - np.count_nonzero(np.isfinite(t.data)))
        raise NonFiniteError(f"{what}: {bad} non-finite values")


# ---------------------------------------------------------------------------
# recording helpers


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    arr = np.asarray(x, dtype=dtype)
    while arr.ndim < 4:
        arr = arr[None]
    return Tensor(arr, dtype=dtype)


def _make(name: str, data: np.ndarray, inputs: Sequence, vjp: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(name, out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _binary_operands(a, b):
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return _as_tensor(a, like), _as_tensor(b, like)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("div", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def abs(a: Tensor) -> Tensor:  # noqa: A001
    """|a|; the subgradient at 0 is taken as 0."""
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a: Tensor) -> Tensor:
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make("log", out, (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a: Tensor) -> Tensor:
    """ELU with alpha fixed at 1."""
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, neg_part)
    return _make("elu", out, (a,), lambda g: (g * np.where(a.data > 0, 1.0, neg_part + 1.0),))


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient passes inside the closed interval, zero outside."""
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (a.data >= lo_v) & (a.data <= hi_v)
    return _make("clamp", np.clip(a.data, lo_v, hi_v), (a,), lambda g: (g * inside,))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where the constant mask ``cond`` holds, else ``b``."""
    a, b = _binary_operands(a, b)
    cond = np.asarray(cond, dtype=bool)
    return _make("where", np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)))


def unary(a: Tensor, fn: Callable, dfn: Callable, name: str = "unary") -> Tensor:
    """Elementwise ``fn`` with derivative ``dfn``, both taking the raw array."""
    return _make(name, fn(a.data), (a,), lambda g: (g * dfn(a.data),))


def spatial_min_over_set(tensors: Sequence[Tensor]) -> Tensor:
    """Per-element minimum over equally shaped tensors; ties route to the first."""
    if not tensors:
        raise ShapeError("spatial_min_over_set needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"spatial_min_over_set: shape {t.shape} != {shape}")
    stack = np.stack([t.data for t in tensors])
    idx = np.argmin(stack, axis=0)
    out = np.take_along_axis(stack, idx[None], axis=0)[0]
    return _make("min_over_set", out, tuple(tensors),
                 lambda g: tuple(np.where(idx == k, g, 0.0) for k in range(len(tensors))))


# ---------------------------------------------------------------------------
# structural


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    b, _, h, w = tensors[0].shape
    for t in tensors:
        if t.shape[0] != b or t.shape[2:] != (h, w):
            raise ShapeError(f"concat_channels: {t.shape} incompatible with batch {b}, size {h}x{w}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=1)
    return _make("concat", out, tuple(tensors),
                 lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors))))


def take_channels(a: Tensor, start: int, stop: int | None = None) -> Tensor:
    stop = start + 1 if stop is None else stop

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make("take_channels", a.data[:, start:stop], (a,), vjp)


def _reduce_axes(axis):
    if axis is None:
        return (0, 1, 2, 3)
    return (axis,) if isinstance(axis, int) else tuple(axis)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    axes = _reduce_axes(axis)
    out = a.data.sum(axis=axes, keepdims=True, dtype=np.float64).astype(a.dtype)
    return _make("sum", out, (a,), lambda g: (np.broadcast_to(g, a.shape),))


def mean(a: Tensor, axis=None) -> Tensor:
    """Mean with keepdims semantics, accumulated in float64."""
    axes = _reduce_axes(axis)
    count = math.prod(a.shape[i] for i in axes)
    out = a.data.mean(axis=axes, keepdims=True, dtype=np.float64).astype(a.dtype)
    return _make("mean", out, (a,), lambda g: (np.broadcast_to(g / count, a.shape),))


# ---------------------------------------------------------------------------
# spatial


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` is (C_out, C_in, k, k); ``bias`` is (1, C_out, 1, 1). The
    default padding (k - 1) // 2 keeps the spatial size at stride 1.
    """
    cout, cin, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weights expect {cin}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != {(1, cout, 1, 1)}")
    k = kh
    p = (k - 1) // 2 if padding is None else padding
    b, _, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = cols.shape[2], cols.shape[3]
    cols2 = cols.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * k * k)
    w2 = weight.data.reshape(cout, cin * k * k)
    # accumulate taps in a fixed (bias, channel, row, col) order so results do
    # not depend on the BLAS kernel's summation order
    acc = np.zeros((b * ho * wo, cout), dtype=np.result_type(x.dtype, weight.dtype))
    if bias is not None:
        acc += bias.data.reshape(1, cout)
    for t in range(cin * k * k):
        acc += cols2[:, t:t + 1] * w2[:, t]
    out = np.ascontiguousarray(acc.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2))

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
        gw = (g2.T @ cols2).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64).reshape(1, cout, 1, 1) if bias is not None else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(b, ho, wo, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[..., i, j]
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _make("conv2d", out, inputs, vjp if bias is not None else lambda g: vjp(g)[:2])


def bilinear_matrix(n_in: int, factor: int, dtype=np.float64) -> np.ndarray:
    """(n_in * factor, n_in) interpolation matrix, half-pixel-centre convention.

    Output index i samples the source at (i + 0.5) / factor - 0.5, clamped to
    the valid range.
    """
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        s = min(max((i + 0.5) / factor - 0.5, 0.0), n_in - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        f = s - i0
        m[i, i0] += 1.0 - f
        m[i, i1] += f
    return m


def _taps(n_in: int, factor: int, dtype):
    s = np.clip((np.arange(n_in * factor) + 0.5) / factor - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (s - i0).astype(dtype)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return _make("upsample", x.data.copy(), (x,), lambda g: (g,))
    ah = bilinear_matrix(x.shape[2], factor, x.dtype)
    aw = bilinear_matrix(x.shape[3], factor, x.dtype)
    # two-tap lerp along rows, then columns (exact order, no BLAS reductions)
    r0, r1, fr = _taps(x.shape[2], factor, x.dtype)
    c0, c1, fc = _taps(x.shape[3], factor, x.dtype)
    rows = (1 - fr)[:, None] * x.data[:, :, r0, :] + fr[:, None] * x.data[:, :, r1, :]
    out = rows[..., c0] * (1 - fc) + rows[..., c1] * fc
    return _make("upsample", out, (x,), lambda g: (ah.T @ g @ aw,))


SNAP_TOL = 1e-4


def grid_sample(x: Tensor, grid: Tensor) -> tuple[Tensor, np.ndarray]:
    """Bilinear sampling of ``x`` at pixel coordinates ``grid`` (B, 2, Ho, Wo).

    Channel 0 of the grid is x (column), channel 1 is y (row). Neighbours
    outside the source read as 0. The returned mask (B, 1, Ho, Wo) is 1 where
    the sample point lies inside [0, W-1] x [0, H-1], i.e. every neighbour
    with non-zero weight is inside; samples outside it return 0 and receive
    no gradient, as do non-finite coordinates.
    """
    if grid.shape[1] != 2:
        raise ShapeError(f"grid must have 2 channels (x, y), got {grid.shape[1]}")
    if grid.shape[0] != x.shape[0]:
        raise ShapeError(f"grid batch {grid.shape[0]} != input batch {x.shape[0]}")
    b, c, h, w = x.shape
    ho, wo = grid.shape[2], grid.shape[3]
    finite = np.isfinite(grid.data).all(axis=1)
    gx = np.where(finite, grid.data[:, 0], -10.0)
    gy = np.where(finite, grid.data[:, 1], -10.0)
    # points within SNAP_TOL of a pixel centre are that centre, so round-off from
    # the projection chain cannot turn an identity warp into a blur or drop borders
    rx, ry = np.rint(gx), np.rint(gy)
    gx = np.where(np.abs(gx - rx) <= SNAP_TOL, rx, gx)
    gy = np.where(np.abs(gy - ry) <= SNAP_TOL, ry, gy)
    mask = finite & (gx >= 0) & (gx <= w - 1) & (gy >= 0) & (gy <= h - 1)

    x0 = np.floor(gx)
    y0 = np.floor(gy)
    wx = (gx - x0).astype(x.dtype)
    wy = (gy - y0).astype(x.dtype)
    # padded source: index -1 and W / H map onto the zero border
    xi0 = np.clip(x0, -1, w).astype(np.int64) + 1
    yi0 = np.clip(y0, -1, h).astype(np.int64) + 1
    xi1 = np.clip(x0 + 1, -1, w).astype(np.int64) + 1
    yi1 = np.clip(y0 + 1, -1, h).astype(np.int64) + 1
    wp = w + 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1))).reshape(b, c, -1)
    idx = [(yi0 * wp + xi0), (yi0 * wp + xi1), (yi1 * wp + xi0), (yi1 * wp + xi1)]
    idx = [i.reshape(b, 1, ho * wo) for i in idx]
    vals = [np.take_along_axis(xp, np.broadcast_to(i, (b, c, ho * wo)), axis=2).reshape(b, c, ho, wo)
            for i in idx]
    v00, v01, v10, v11 = vals
    wx4 = wx[:, None]
    wy4 = wy[:, None]
    weights = [(1 - wx4) * (1 - wy4), wx4 * (1 - wy4), (1 - wx4) * wy4, wx4 * wy4]
    keep = mask[:, None].astype(x.dtype)
    out = (v00 * weights[0] + v01 * weights[1] + v10 * weights[2] + v11 * weights[3]) * keep

    def vjp(g):
        g = g * keep
        gin = None
        if x.requires_grad:
            size = b * c * xp.shape[2]
            base = (np.arange(b)[:, None, None] * c + np.arange(c)[None, :, None]) * xp.shape[2]
            flat_idx = np.concatenate([(base + i).ravel() for i in idx])
            flat_w = np.concatenate([(g * wt).reshape(b, c, -1).ravel() for wt in weights])
            acc = np.bincount(flat_idx, weights=flat_w, minlength=size)
            gin = acc.reshape(b, c, h + 2, w + 2)[:, :, 1:-1, 1:-1].astype(x.dtype)
        ggrid = None
        if grid.requires_grad:
            dgx = ((1 - wy4) * (v01 - v00) + wy4 * (v11 - v10)) * g
            dgy = ((1 - wx4) * (v10 - v00) + wx4 * (v11 - v01)) * g
            ggrid = np.stack([dgx.sum(axis=1), dgy.sum(axis=1)], axis=1)
            ggrid = np.where(finite[:, None], ggrid, 0.0)
        return gin, ggrid

    return _make("grid_sample", out, (x, grid), vjp), mask[:, None].astype(x.dtype)


def pad_reflect(x: Tensor) -> Tensor:
    """Reflective padding by one pixel on each spatial side (edge excluded)."""
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"pad_reflect needs spatial size >= 2x2, got {x.shape[2:]}")
    out = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")

    def vjp(g):
        gh = g[:, :, 1:-1, :].copy()
        gh[:, :, 1, :] += g[:, :, 0, :]
        gh[:, :, -2, :] += g[:, :, -1, :]
        gw = gh[:, :, :, 1:-1].copy()
        gw[:, :, :, 1] += gh[:, :, :, 0]
        gw[:, :, :, -2] += gh[:, :, :, -1]
        return (gw,)

    return _make("pad_reflect", out, (x,), vjp)


def avg_pool3(x: Tensor) -> Tensor:
    """3x3 mean with stride 1 and no padding."""
    h, w = x.shape[2] - 2, x.shape[3] - 2
    out = np.zeros(x.shape[:2] + (h, w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            out += x.data[:, :, i:i + h, j:j + w]
    out /= 9.0

    def vjp(g):
        gx = np.zeros_like(x.data)
        g9 = g / 9.0
        for i in range(3):
            for j in range(3):
                gx[:, :, i:i + h, j:j + w] += g9
        return (gx,)

    return _make("avg_pool3", out, (x,), vjp)


def diff_x(x: Tensor) -> Tensor:
    """Forward difference along width; the last column is zero."""
    out = np.zeros_like(x.data)
    out[..., :-1] = x.data[..., 1:] - x.data[..., :-1]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[..., 1:] += g[..., :-1]
        gx[..., :-1] -= g[..., :-1]
        return (gx,)

    return _make("diff_x", out, (x,), vjp)


def diff_y(x: Tensor) -> Tensor:
    """Forward difference along height; the last row is zero."""
    out = np.zeros_like(x.data)
    out[..., :-1, :] = x.data[..., 1:, :] - x.data[..., :-1, :]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[..., 1:, :] += g[..., :-1, :]
        gx[..., :-1, :] -= g[..., :-1, :]
        return (gx,)

    return _make("diff_y", out, (x,), vjp)


# ---------------------------------------------------------------------------
# finite-difference checking


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-4,
                    rtol: float = 1e-4, atol: float = 1e-7, max_entries: int | None = None,
                    seed: int = 0) -> float:
    """Compare analytic gradients of scalar ``fn(*inputs)`` with central differences.

    Returns the worst ``|a - n| / max(rtol * max(|a|, |n|), atol)`` ratio over
    checked entries; a value <= 1 means every entry is within tolerance. With
    ``max_entries`` a seeded random subset of each input is probed.
    """
    rng = np.random.default_rng(seed)
    with Tape() as tape:
        loss = fn(*inputs)
    tape.backward(loss)
    analytic = [tape.gradient(t).copy() for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        probe = np.arange(n) if max_entries is None or n <= max_entries else \
            np.sort(rng.choice(n, max_entries, replace=False))
        ga_flat = ga.reshape(-1)
        for i in probe:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = fn(*inputs).item()
            flat[i] = orig - h
            with no_grad():
                fm = fn(*inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = float(ga_flat[i])
            tol = max(rtol * max(builtins.abs(a), builtins.abs(num)), atol)
            worst = max(worst, builtins.abs(a - num) / tol)
    return worst

