"""Dense tensors with reverse-mode automatic differentiation.

Values are contiguous row-major numpy arrays (float32 for model paths,
float64 for gradient checking). Every primitive that sees an input with
``requires_grad=True`` records a backward closure on its output; a
:class:`Tape` built from a root tensor replays those closures in reverse
topological order. Tensors are treated as immutable once they appear in a
graph; optimizers update leaf ``.data`` buffers between graphs.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import special as _special

from .errors import ConfigError, DimensionError, NumericsError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "param",
    "set_finite_checks",
    "finite_checks_enabled",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "scale",
    "pow_const",
    "matmul",
    "reshape",
    "permute",
    "roll",
    "concat",
    "narrow",
    "split",
    "gather_rows",
    "sum_",
    "mean",
    "softmax",
    "layer_norm",
    "gelu",
    "sigmoid",
    "conv2d",
    "depthwise_conv2d",
    "bilinear_sample",
    "global_avg_pool",
    "upsample2x",
]

_FINITE_CHECKS = False


def _contig(arr: np.ndarray) -> np.ndarray:
    # ascontiguousarray promotes 0-d to 1-d; preserve scalar shapes
    if arr.ndim == 0:
        return arr if arr.flags["C_CONTIGUOUS"] else arr.copy()
    return np.ascontiguousarray(arr)


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation after every primitive (off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


class Tensor:
    """A dense n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if arr.dtype == np.int64 else np.float32)
        self.data = _contig(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # ---- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def is_leaf(self) -> bool:
        return self.requires_grad and not self._parents

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # ---- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, as_tensor(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def permute(self, *axes):
        return permute(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    # ---- autodiff ------------------------------------------------------------

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Run reverse-mode accumulation from this tensor (see :class:`Tape`)."""
        Tape(self).backward(seed)


def as_tensor(value, dtype=None) -> Tensor:
    """Wrap a value as a constant tensor, preserving float dtype unless given."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def param(data, dtype=None) -> Tensor:
    """A leaf tensor that collects gradients (a trainable parameter)."""
    return Tensor(data, dtype=dtype, requires_grad=True)


class Tape:
    """Topologically ordered record of the primitives reachable from a root.

    The order is the deterministic post-order of an iterative DFS over
    recorded parents, so replaying the tape twice (with grads cleared in
    between) produces bit-identical gradients.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.root = root
        self.order = order  # parents precede consumers

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        root = self.root
        if seed is None:
            if root.data.size != 1:
                raise UsageError(
                    f"backward() without a seed needs a scalar root, got shape {root.shape}"
                )
            seed = np.ones_like(root.data)
        else:
            seed = np.asarray(seed, dtype=root.data.dtype)
            if seed.shape != root.data.shape:
                raise DimensionError(f"seed shape {seed.shape} != root shape {root.data.shape}")
        # Interior grads restart at None each replay; leaves accumulate.
        for node in self.order:
            if node._parents:
                node.grad = None
        _accumulate(root, seed)
        for node in reversed(self.order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def parameters(self) -> list[Tensor]:
        return [t for t in self.order if t.is_leaf()]


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError("non-finite values produced by a tensor primitive")
    out = Tensor.__new__(Tensor)
    out.data = _contig(data)
    out.grad = None
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise DimensionError(f"mixed dtypes {sorted(str(d) for d in dtypes)}; cast inputs explicitly")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _result(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * a.data.dtype.type(s)

    def backward(g):
        _accumulate(a, g * a.data.dtype.type(s))

    return _result(data, (a,), backward)


def pow_const(a: Tensor, exponent: float) -> Tensor:
    """Elementwise a**p for a constant p (used for sqrt / reciprocal)."""
    p = float(exponent)
    data = a.data ** p

    def backward(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra / layout
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:  # batch dims that do not broadcast
        raise DimensionError(f"matmul batch dims incompatible: {a.shape} x {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _result(data, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from exc

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(data, (a,), backward)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for ndim {a.ndim}")
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, np.ascontiguousarray(np.transpose(g, inverse)))

    return _result(data, (a,), backward)


def roll(a: Tensor, shifts, axes) -> Tensor:
    shifts = tuple(int(s) for s in (shifts if isinstance(shifts, (tuple, list)) else (shifts,)))
    axes = tuple(int(ax) for ax in (axes if isinstance(axes, (tuple, list)) else (axes,)))
    data = np.roll(a.data, shifts, axis=axes)
    inverse = tuple(-s for s in shifts)

    def backward(g):
        _accumulate(a, np.roll(g, inverse, axis=axes))

    return _result(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat of an empty sequence")
    _check_same_dtype(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                _accumulate(t, g[tuple(index)])

    return _result(data, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    axis = int(axis)
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of {a.shape}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _result(data, (a,), backward)


def split(a: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis {axis} of {a.shape}")
    pieces, start = [], 0
    for size in sizes:
        pieces.append(narrow(a, axis, start, size))
        start += size
    return pieces


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a 2-d table by integer index (embedding-style lookup)."""
    if table.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-d table, got {table.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise DimensionError(f"gather index out of range [0, {table.shape[0]})")
    data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        _accumulate(table, gt)

    return _result(data, (table,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        _accumulate(a, np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False))

    return _result(data, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return scale(sum_(a, axis=axes, keepdims=keepdims), 1.0 / count)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, C] spatial mean."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects [B,C,H,W], got {x.shape}")
    return mean(x, axis=(2, 3))


# ---------------------------------------------------------------------------
# nonlinearities / normalization
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (g - inner))

    return _result(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    data = _special.expit(x.data)

    def backward(g):
        _accumulate(x, g * data * (1.0 - data))

    return _result(data, (x,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + _special.erf(x.data * _INV_SQRT2))
    data = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        _accumulate(x, g * (cdf + x.data * pdf))

    return _result(data, (x,), backward)


def layer_norm(
    x: Tensor,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    dim = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta)):
        if p is not None and p.shape != (dim,):
            raise DimensionError(f"{name} shape {p.shape} != ({dim},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    data = xhat
    if gamma is not None:
        data = data * gamma.data
    if beta is not None:
        data = data + beta.data

    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def backward(g):
        g_hat = g * gamma.data if gamma is not None else g
        if x.requires_grad:
            m1 = g_hat.mean(axis=-1, keepdims=True)
            m2 = (g_hat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (g_hat - m1 - xhat * m2))
        lead = tuple(range(x.ndim - 1))
        if gamma is not None and gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=lead))
        if beta is not None and beta.requires_grad:
            _accumulate(beta, g.sum(axis=lead))

    return _result(data, parents, backward)


# ---------------------------------------------------------------------------
# spatial primitives
# ---------------------------------------------------------------------------

def _conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise DimensionError(f"kernel {k} larger than padded input {size + 2 * padding}")
    if span % stride != 0:
        raise DimensionError(
            f"conv output size not exact: (size={size} + 2*pad={padding} - k={k}) "
            f"not divisible by stride={stride}"
        )
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Standard cross-correlation: x [B,C,H,W], w [O,C,kh,kw] -> [B,O,H',W']."""
    _check_same_dtype(x, w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d x and w, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"conv2d channel mismatch: x has {C}, w expects {Cw}")
    Ho = _conv_out_size(H, kh, stride, padding)
    Wo = _conv_out_size(W, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((B, O, Ho, Wo), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, :, dy : dy + stride * (Ho - 1) + 1 : stride,
                         dx : dx + stride * (Wo - 1) + 1 : stride]
            out += np.einsum("oc,bchw->bohw", w.data[:, :, dy, dx], patch, optimize=True)

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
        for dy in range(kh):
            for dx in range(kw):
                sl = (
                    slice(None),
                    slice(None),
                    slice(dy, dy + stride * (Ho - 1) + 1, stride),
                    slice(dx, dx + stride * (Wo - 1) + 1, stride),
                )
                if w.requires_grad:
                    gw[:, :, dy, dx] = np.einsum("bohw,bchw->oc", g, xp[sl], optimize=True)
                if x.requires_grad:
                    gxp[sl] += np.einsum("oc,bohw->bchw", w.data[:, :, dy, dx], g, optimize=True)
        if x.requires_grad:
            _accumulate(x, gxp[:, :, padding : padding + H, padding : padding + W])
        if w.requires_grad:
            _accumulate(w, gw)

    return _result(out, (x, w), backward)


def depthwise_conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel convolution: x [B,C,H,W], w [C,kh,kw] -> [B,C,H',W']."""
    _check_same_dtype(x, w)
    if x.ndim != 4 or w.ndim != 3:
        raise DimensionError(f"depthwise_conv2d expects 4-d x and 3-d w, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"depthwise channel mismatch: x has {C}, w has {Cw}")
    Ho = _conv_out_size(H, kh, stride, padding)
    Wo = _conv_out_size(W, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, :, dy : dy + stride * (Ho - 1) + 1 : stride,
                         dx : dx + stride * (Wo - 1) + 1 : stride]
            out += patch * w.data[None, :, dy, dx, None, None]

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
        for dy in range(kh):
            for dx in range(kw):
                sl = (
                    slice(None),
                    slice(None),
                    slice(dy, dy + stride * (Ho - 1) + 1, stride),
                    slice(dx, dx + stride * (Wo - 1) + 1, stride),
                )
                if w.requires_grad:
                    gw[:, dy, dx] = (g * xp[sl]).sum(axis=(0, 2, 3))
                if x.requires_grad:
                    gxp[sl] += g * w.data[None, :, dy, dx, None, None]
        if x.requires_grad:
            _accumulate(x, gxp[:, :, padding : padding + H, padding : padding + W])
        if w.requires_grad:
            _accumulate(w, gw)

    return _result(out, (x, w), backward)


def bilinear_sample(x: Tensor, coords: Tensor) -> Tensor:
    """Sample x [B,C,H,W] at real-valued (y, x) positions coords [B,2,Ho,Wo].

    Positions outside [0, H-1] x [0, W-1] read zero, matching zero-padded
    convolution. Differentiable in both the image and the coordinates; at
    exactly-integer coordinates the coordinate gradient takes the
    right-continuous branch.
    """
    _check_same_dtype(x, coords)
    if x.ndim != 4 or coords.ndim != 4 or coords.shape[1] != 2:
        raise DimensionError(
            f"bilinear_sample expects x [B,C,H,W] and coords [B,2,Ho,Wo], got {x.shape}, {coords.shape}"
        )
    B, C, H, W = x.shape
    if coords.shape[0] != B:
        raise DimensionError(f"batch mismatch: x {x.shape} vs coords {coords.shape}")
    _, _, Ho, Wo = coords.shape
    cy = coords.data[:, 0]
    cx = coords.data[:, 1]
    y0 = np.floor(cy)
    x0 = np.floor(cx)
    ty = (cy - y0)[:, None]  # [B,1,Ho,Wo] broadcast over channels
    tx = (cx - x0)[:, None]
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    bidx = np.arange(B)[:, None, None]

    corners = []
    for oy, wy in ((0, 1.0 - ty), (1, ty)):
        for ox, wx in ((0, 1.0 - tx), (1, tx)):
            yi = y0 + oy
            xi = x0 + ox
            valid = ((yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)).astype(x.dtype)[:, None]
            yc = np.clip(yi, 0, H - 1)
            xc = np.clip(xi, 0, W - 1)
            corners.append((yc, xc, wy * wx, valid, oy, ox))

    # Gather once per corner: x[b, :, yc, xc] -> [B, Ho, Wo, C] -> [B, C, Ho, Wo]
    def _gather(yc, xc):
        g = x.data[bidx, :, yc, xc]  # [B, Ho, Wo, C]
        return np.ascontiguousarray(g.transpose(0, 3, 1, 2))

    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    gathered = []
    for yc, xc, wgt, valid, _, _ in corners:
        vals = _gather(yc, xc) * valid
        gathered.append(vals)
        out += wgt * vals

    def backward(g):
        if x.requires_grad:
            gx_flat = np.zeros(B * C * H * W, dtype=x.dtype)
            chan = np.arange(C, dtype=np.int64)[None, :, None, None]
            for (yc, xc, wgt, valid, _, _), _vals in zip(corners, gathered):
                contrib = g * (wgt * valid)
                flat = (((bidx[:, None] * C + chan) * H + yc[:, None]) * W + xc[:, None])
                gx_flat += np.bincount(
                    flat.ravel(), weights=contrib.ravel(), minlength=gx_flat.size
                ).astype(x.dtype, copy=False)
            _accumulate(x, gx_flat.reshape(B, C, H, W))
        if coords.requires_grad:
            gcy = np.zeros((B, Ho, Wo), dtype=x.dtype)
            gcx = np.zeros((B, Ho, Wo), dtype=x.dtype)
            for (yc, xc, wgt, valid, oy, ox), vals in zip(corners, gathered):
                gv = (g * vals).sum(axis=1)  # [B,Ho,Wo]; vals already masked
                dy = (1.0 if oy == 1 else -1.0) * (tx if ox == 1 else 1.0 - tx)[:, 0]
                dx = (1.0 if ox == 1 else -1.0) * (ty if oy == 1 else 1.0 - ty)[:, 0]
                gcy += gv * dy
                gcx += gv * dx
            _accumulate(coords, np.stack([gcy, gcx], axis=1))

    return _result(out, (x, coords), backward)


def upsample2x(x: Tensor) -> Tensor:
    """2x nearest-neighbor upsampling of [B,C,H,W]."""
    if x.ndim != 4:
        raise DimensionError(f"upsample2x expects [B,C,H,W], got {x.shape}")
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        B, C, H2, W2 = g.shape
        gr = g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5))
        _accumulate(x, gr)

    return _result(data, (x,), backward)
