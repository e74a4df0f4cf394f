"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays. Every differentiable op records its parents and a
backward closure on the output tensor; ``Tensor.backward`` replays the recorded
graph in reverse topological order. Broadcasting is restricted to scalars and
row-wise vector application ((R,C) op (C,)); anything else must be expanded
explicitly so the recorded graph stays auditable.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (inference / frozen passes)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, grad={self.requires_grad})"

    # -- graph machinery -----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def topo_order(self) -> list["Tensor"]:
        """Nodes reachable from self, parents before children (iterative DFS)."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        return order

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
        order = self.topo_order()
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out.op = op
    return out


def _row_reduce(g: np.ndarray, target_shape: tuple[int, ...]) -> np.ndarray:
    # reduce a (R,C) gradient onto a (C,) row-vector operand
    if g.shape == target_shape:
        return g
    return g.sum(axis=0)


def _check_addlike(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape == b.shape:
        return
    if b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
        return  # row-wise vector application
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        out_data = a.data + b

        def backward(g):
            if a.requires_grad:
                a._accumulate(g)

        return _make(out_data, (a,), backward, "add_scalar")
    b = _as_tensor(b, a.dtype)
    _check_addlike(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(_row_reduce(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return add(a, -b)
    b = _as_tensor(b, a.dtype)
    _check_addlike(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-_row_reduce(g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        bf = float(b)

        def backward_s(g):
            if a.requires_grad:
                a._accumulate(g * bf)

        return _make(a.data * np.asarray(bf, dtype=a.dtype), (a,), backward_s, "mul_scalar")
    b = _as_tensor(b, a.dtype)
    _check_addlike(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(_row_reduce(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-D, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree ({a.shape} x {b.shape})")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose: 2-D only")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(a.data.T.copy(), (a,), backward, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


# -- nonlinearities ----------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.02) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu: slope must lie in (0,1), got {slope}")
    x = _as_tensor(x)
    pos = x.data > 0  # subgradient at 0 is the slope
    out_data = np.where(pos, x.data, x.data * slope)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.where(pos, g, g * slope))

    return _make(out_data, (x,), backward, "leaky_relu")


def clamp(x: Tensor, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    """Hard clamp; gradient 1 inside [lo, hi], 0 outside."""
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.where(inside, g, 0.0))

    return _make(np.clip(x.data, lo, hi), (x,), backward, "clamp")


def clamp_st(x: Tensor, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    """Clamp with a straight-through gradient.

    Forward identical to clamp; backward passes the upstream gradient
    unchanged so saturated units keep learning instead of going dead.
    """
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)

    return _make(np.clip(x.data, lo, hi), (x,), backward, "clamp_st")


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive input")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return _make(np.log(x.data), (x,), backward, "log")


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by per-row max subtraction."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("softmax_rows: 2-D input required")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows: non-finite input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            x._accumulate(y * (g - dot))

    return _make(y, (x,), backward, "softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    """Row-wise log-softmax; stable where log(softmax) would underflow."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("log_softmax_rows: 2-D input required")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("log_softmax_rows: non-finite input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g - p * g.sum(axis=1, keepdims=True))

    return _make(y, (x,), backward, "log_softmax_rows")


# -- normalization -----------------------------------------------------------

LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row zero-mean/unit-variance normalization followed by affine gain/bias.

    ``gain`` and ``bias`` are (C,) vectors; they may be parameters (plain layer
    norm) or computed per-sample (adaptive layer norm) — gradients flow to them
    either way.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.data.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"layer_norm: need a 2-D input with >= 2 columns, got {x.shape}")
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError("layer_norm: gain/bias must be (C,) vectors")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data  # dL/dxhat
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))

    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward, "layer_norm")


def adaptive_layer_norm(x: Tensor, style_gain: Tensor, style_bias: Tensor,
                        eps: float = LAYER_NORM_EPS) -> Tensor:
    """layer_norm with externally supplied, input-dependent gain/bias vectors."""
    return layer_norm(x, style_gain, style_bias, eps=eps)


# -- reductions and losses ---------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(x.data.sum(), (x,), backward, "sum")


def sum_axis0(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("sum_axis0: 2-D input required")

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(x.data.sum(axis=0), (x,), backward, "sum_axis0")


def mean_axis0(x: Tensor) -> Tensor:
    n = x.shape[0]
    return mul(sum_axis0(x), 1.0 / n)


def max_axis0(x: Tensor) -> Tensor:
    """Column-wise max over rows; gradient routes to the (first) argmax row."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("max_axis0: 2-D input required")
    idx = x.data.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def backward(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            buf[idx, cols] = g
            x._accumulate(buf)

    return _make(x.data[idx, cols], (x,), backward, "max_axis0")


def l2_loss(a: Tensor, b: Tensor, mask: Tensor | None = None) -> Tensor:
    """Sum of (masked) squared differences. Gradient is exactly 0 where mask is 0."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l2_loss: shapes disagree ({a.shape} vs {b.shape})")
    m = None
    if mask is not None:
        mask = _as_tensor(mask)
        if mask.shape != a.shape:
            raise ShapeError(f"l2_loss: mask shape {mask.shape} != {a.shape}")
        m = mask.data
    diff = a.data - b.data
    if m is not None:
        val = (diff * diff * m).sum()
    else:
        val = (diff * diff).sum()

    def backward(g):
        base = 2.0 * diff if m is None else 2.0 * diff * m
        if a.requires_grad:
            a._accumulate(g * base)
        if b.requires_grad:
            b._accumulate(-g * base)

    parents = (a, b) if mask is None else (a, b, mask)
    return _make(np.asarray(val), parents, backward, "l2_loss")


# -- structure ops -----------------------------------------------------------


def concat_cols(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError("concat_cols: all parts must be 2-D with the same row count")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward, "concat_cols")


def concat_rows(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if any(p.data.ndim != 2 for p in parts) or len({p.shape[1] for p in parts}) != 1:
        raise ShapeError("concat_rows: all parts must be 2-D with the same column count")
    heights = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward, "concat_rows")


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= lo < hi <= x.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{lo},{hi}) for shape {x.shape}")

    def backward(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            buf[:, lo:hi] = g
            x._accumulate(buf)

    return _make(x.data[:, lo:hi].copy(), (x,), backward, "slice_cols")


def slice_rows(x: Tensor, lo: int, hi: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= lo < hi <= x.shape[0]):
        raise ShapeError(f"slice_rows: bad range [{lo},{hi}) for shape {x.shape}")

    def backward(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            buf[lo:hi] = g
            x._accumulate(buf)

    return _make(x.data[lo:hi].copy(), (x,), backward, "slice_rows")


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding); gradients scatter-add into the table."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError("gather_rows: table must be 2-D and indices 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("gather_rows: index out of range")

    def backward(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx, g)
            table._accumulate(buf)

    return _make(table.data[idx], (table,), backward, "gather_rows")


# -- spatial ops -------------------------------------------------------------


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride: int = 2, pad: int = 1) -> Tensor:
    """Strided 3-D convolution. x: (Cin,D,H,W), w: (Cout,Cin,k,k,k), b: (Cout,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise ShapeError("conv3d: x must be 4-D and w 5-D")
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    if x.shape[0] != cin:
        raise ShapeError(f"conv3d: channel mismatch ({x.shape[0]} vs {cin})")
    xp = np.pad(x.data, ((0, 0),) + ((pad, pad),) * 3) if pad else x.data
    do = (xp.shape[1] - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    win = win[:, ::stride, ::stride, ::stride]  # (Cin, Do,Ho,Wo, k,k,k)
    out = np.tensordot(w.data, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))  # (Cout,Do,Ho,Wo)
    out += b.data[:, None, None, None]

    def backward(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2, 3)))
        if w.requires_grad:
            gw = np.tensordot(g, win, axes=([1, 2, 3], [1, 2, 3]))  # (Cout,Cin,k,k,k)
            w._accumulate(gw)
        if x.requires_grad:
            t = np.tensordot(w.data, g, axes=([0], [0]))  # (Cin,k,k,k,Do,Ho,Wo)
            gx = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        gx[:, i:i + stride * do:stride,
                           j:j + stride * do:stride,
                           l:l + stride * do:stride] += t[:, i, j, l]
            if pad:
                gx = gx[:, pad:-pad, pad:-pad, pad:-pad]
            x._accumulate(gx)

    return _make(out, (x, w, b), backward, "conv3d")


def _interp_matrix(src: int, dst: int, dtype) -> np.ndarray:
    """Dense 1-D cell-center interpolation matrix (dst x src), clamped at ends."""
    u = (np.arange(dst, dtype=np.float64) + 0.5) * src / dst - 0.5
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    lo = np.clip(i0, 0, src - 1)
    hi = np.clip(i0 + 1, 0, src - 1)
    m = np.zeros((dst, src), dtype=dtype)
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def trilinear_upsample(x: Tensor, target_r: int) -> Tensor:
    """Cell-center-aligned trilinear interpolation of a (C,r,r,r) grid to target_r^3."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("trilinear_upsample: (C,r,r,r) input required")
    r = x.shape[1]
    if x.shape[2] != r or x.shape[3] != r:
        raise ShapeError("trilinear_upsample: grid must be cubic")
    if target_r < r:
        raise ShapeError(f"trilinear_upsample: target {target_r} < source {r}")
    m = _interp_matrix(r, target_r, x.dtype)

    def apply_axis(arr, mat, axis):
        moved = np.moveaxis(arr, axis, -1)
        out = moved @ mat.T
        return np.moveaxis(out, -1, axis)

    y = x.data
    for axis in (1, 2, 3):
        y = apply_axis(y, m, axis)

    def backward(g):
        if x.requires_grad:
            gx = g
            for axis in (1, 2, 3):
                gx = apply_axis(gx, m.T, axis)
            x._accumulate(gx)

    return _make(y, (x,), backward, "trilinear_upsample")
