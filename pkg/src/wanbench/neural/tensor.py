"""A small reverse-mode autodiff engine over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it
together with a closure that propagates the output gradient back to the
inputs.  ``Tape.backward`` replays those closures in exact reverse order,
accumulating gradients additively, so results do not depend on anything but
execution order.

Image tensors are laid out channels last, ``(batch, height, width, channels)``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "conv2d", "relu", "concat", "split", "add", "sub",
    "scale", "abs_mean",
]

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, k):
        return scale(self, k)

    __rmul__ = __mul__


class Tape:
    """Ordered record of executed primitives; use as a context manager."""

    def __init__(self):
        self.records: list = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()

    def backward(self, out: Tensor, grad=None):
        """Propagate ``grad`` (ones for a scalar) from ``out`` to every leaf."""
        if grad is None:
            if out.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(out.data)
        _accumulate(out, np.asarray(grad, dtype=out.data.dtype))
        for result, fn in reversed(self.records):
            if result.grad is not None:
                fn(result.grad)
        self.records.clear()


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _record(inputs, out: Tensor, backward):
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].records.append((out, backward))
    return out


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# convolution
#
# A 3x3 convolution is the sum of nine 1x1 convolutions of shifted inputs.
# On the zero-padded image flattened to ``(pixels, channels)`` every shift is
# a constant row offset, so each tap is one contiguous matrix product and no
# im2col buffer is needed.  Rows that wrap across image borders only ever
# land in the padding ring, which is discarded (forward) or zero (backward).


def _taps(w: int):
    return [(dy, dx, (dy - 1) * (w + 2) + dx - 1) for dy in range(3) for dx in range(3)]


def _pad_flat(a: np.ndarray) -> np.ndarray:
    return np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0))).reshape(-1, a.shape[-1])


def _shift_sum(src: np.ndarray, wt: np.ndarray, offsets, r: int) -> np.ndarray:
    """``out[i] = sum_k src[i + offsets[k]] @ wt[k]`` over interior rows.

    Thin inputs are gathered into one patch matrix, wide ones use a matmul
    per tap, which is cheaper once the channel count is no longer tiny.
    """
    m = src.shape[0]
    out = np.zeros((m, wt.shape[-1]), dtype=src.dtype)
    if src.shape[1] <= 2:
        patches = np.concatenate([src[r + off:m - r + off] for off in offsets], axis=1)
        out[r:m - r] = patches @ wt.reshape(-1, wt.shape[-1])
    else:
        for k, off in enumerate(offsets):
            out[r:m - r] += src[r + off:m - r + off] @ wt[k]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with a 1x1 or 3x3 kernel (3x3 zero-padded by 1).

    ``x`` is ``(N, H, W, C)``, ``weight`` is ``(out, in, k, k)`` and the
    output keeps the spatial size.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects (N, H, W, C), got {x.shape}")
    o, c, kh, kw = weight.shape
    if (kh, kw) not in ((1, 1), (3, 3)):
        raise ValueError(f"unsupported kernel {kh}x{kw}")
    n, h, w, cx = x.shape
    if cx != c:
        raise ValueError(f"conv2d: input has {cx} channels, weight expects {c}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
    wt = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0))  # (k, k, in, out)
    if kh == 1:
        y = x.data.reshape(-1, c) @ wt[0, 0]
        xf = None
    else:
        xf = _pad_flat(x.data)
        yf = _shift_sum(xf, wt.reshape(9, c, o), [t[2] for t in _taps(w)], w + 3)
        y = yf.reshape(n, h + 2, w + 2, o)[:, 1:-1, 1:-1]
    y = np.ascontiguousarray(y).reshape(n, h, w, o)
    if bias is not None:
        y += bias.data
    out = Tensor(y)

    def backward(g):
        if kh == 1:
            g2 = g.reshape(-1, o)
            if weight.requires_grad:
                gw = x.data.reshape(-1, c).T @ g2
                _accumulate(weight, np.ascontiguousarray(gw.T).reshape(o, c, 1, 1))
            if bias is not None and bias.requires_grad:
                _accumulate(bias, g2.sum(axis=0))
            if x.requires_grad:
                _accumulate(x, (g2 @ wt[0, 0].T).reshape(x.shape))
            return
        gf = _pad_flat(g)
        m = gf.shape[0]
        r = w + 3
        if weight.requires_grad:
            gw = np.empty_like(wt)
            for dy, dx, off in _taps(w):
                gw[dy, dx] = xf[r + off:m - r + off].T @ gf[r:m - r]
            _accumulate(weight, np.ascontiguousarray(gw.transpose(3, 2, 0, 1)))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.reshape(-1, o).sum(axis=0))
        if x.requires_grad:
            # padding rows of gf are zero, so gathering at -offset is exact
            wtt = np.ascontiguousarray(wt.reshape(9, c, o).transpose(0, 2, 1))
            gx = _shift_sum(gf, wtt, [-t[2] for t in _taps(w)], r)
            _accumulate(x, np.ascontiguousarray(gx.reshape(n, h + 2, w + 2, c)[:, 1:-1, 1:-1]))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(inputs, out, backward)


# ---------------------------------------------------------------------------
# elementwise and structural primitives

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.data.dtype, copy=False))

    def backward(g):
        _accumulate(x, np.where(mask, g, 0).astype(g.dtype, copy=False))

    return _record((x,), out, backward)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, part)

    return _record(tensors, out, backward)


def split(x: Tensor, sizes, axis: int = -1) -> list[Tensor]:
    """Inverse of :func:`concat`: split into pieces of the given sizes."""
    if sum(sizes) != x.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not sum to {x.shape[axis]}")
    bounds = np.cumsum(sizes)[:-1]
    outs = []
    for k, part in enumerate(np.split(x.data, bounds, axis=axis)):
        t = Tensor(part.copy())
        start = 0 if k == 0 else bounds[k - 1]

        def backward(g, start=start, size=sizes[k]):
            full = np.zeros_like(x.data)
            idx = [slice(None)] * x.data.ndim
            idx[axis] = slice(start, start + size)
            full[tuple(idx)] = g
            _accumulate(x, full)

        outs.append(_record((x,), t, backward))
    return outs


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _record((a, b), out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _record((a, b), out, backward)


def scale(a: Tensor, k: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(k))

    def backward(g):
        _accumulate(a, g * g.dtype.type(k))

    return _record((a,), out, backward)


def abs_mean(x: Tensor, per: int | None = None) -> Tensor:
    """Mean absolute value.

    With ``per`` set, the sum is divided by ``per`` instead of the element
    count (e.g. the pixels of one image when summing a batch).
    """
    denom = x.data.size if per is None else per
    out = Tensor(np.asarray(np.abs(x.data).sum() / denom, dtype=x.data.dtype))

    def backward(g):
        _accumulate(x, (np.sign(x.data) * (g / denom)).astype(x.data.dtype, copy=False))

    return _record((x,), out, backward)
