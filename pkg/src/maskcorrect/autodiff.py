"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: every operation that touches a tensor requiring
gradients appends an op record to an implicit graph (tensors link to the op
that produced them, ops link to their input tensors). ``grad`` walks that
graph in reverse topological order.

Backward rules are themselves written in terms of tensor operations. When
``grad`` is called with ``create_graph=True`` the backward pass is recorded
like any forward pass, so the resulting gradients are graph tensors that can
be differentiated again. That second-order capability is what lets a
one-step virtual SGD update stay differentiable with respect to the
parameters that shaped its gradient.

Scope is deliberately narrow: no general broadcasting (elementwise binary
ops accept equal shapes or a 0-d scalar operand), no fusion, CPU only,
float64 only. Every op validates that its output is finite and raises
``DivergenceError`` otherwise; NaN is never propagated silently.
"""

from __future__ import annotations

import contextlib
import weakref
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradMap",
    "DivergenceError",
    "tensor",
    "as_tensor",
    "zeros_like",
    "no_grad",
    "grad",
    "functional_sgd_step",
    "conv2d",
    "activation",
    "relu",
    "sigmoid",
    "softplus",
    "spatial_resample",
    "maxpool2",
    "upsample_nearest2",
    "concat_channels",
    "bce_with_logits",
]


class DivergenceError(ArithmeticError):
    """A tensor operation produced NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, opname: str) -> None:
    # min/max propagate NaN and catch +-Inf in two allocation-free passes
    if arr.size == 0:
        return
    lo, hi = arr.min(), arr.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise DivergenceError(f"non-finite values produced by {opname}")


class Tensor:
    """Immutable dense array, optionally attached to a differentiation graph.

    ``data`` is a read-only float64 ndarray. ``node`` is the op record that
    produced this tensor, or None for leaves and constants.
    """

    __slots__ = ("data", "requires_grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: _Op | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return _wrap(self.data, None, False)

    def sum(self) -> "Tensor":
        return _apply(_SumAll, self)

    def mean(self) -> "Tensor":
        return _apply(_SumAll, self) * (1.0 / self.size)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return _apply(_Reshape, self, shape=tuple(shape))

    def __add__(self, other):
        return _apply(_Add, self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _apply(_Sub, self, as_tensor(other))

    def __rsub__(self, other):
        return _apply(_Sub, as_tensor(other), self)

    def __mul__(self, other):
        return _apply(_Mul, self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return _apply(_Neg, self)

    def __repr__(self):
        g = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{g})\n{self.data!r}"


GradMap = dict[str, Tensor]


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a leaf tensor (copies its input)."""
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros(t.shape))


def _wrap(arr: np.ndarray, node, requires_grad: bool) -> Tensor:
    t = Tensor.__new__(Tensor)
    arr = np.asarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    t.data = arr
    t.requires_grad = requires_grad
    t.node = node
    return t


def _apply(op_cls, *inputs: Tensor, **attrs) -> Tensor:
    op = op_cls(**attrs)
    out_data = op.forward(*(t.data for t in inputs))
    if op_cls._can_create_nonfinite:
        _check_finite(out_data, op_cls.__name__)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        op.inputs = inputs
        out = _wrap(out_data, op, True)
        # weak link back to the output: graphs stay acyclic for refcounting,
        # so a dropped loss frees its whole graph without cycle collection
        op.out_ref = weakref.ref(out)
        return out
    return _wrap(out_data, None, False)


class _Op:
    """One recorded operation: the graph node type.

    The differentiation graph is the set of these records linked through
    ``inputs``; a topological order over them is recovered on demand by
    ``grad``. ``backward`` maps the output cotangent to input cotangents and
    is composed of tensor ops, so it can itself be recorded.

    ``_needs`` is set transiently by ``grad`` to the per-input mask of which
    cotangents are actually wanted; backward implementations consult it via
    ``_need`` to skip dead branches (a kernel-gradient subgraph can be
    arbitrarily expensive, so pruning is a correctness-of-cost matter, not
    just a nicety).

    ``_can_create_nonfinite`` is False for ops that only move, select, or
    zero-fill existing values; those skip the per-op finite scan because
    finite inputs guarantee a finite output.
    """

    inputs: tuple[Tensor, ...] = ()
    out_ref = None
    _needs: tuple[bool, ...] | None = None
    _can_create_nonfinite = True

    def _need(self, i: int) -> bool:
        if self._needs is not None:
            return self._needs[i]
        return self.inputs[i].requires_grad

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: Tensor) -> tuple:
        raise NotImplementedError


def _scalar_adjoint(g: Tensor, operand: Tensor) -> Tensor:
    # cotangent for a 0-d operand of an elementwise op with a larger partner
    if operand.shape == g.shape:
        return g
    return g.sum()


class _Add(_Op):
    def forward(self, a, b):
        self._sa, self._sb = a.shape, b.shape
        if a.shape != b.shape and a.shape != () and b.shape != ():
            raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
        return a + b

    def backward(self, g):
        a, b = self.inputs
        return _scalar_adjoint(g, a), _scalar_adjoint(g, b)


class _Sub(_Op):
    def forward(self, a, b):
        if a.shape != b.shape and a.shape != () and b.shape != ():
            raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
        return a - b

    def backward(self, g):
        a, b = self.inputs
        return _scalar_adjoint(g, a), _scalar_adjoint(-g, b)


class _Mul(_Op):
    def forward(self, a, b):
        if a.shape != b.shape and a.shape != () and b.shape != ():
            raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        return a * b

    def backward(self, g):
        a, b = self.inputs
        ga = _scalar_adjoint(g * b, a) if self._need(0) else None
        gb = _scalar_adjoint(g * a, b) if self._need(1) else None
        return ga, gb


class _Neg(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class _MulConst(_Op):
    """Multiply by a constant gate array (finite values only, 0/1 masks)."""

    _can_create_nonfinite = False

    def __init__(self, const: np.ndarray):
        self.const = const

    def forward(self, a):
        return a * self.const

    def backward(self, g):
        return (_apply(_MulConst, g, const=self.const),)


class _SumAll(_Op):
    def forward(self, a):
        self._shape = a.shape
        return np.asarray(a.sum())

    def backward(self, g):
        return (_apply(_BroadcastTo, g, shape=self._shape),)


class _SumAxes(_Op):
    """Sum over ``axes`` keeping reduced dims as size 1."""

    def __init__(self, axes: tuple[int, ...]):
        self.axes = axes

    def forward(self, a):
        self._shape = a.shape
        return a.sum(axis=self.axes, keepdims=True)

    def backward(self, g):
        return (_apply(_BroadcastTo, g, shape=self._shape),)


class _BroadcastTo(_Op):
    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape

    def forward(self, a):
        self._in_shape = a.shape
        return np.broadcast_to(a, self.shape).copy()

    def backward(self, g):
        if self._in_shape == ():
            return (g.sum(),)
        axes = tuple(i for i, d in enumerate(self._in_shape) if d == 1 and self.shape[i] != 1)
        return (_apply(_SumAxes, g, axes=axes),)


class _Reshape(_Op):
    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape

    def forward(self, a):
        self._in_shape = a.shape
        return a.reshape(self.shape)

    def backward(self, g):
        return (g.reshape(self._in_shape),)


class _Pad2d(_Op):
    _can_create_nonfinite = False

    """Zero-pad (positive) or crop (negative) the two spatial axes."""

    def __init__(self, pad: tuple[int, int]):
        self.pad = pad

    def forward(self, a):
        py, px = self.pad
        out = a
        if py > 0 or px > 0:
            out = np.pad(out, ((0, 0), (0, 0), (max(py, 0),) * 2, (max(px, 0),) * 2))
        if py < 0:
            out = out[:, :, -py:py, :]
        if px < 0:
            out = out[:, :, :, -px:px]
        return out

    def backward(self, g):
        py, px = self.pad
        return (_apply(_Pad2d, g, pad=(-py, -px)),)


class _FlipHW(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        return a[:, :, ::-1, ::-1].copy()

    def backward(self, g):
        return (_apply(_FlipHW, g),)


class _Swap01(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        return np.ascontiguousarray(np.swapaxes(a, 0, 1))

    def backward(self, g):
        return (_apply(_Swap01, g),)


# Reusable im2col workspaces keyed by shape. Only scratch that dies inside a
# single forward call goes here; anything stored in the graph is fresh.
_conv_scratch: dict[tuple, np.ndarray] = {}


def _scratch(key: tuple, shape: tuple[int, ...]) -> np.ndarray:
    buf = _conv_scratch.get((key, shape))
    if buf is None:
        if len(_conv_scratch) >= 64:
            _conv_scratch.clear()
        buf = np.empty(shape)
        _conv_scratch[(key, shape)] = buf
    return buf


class _Conv2dRaw(_Op):
    """Cross-correlation, stride 1, no bias, per-axis integer padding.

    im2col, with the window-gather axis order chosen so the two largest
    spatial axes are copied as long runs: taps innermost when the kernel is
    small (ordinary convolution), output positions innermost when the
    "kernel" is large (the kernel-gradient convolution in backward). The
    wrong order costs 3-4x in gather time on one core.
    """

    def __init__(self, pad: tuple[int, int]):
        self.pad = pad

    def forward(self, x, k):
        n, cin, h, w = x.shape
        cout, cink, kh, kw = k.shape
        if cink != cin:
            raise ValueError(f"conv2d: input has {cin} channels, kernel expects {cink}")
        py, px = self.pad
        ho, wo = h + 2 * py - kh + 1, w + 2 * px - kw + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"conv2d: kernel {kh}x{kw} with padding {self.pad} does not fit {h}x{w}")
        xp = np.pad(x, ((0, 0), (0, 0), (py, py), (px, px))) if (py or px) else x
        sn, sc, sh, sw = xp.strides
        if kh * kw <= ho * wo:
            win = np.lib.stride_tricks.as_strided(
                xp, shape=(cin, kh, kw, n, ho, wo), strides=(sc, sh, sw, sn, sh, sw)
            )
            cols = _scratch("cols", win.shape)
            np.copyto(cols, win)
            prod = _scratch("prod", (cout, n, ho, wo))
            np.matmul(
                k.reshape(cout, cin * kh * kw),
                cols.reshape(cin * kh * kw, n * ho * wo),
                out=prod.reshape(cout, n * ho * wo),
            )
            # ascontiguousarray would be a no-op view of the scratch buffer
            # whenever n or cout is 1 (size-1 axes satisfy the contiguity
            # check), and the next conv would clobber it. Always copy out.
            out = np.empty((n, cout, ho, wo))
            np.copyto(out, prod.swapaxes(0, 1))
            return out
        win = np.lib.stride_tricks.as_strided(
            xp, shape=(n, ho, wo, cin, kh, kw), strides=(sn, sh, sw, sc, sh, sw)
        )
        cols = _scratch("cols", win.shape)
        np.copyto(cols, win)
        prod = _scratch("prod2", (n, ho, wo, cout))
        np.matmul(
            cols.reshape(n * ho * wo, cin * kh * kw),
            k.reshape(cout, cin * kh * kw).T,
            out=prod.reshape(n * ho * wo, cout),
        )
        out = np.empty((n, cout, ho, wo))
        np.copyto(out, prod.transpose(0, 3, 1, 2))
        return out

    def backward(self, g):
        x, k = self.inputs
        kh, kw = k.shape[2], k.shape[3]
        py, px = self.pad
        gx = gk = None
        if self._need(0):
            # dL/dx: full correlation of the cotangent with the flipped kernel
            qy, qx = kh - 1 - py, kw - 1 - px
            gsrc = g
            if qy < 0 or qx < 0:
                gsrc = _apply(_Pad2d, g, pad=(min(qy, 0), min(qx, 0)))
                qy, qx = max(qy, 0), max(qx, 0)
            gx = _apply(_Conv2dRaw, gsrc, _apply(_Swap01, _apply(_FlipHW, k)), pad=(qy, qx))
        if self._need(1):
            gk = _apply(_ConvKernelGrad, x, g, pad=(py, px))
        return gx, gk


class _ConvKernelGrad(_Op):
    """dL/dk of a stride-1 cross-correlation: contract the padded input's
    tap windows against the output cotangent over batch and position.

    Done in place rather than by axis-swapped _Conv2dRaw calls; that route
    spends more on the three transposed copies than on the GEMM itself.
    """

    def __init__(self, pad: tuple[int, int]):
        self.pad = pad

    def forward(self, x, g):
        n, cin, h, w = x.shape
        cout, ho, wo = g.shape[1], g.shape[2], g.shape[3]
        py, px = self.pad
        kh, kw = h + 2 * py - ho + 1, w + 2 * px - wo + 1
        xp = np.pad(x, ((0, 0), (0, 0), (py, py), (px, px))) if (py or px) else x
        sn, sc, sh, sw = xp.strides
        win = np.lib.stride_tricks.as_strided(
            xp, shape=(cin, kh, kw, n, ho, wo), strides=(sc, sh, sw, sn, sh, sw)
        )
        cols = _scratch("kg_cols", win.shape)
        np.copyto(cols, win)
        gmat = _scratch("kg_g", (cout, n, ho, wo))
        np.copyto(gmat, g.swapaxes(0, 1))
        out = np.empty((cout, cin * kh * kw))
        np.matmul(
            gmat.reshape(cout, n * ho * wo),
            cols.reshape(cin * kh * kw, n * ho * wo).T,
            out=out,
        )
        return out.reshape(cout, cin, kh, kw)

    def backward(self, ck):
        x, go = self.inputs
        kh, kw = ck.shape[2], ck.shape[3]
        py, px = self.pad
        gx = gg = None
        if self._need(0):
            # same full correlation as the dL/dx branch of the forward conv
            qy, qx = kh - 1 - py, kw - 1 - px
            src = go
            if qy < 0 or qx < 0:
                src = _apply(_Pad2d, go, pad=(min(qy, 0), min(qx, 0)))
                qy, qx = max(qy, 0), max(qx, 0)
            gx = _apply(_Conv2dRaw, src, _apply(_Swap01, _apply(_FlipHW, ck)), pad=(qy, qx))
        if self._need(1):
            # the map is linear in g with kernel ck, so this is just a conv
            gg = _apply(_Conv2dRaw, x, ck, pad=(py, px))
        return gx, gg


class _AddBias(_Op):
    def forward(self, a, b):
        return a + b[None, :, None, None]

    def backward(self, g):
        gb = None
        if self._need(1):
            cout = self.inputs[1].shape[0]
            gb = _apply(_SumAxes, g, axes=(0, 2, 3)).reshape((cout,))
        return g, gb


class _Relu(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        return np.maximum(a, 0.0)

    def backward(self, g):
        mask = getattr(self, "_mask", None)
        if mask is None:
            mask = self._mask = (self.inputs[0].data > 0).astype(np.float64)
        return (_apply(_MulConst, g, const=mask),)


class _Sigmoid(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ez = np.exp(a[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out

    def backward(self, g):
        y = self.out_ref()
        return (g * y * (1.0 - y),)


class _Softplus(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))

    def backward(self, g):
        return (g * sigmoid(self.inputs[0]),)


class _MaxPool2(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        n, c, h, w = a.shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        out = np.maximum(a[:, :, ::2, ::2], a[:, :, ::2, 1::2])
        np.maximum(out, a[:, :, 1::2, ::2], out=out)
        np.maximum(out, a[:, :, 1::2, 1::2], out=out)
        return out

    def backward(self, g):
        idx = getattr(self, "_flat_idx", None)
        if idx is None:
            # winner bookkeeping is only paid for when a backward pass asks
            a = self.inputs[0].data
            n, c, h, w = a.shape
            win = a.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
            win = np.ascontiguousarray(win).reshape(n, c, h // 2, w // 2, 4)
            # argmax keeps the first maximum in row-major window order
            k = win.argmax(axis=-1)
            iy = np.arange(h // 2)[None, None, :, None] * 2 + k // 2
            ix = np.arange(w // 2)[None, None, None, :] * 2 + k % 2
            flat = (
                np.arange(n)[:, None, None, None] * (c * h * w)
                + np.arange(c)[None, :, None, None] * (h * w)
                + iy * w
                + ix
            )
            idx = self._flat_idx = flat.ravel()
        return (_apply(_PoolScatter, g, idx=idx, shape=self.inputs[0].shape),)


class _PoolScatter(_Op):
    """Scatter pooled cotangents back to the winning positions."""

    _can_create_nonfinite = False

    def __init__(self, idx: np.ndarray, shape: tuple[int, ...]):
        self.idx = idx
        self.shape = shape

    def forward(self, g):
        out = np.zeros(int(np.prod(self.shape)))
        # winners are unique, plain fancy-index assignment suffices
        out[self.idx] = g.ravel()
        return out.reshape(self.shape)

    def backward(self, g):
        n, c, h, w = self.shape
        return (_apply(_PoolGather, g, idx=self.idx, out_shape=(n, c, h // 2, w // 2)),)


class _PoolGather(_Op):
    _can_create_nonfinite = False

    def __init__(self, idx: np.ndarray, out_shape: tuple[int, ...]):
        self.idx = idx
        self.out_shape = out_shape

    def forward(self, a):
        self._in_shape = a.shape
        return a.ravel()[self.idx].reshape(self.out_shape)

    def backward(self, g):
        return (_apply(_PoolScatter, g, idx=self.idx, shape=self._in_shape),)


class _Upsample2(_Op):
    _can_create_nonfinite = False

    def forward(self, a):
        return np.repeat(np.repeat(a, 2, axis=2), 2, axis=3)

    def backward(self, g):
        return (_apply(_BlockSum2, g),)


class _BlockSum2(_Op):
    def forward(self, a):
        out = a[:, :, ::2, ::2] + a[:, :, ::2, 1::2]
        out += a[:, :, 1::2, ::2]
        out += a[:, :, 1::2, 1::2]
        return out

    def backward(self, g):
        return (_apply(_Upsample2, g),)


class _ConcatC(_Op):
    _can_create_nonfinite = False

    def forward(self, a, b):
        if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
            raise ValueError(f"concat_channels: incompatible shapes {a.shape} vs {b.shape}")
        self._ca = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, g):
        ca = self._ca
        cb = g.shape[1] - ca
        return (
            _apply(_SliceC, g, start=0, stop=ca),
            _apply(_SliceC, g, start=ca, stop=ca + cb),
        )


class _SliceC(_Op):
    def __init__(self, start: int, stop: int):
        self.start, self.stop = start, stop

    def forward(self, a):
        self._channels = a.shape[1]
        return np.ascontiguousarray(a[:, self.start : self.stop])

    def backward(self, g):
        c = self._channels
        n, _, h, w = g.shape
        left = Tensor(np.zeros((n, self.start, h, w)))
        right = Tensor(np.zeros((n, c - self.stop, h, w)))
        out = g
        if self.start:
            out = _apply(_ConcatC, left, out)
        if c - self.stop:
            out = _apply(_ConcatC, out, right)
        return (out,)


# --------------------------------------------------------------------------
# public operations


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int) -> Tensor:
    """2-D cross-correlation with bias, stride 1.

    ``x`` is NCHW, ``kernel`` is [out, in, kh, kw] with odd kh and kw,
    ``bias`` has one entry per output channel. ``padding=(k-1)//2`` keeps the
    spatial size ("same" mode). Differentiable in all three tensor inputs.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects a 4-d input and a 4-d kernel")
    kh, kw = kernel.shape[2], kernel.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if not isinstance(padding, (int, np.integer)) or padding < 0:
        raise ValueError(f"conv2d: padding must be a non-negative integer, got {padding!r}")
    if bias.data.ndim != 1 or bias.shape[0] != kernel.shape[0]:
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {kernel.shape[0]} output channels")
    out = _apply(_Conv2dRaw, x, kernel, pad=(int(padding), int(padding)))
    return _apply(_AddBias, out, bias)


def relu(x: Tensor) -> Tensor:
    return _apply(_Relu, as_tensor(x))


def sigmoid(x: Tensor) -> Tensor:
    return _apply(_Sigmoid, as_tensor(x))


def softplus(x: Tensor) -> Tensor:
    return _apply(_Softplus, as_tensor(x))


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity, ``kind`` in {relu, sigmoid}."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties go to the first window element."""
    return _apply(_MaxPool2, as_tensor(x))


def upsample_nearest2(x: Tensor) -> Tensor:
    """Double both spatial dims by nearest-neighbor replication."""
    return _apply(_Upsample2, as_tensor(x))


def spatial_resample(x: Tensor, kind: str) -> Tensor:
    """Halve (maxpool2) or double (upsample_nearest2) the spatial dims."""
    if kind == "maxpool2":
        return maxpool2(x)
    if kind == "upsample_nearest2":
        return upsample_nearest2(x)
    raise ValueError(f"unknown resample kind {kind!r}")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Join two NCHW tensors along the channel axis, a first."""
    return _apply(_ConcatC, as_tensor(a), as_tensor(b))


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy on logits, stable log-sum-exp form.

    Targets may be soft (values in [0,1]) and the loss is differentiable with
    respect to them as well, which is what carries learning signal into a
    network that produces the targets.
    """
    logits, targets = as_tensor(logits), as_tensor(targets)
    if logits.shape != targets.shape:
        raise ValueError(f"bce_with_logits: shape mismatch {logits.shape} vs {targets.shape}")
    tmin, tmax = (targets.data.min(), targets.data.max()) if targets.size else (0.0, 0.0)
    if tmin < 0.0 or tmax > 1.0:
        raise ValueError(f"bce_with_logits: targets outside [0,1] (min {tmin}, max {tmax})")
    # -[t log s(z) + (1-t) log s(-z)]  ==  softplus(z) - z*t
    return (softplus(logits) - logits * targets).mean()


# --------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[_Op]:
    """Ops reachable from ``root``, producers before consumers (iterative)."""
    order: list[_Op] = []
    seen: set[int] = set()
    if root.node is None:
        return order
    stack: list[tuple[_Op, bool]] = [(root.node, False)]
    while stack:
        op, expanded = stack.pop()
        if expanded:
            order.append(op)
            continue
        if id(op) in seen:
            continue
        seen.add(id(op))
        stack.append((op, True))
        for t in op.inputs:
            if t.node is not None and id(t.node) not in seen:
                stack.append((t.node, False))
    return order


def grad(loss: Tensor, params: Mapping[str, Tensor], create_graph: bool = False) -> GradMap:
    """Reverse-mode gradients of a scalar loss for every named parameter.

    Parameters the loss does not reach get zero gradients. With
    ``create_graph`` the backward computation is recorded so the returned
    gradients can be differentiated again.
    """
    if loss.shape != ():
        raise ValueError(f"grad expects a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    # mark the sub-graph that can actually reach a requested parameter, so
    # backward never expands branches whose gradients would be discarded
    param_ids = {id(p) for p in params.values()}
    needed_ops: set[int] = set()
    wanted: dict[int, tuple[bool, ...]] = {}
    for op in order:
        mask = tuple(
            t.requires_grad and (id(t) in param_ids or id(t.node) in needed_ops)
            for t in op.inputs
        )
        if any(mask):
            needed_ops.add(id(op))
            wanted[id(op)] = mask
    cot: dict[int, Tensor] = {id(loss): Tensor(1.0)}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for op in reversed(order):
            if id(op) not in needed_ops:
                continue
            # ids are stable keys here: every keyed tensor stays referenced
            # through the op records in `order` for the whole walk
            g = cot.get(id(op.out_ref()))
            if g is None:
                continue
            mask = wanted[id(op)]
            op._needs = mask
            try:
                in_grads = op.backward(g)
            finally:
                op._needs = None
            for t, gi, needed in zip(op.inputs, in_grads, mask):
                if gi is None or not needed:
                    continue
                prev = cot.get(id(t))
                cot[id(t)] = gi if prev is None else prev + gi
    return {name: cot.get(id(p), zeros_like(p)) for name, p in params.items()}


def functional_sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor], alpha: float) -> dict[str, Tensor]:
    """One plain gradient step producing new parameter tensors.

    The result stays connected to the graph of ``grads``: if the gradients
    were built with ``create_graph``, the updated parameters remain a
    differentiable function of whatever shaped those gradients. The input
    parameters are not touched.
    """
    if set(params.keys()) != set(grads.keys()):
        missing = set(params) ^ set(grads)
        raise KeyError(f"functional_sgd_step: parameter/gradient key mismatch: {sorted(missing)}")
    out: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"functional_sgd_step: shape mismatch for {name!r}: {p.shape} vs {g.shape}")
        out[name] = p - g * float(alpha)
    return out
