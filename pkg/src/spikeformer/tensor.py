"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable primitive the network needs lives here: matmul,
2D convolution (lowered to matmul via im2col), batch norm, max-pool,
linear, elementwise ops, softmax and cross-entropy.

Gradients are driven by an explicit operation tape: each op appends a
record (output, parents, backward rule) to a module-level list in
execution order, and ``Tensor.backward`` replays the list in reverse.
Replaying a tape built from the same inputs is bitwise deterministic.

Two dtype profiles are supported: float64 for gradient-check/oracle work
and float32 for training. ``set_default_dtype`` switches the profile;
``using_dtype`` scopes it.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True

# Execution-ordered record of (output, parents, backward) triples.
# backward(grad_out) returns one gradient array (or None) per parent.
_TAPE: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


@contextlib.contextmanager
def using_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (eval / profiling paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def clear_tape() -> None:
    _TAPE.clear()


def tape_length() -> int:
    return len(_TAPE)


class Tensor:
    """N-dimensional float array participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    # -- introspection -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None, retain_tape: bool = False) -> None:
        """Replay the tape in reverse execution order from this tensor.

        Seeds with ones (suitable for scalar losses) unless ``grad`` is given.
        The tape is cleared afterwards unless ``retain_tape`` is set.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for out, parents, backward in reversed(_TAPE):
            g = out.grad
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    # Copy: backward rules may hand back views/aliases of g.
                    parent.grad = np.array(pg, dtype=parent.data.dtype)
                else:
                    np.add(parent.grad, pg, out=parent.grad)
        if not retain_tape:
            clear_tape()

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype), dtype=like.data.dtype)


def _record(out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPE.append((out, parents, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, dtype=a.data.dtype)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, dtype=a.data.dtype)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, dtype=a.data.dtype)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), dtype=x.data.dtype)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _record(out, (x,), backward)


def leaky_relu(x: Tensor, negative_slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, x.data.dtype.type(1), x.data.dtype.type(negative_slope))
    out = Tensor(x.data * scale, dtype=x.data.dtype)

    def backward(g):
        return (g * scale,)

    return _record(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_array(x.data)
    out = Tensor(s, dtype=x.data.dtype)

    def backward(g):
        return (g * s * (1 - s),)

    return _record(out, (x,), backward)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Numerically stable elementwise logistic: 0.5 * (tanh(x/2) + 1)."""
    out = np.asarray(x * 0.5)  # asarray: 0-d operands decay to scalars
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


# ---------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape), dtype=x.data.dtype)

    def backward(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes), dtype=x.data.dtype)

    def backward(g):
        return (g.transpose(inverse),)

    return _record(out, (x,), backward)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.data.dtype)
    axes = _normalize_axes(axis, x.ndim)

    def backward(g):
        return (_spread(g, x.shape, axes, keepdims),)

    return _record(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for ax in axes:
        count *= x.shape[ax]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.data.dtype)

    def backward(g):
        return (_spread(g, x.shape, axes, keepdims) / count,)

    return _record(out, (x,), backward)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _spread(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


# ---------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy-style batching over leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, dtype=a.data.dtype)

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis, broadcasting over all leading axes."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input last dim {x.shape} does not match weight {w.shape}")
    y = x.data @ w.data
    if bias is not None:
        y = y + bias.data
    out = Tensor(y, dtype=x.data.dtype)
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        x2 = x.data.reshape(-1, w.shape[0])
        gx = (g @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _record(out, parents, backward)


# ---------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------

def conv2d_nhwc(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, padding: int = 1) -> Tensor:
    """Stride-1 cross-correlation in channels-last layout (the hot path).

    x: [B, H, W, C], w: [O, C, kh, kw] -> [B, H', W', O]. Evaluated as one
    GEMM per kernel offset over the full padded input (no patch gathering);
    the backward input gradient is the full correlation of the output
    gradient with the spatially flipped kernel, computed the same way.
    Memory traffic, not FLOPs, dominates desk-scale convs, so the layout
    avoids every transpose copy between conv, batch norm, and pooling.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape} and {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    b, h, wd, c = x.shape
    o, _, kh, kw = w.shape
    if padding > kh - 1 or padding > kw - 1:
        raise ShapeError(f"conv2d supports padding <= kernel-1, got {padding}")
    out_h = h + 2 * padding - kh + 1
    out_w = wd + 2 * padding - kw + 1
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, kernel {w.shape}")
    dt = x.data.dtype

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    hp, wp = h + 2 * padding, wd + 2 * padding
    flat = xp.reshape(-1, c)
    y = np.zeros((b, out_h, out_w, o), dtype=dt)
    ybuf = np.empty((b * hp * wp, o), dtype=dt)
    wk = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))  # [kh,kw,C,O]
    for ki in range(kh):
        for kj in range(kw):
            np.matmul(flat, wk[ki, kj], out=ybuf)
            y += ybuf.reshape(b, hp, wp, o)[:, ki:ki + out_h, kj:kj + out_w, :]
    if bias is not None:
        y += bias.data
    out = Tensor(y, dtype=dt)
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gw = np.empty_like(w.data)
        for ki in range(kh):
            for kj in range(kw):
                patch = xp[:, ki:ki + out_h, kj:kj + out_w, :]
                gw[:, :, ki, kj] = np.tensordot(g, patch, axes=([0, 1, 2], [0, 1, 2]))
        pad_g = kh - 1 - padding
        gp = np.pad(g, ((0, 0), (pad_g, pad_g), (pad_g, pad_g), (0, 0)))
        hq, wq = out_h + 2 * pad_g, out_w + 2 * pad_g
        gflat = gp.reshape(-1, o)
        gx = np.zeros((b, h, wd, c), dtype=dt)
        gbuf = np.empty((b * hq * wq, c), dtype=dt)
        for ki in range(kh):
            for kj in range(kw):
                np.matmul(gflat, wk[kh - 1 - ki, kw - 1 - kj].T, out=gbuf)
                gx += gbuf.reshape(b, hq, wq, c)[:, ki:ki + h, kj:kj + wd, :]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    return _record(out, parents, backward)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 1) -> Tensor:
    """Cross-correlation with zero padding: x [B, C, H, W], w [O, C, kh, kw].

    Stride is fixed at 1 (pooling handles downsampling); the 3x3/pad-1
    default preserves spatial size. Thin layout shim over the channels-last
    kernel.
    """
    if stride != 1:
        raise ShapeError(f"conv2d supports stride 1 only, got {stride}")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    y = conv2d_nhwc(transpose(x, (0, 2, 3, 1)), w, bias, padding=padding)
    return transpose(y, (0, 3, 1, 2))


def maxpool2d_nhwc(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Per-window maximum in channels-last layout; ties route to the first
    element in row-major window scan order."""
    if kernel != stride:
        raise ShapeError("maxpool2d supports kernel == stride only")
    b, h, w, c = x.shape
    if h % kernel or w % kernel:
        raise ShapeError(f"maxpool2d needs spatial dims divisible by {kernel}, got {x.shape}")
    oh, ow = h // kernel, w // kernel
    windows = x.data.reshape(b, oh, kernel, ow, kernel, c).transpose(0, 1, 3, 5, 2, 4)
    flat = windows.reshape(b, oh, ow, c, kernel * kernel)
    idx = flat.argmax(axis=-1)  # first occurrence wins ties
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0], dtype=x.data.dtype)

    def backward(g):
        gflat = np.zeros((b, oh, ow, c, kernel * kernel), dtype=g.dtype)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(b, oh, ow, c, kernel, kernel).transpose(0, 1, 4, 2, 5, 3).reshape(b, h, w, c)
        return (gx,)

    return _record(out, (x,), backward)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Per-window maximum on [B, C, H, W] input; see ``maxpool2d_nhwc``."""
    y = maxpool2d_nhwc(transpose(x, (0, 2, 3, 1)), kernel, stride)
    return transpose(y, (0, 3, 1, 2))


# ---------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray,
              channel_axis: int, training: bool,
              momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over every axis except ``channel_axis``.

    Train mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place (unbiased variance, torch
    convention). Eval mode uses the running buffers; before any train
    step those are the init values (mean 0, var 1), which is not an error.
    """
    ax = channel_axis % x.ndim
    reduce_axes = tuple(i for i in range(x.ndim) if i != ax)
    bshape = [1] * x.ndim
    bshape[ax] = x.shape[ax]
    gam = gamma.data.reshape(bshape)
    bet = beta.data.reshape(bshape)

    if training:
        mu = x.data.mean(axis=reduce_axes, keepdims=True)
        centered = x.data - mu
        var = np.mean(centered * centered, axis=reduce_axes, keepdims=True)
        n = x.data.size // x.shape[ax]
        unbiased = var * (n / max(n - 1, 1))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu.reshape(-1)
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased.reshape(-1)
    else:
        mu = running_mean.reshape(bshape).astype(x.data.dtype)
        var = running_var.reshape(bshape).astype(x.data.dtype)
        centered = x.data - mu

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(gam * xhat + bet, dtype=x.data.dtype)

    def backward(g):
        ggamma = (g * xhat).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        if training:
            gx = g * gam
            mu1 = gx.mean(axis=reduce_axes, keepdims=True)
            mu2 = (gx * xhat).mean(axis=reduce_axes, keepdims=True)
            gx -= mu1
            gx -= xhat * mu2
            gx *= inv_std
        else:
            gx = g * (gam * inv_std)
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------
# softmax / loss
# ---------------------------------------------------------------------

def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, dtype=x.data.dtype)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(out, (x,), backward)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    out = Tensor(logp, dtype=x.data.dtype)
    p = np.exp(logp)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record(out, (x,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``.

    Stable by construction (log-sum-exp with max subtraction).
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross_entropy expects [B,C] logits and [B] labels, got {logits.shape}, {labels.shape}")
    n, _ = logits.shape
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = logp[np.arange(n), labels]
    out = Tensor(-picked.mean(), dtype=logits.data.dtype)
    p = np.exp(logp)

    def backward(g):
        grad = p.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return _record(out, (logits,), backward)
