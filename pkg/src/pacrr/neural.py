"""Minimal differentiable numeric core.

Each forward function returns (output, cache); the matching *_backward
function consumes the cache plus the upstream gradient and produces exact
gradients for inputs and parameters. The piecewise-linear ops (rectification,
max pooling, hinge) are differentiable away from ties and kinks; crossings
are detected via op "signatures" so `gradient_check` can skip those
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class ParamGroup:
    """A named trainable tensor paired with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def create(cls, name: str, value: np.ndarray) -> "ParamGroup":
        value = np.asarray(value)
        return cls(name=name, value=value, grad=np.zeros_like(value))


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    # Zero padding so the output extent is ceil(size / stride); when the total
    # is odd the extra zero goes after the data (keeps window 0 anchored at 0).
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    beg = total // 2
    return out, beg, total - beg


# ---------------------------------------------------------------------------
# Convolution

@dataclass
class Conv2dCache:
    in_shape: tuple[int, int]
    padded_shape: tuple[int, int]
    pad_top: int
    pad_left: int
    stride: tuple[int, int]
    cols: np.ndarray  # (out_h*out_w, n*n) im2col patches
    mask: np.ndarray  # (out_h*out_w, n_f) rectifier activity
    out_shape: tuple[int, int, int]
    has_bias: bool


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None = None,
           stride: tuple[int, int] = (1, 1)):
    """Same-padded 2-D cross-correlation with n_f square kernels, rectified.

    x: (H, W); kernels: (n_f, n, n); bias: (n_f,) or None; stride (s_q, s_d).
    Output shape (n_f, ceil(H/s_q), ceil(W/s_d)).
    """
    H, W = x.shape
    n_f, n, n2 = kernels.shape
    if n != n2:
        raise ValueError("kernels must be square")
    if H == 0 or W == 0:
        raise ValueError("conv2d input must be non-empty")
    s_q, s_d = stride
    if s_q < 1 or s_d < 1:
        raise ValueError("stride components must be >= 1")
    out_h, pad_top, pad_bot = _same_pad(H, n, s_q)
    out_w, pad_left, pad_right = _same_pad(W, n, s_d)
    padded = np.zeros((H + pad_top + pad_bot, W + pad_left + pad_right), dtype=x.dtype)
    if n > padded.shape[0] or n > padded.shape[1]:
        raise ValueError(f"kernel size {n} exceeds padded input {padded.shape}")
    padded[pad_top : pad_top + H, pad_left : pad_left + W] = x
    windows = sliding_window_view(padded, (n, n))[::s_q, ::s_d][:out_h, :out_w]
    cols = windows.reshape(out_h * out_w, n * n)
    pre = cols @ kernels.reshape(n_f, n * n).T
    if bias is not None:
        pre = pre + bias
    mask = pre > 0.0
    out = (pre * mask).T.reshape(n_f, out_h, out_w)
    cache = Conv2dCache(
        in_shape=(H, W),
        padded_shape=padded.shape,
        pad_top=pad_top,
        pad_left=pad_left,
        stride=stride,
        cols=cols,
        mask=mask,
        out_shape=(n_f, out_h, out_w),
        has_bias=bias is not None,
    )
    return out, cache


def conv2d_backward(d_out: np.ndarray, cache: Conv2dCache, kernels: np.ndarray):
    """Gradients w.r.t. (input, kernels, bias) given d(loss)/d(output)."""
    n_f, n, _ = kernels.shape
    _, out_h, out_w = cache.out_shape
    s_q, s_d = cache.stride
    d_pre = d_out.reshape(n_f, out_h * out_w).T * cache.mask
    d_kernels = (d_pre.T @ cache.cols).reshape(n_f, n, n)
    d_bias = d_pre.sum(axis=0) if cache.has_bias else None
    d_cols = (d_pre @ kernels.reshape(n_f, n * n)).reshape(out_h, out_w, n, n)
    d_padded = np.zeros(cache.padded_shape, dtype=d_out.dtype)
    rows = s_q * np.arange(out_h)
    cols = s_d * np.arange(out_w)
    for ki in range(n):
        for kj in range(n):
            d_padded[np.ix_(rows + ki, cols + kj)] += d_cols[:, :, ki, kj]
    H, W = cache.in_shape
    d_x = d_padded[cache.pad_top : cache.pad_top + H, cache.pad_left : cache.pad_left + W]
    return d_x, d_kernels, d_bias


# ---------------------------------------------------------------------------
# Pooling

def max_over_filters(x: np.ndarray):
    """Elementwise max across the leading filter axis: (n_f, H, W) -> (H, W).

    The backward pass routes each cell's gradient to the first filter
    attaining the maximum.
    """
    if x.ndim != 3 or x.shape[0] < 1:
        raise ValueError("expected a non-empty (n_f, H, W) array")
    argmax = np.argmax(x, axis=0)
    out = np.take_along_axis(x, argmax[None], axis=0)[0]
    return out, argmax


def max_over_filters_backward(d_out: np.ndarray, argmax: np.ndarray, n_f: int) -> np.ndarray:
    d_x = np.zeros((n_f,) + d_out.shape, dtype=d_out.dtype)
    np.put_along_axis(d_x, argmax[None], d_out[None], axis=0)
    return d_x


def kmax_per_row(x: np.ndarray, k: int):
    """Per row, the k largest values sorted descending (ties keep the earlier
    column); rows shorter than k are zero-padded.

    Returns (out, src) where src holds each output's source column, -1 for
    padding cells.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rows, width = x.shape
    m = min(width, k)
    out = np.zeros((rows, k), dtype=x.dtype)
    src = np.full((rows, k), -1, dtype=np.int64)
    if m > 0:
        order = np.argsort(-x, axis=1, kind="stable")[:, :m]
        out[:, :m] = np.take_along_axis(x, order, axis=1)
        src[:, :m] = order
    return out, src


def kmax_per_row_backward(d_out: np.ndarray, src: np.ndarray, width: int) -> np.ndarray:
    rows, k = d_out.shape
    d_x = np.zeros((rows, width), dtype=d_out.dtype)
    valid = src >= 0
    row_idx = np.repeat(np.arange(rows), k).reshape(rows, k)
    d_x[row_idx[valid], src[valid]] = d_out[valid]
    return d_x


# ---------------------------------------------------------------------------
# Softmax

def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size < 1:
        raise ValueError("softmax input must be non-empty")
    z = np.exp(v - v.max())
    return z / z.sum()


def softmax_backward(d_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    return out * (d_out - float(np.dot(d_out, out)))


# ---------------------------------------------------------------------------
# Recurrent aggregation (single-unit gated cell)

@dataclass
class RnnCache:
    xs: np.ndarray
    # per step: (i, f, o, g, c_prev, h_prev, tanh_c)
    steps: list[tuple[float, float, float, float, float, float, float]]


def recurrent_sequence(xs: np.ndarray, w: np.ndarray, u: np.ndarray, b: np.ndarray):
    """Gated recurrence with a scalar hidden state over T input vectors.

    xs: (T, D); w: (4, D) input weights; u: (4,) recurrent weights; b: (4,)
    biases. Gate order along axis 0: input, forget, output, candidate.
    Starting from h_0 = c_0 = 0:

        i,f,o = sigmoid(w_g . x_t + u_g h_{t-1} + b_g),  g = tanh(...)
        c_t = f c_{t-1} + i g,  h_t = o tanh(c_t)

    Returns (h_T, cache); h_T lies in (-1, 1).
    """
    xs = np.atleast_2d(np.asarray(xs))
    T = xs.shape[0]
    if T < 1:
        raise ValueError("recurrent_sequence needs at least one input vector")
    h = 0.0
    c = 0.0
    steps = []
    for t in range(T):
        z = w @ xs[t] + u * h + b
        i = _sigmoid(float(z[0]))
        f = _sigmoid(float(z[1]))
        o = _sigmoid(float(z[2]))
        g = math.tanh(float(z[3]))
        c_new = f * c + i * g
        tanh_c = math.tanh(c_new)
        steps.append((i, f, o, g, c, h, tanh_c))
        h = o * tanh_c
        c = c_new
    return h, RnnCache(xs=xs, steps=steps)


def recurrent_backward(d_h: float, cache: RnnCache, w: np.ndarray, u: np.ndarray):
    """Backpropagate through time; returns (d_xs, d_w, d_u, d_b)."""
    xs = cache.xs
    T = xs.shape[0]
    w64 = np.asarray(w, dtype=np.float64)
    d_xs = np.zeros_like(xs, dtype=np.float64)
    d_w = np.zeros(w.shape, dtype=np.float64)
    d_u = np.zeros(u.shape, dtype=np.float64)
    d_b = np.zeros(u.shape, dtype=np.float64)
    dh = float(d_h)
    dc = 0.0
    for t in reversed(range(T)):
        i, f, o, g, c_prev, h_prev, tanh_c = cache.steps[t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_prev = dc * f
        dz = np.array(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                do * o * (1.0 - o),
                dg * (1.0 - g * g),
            ],
            dtype=np.float64,
        )
        d_w += np.outer(dz, xs[t])
        d_u += dz * h_prev
        d_b += dz
        d_xs[t] = dz @ w64
        dh = float(np.dot(dz, u))
        dc = dc_prev
    return d_xs, d_w, d_u, d_b


# ---------------------------------------------------------------------------
# Loss and optimization

def hinge_loss(rel_pos: float, rel_neg: float) -> float:
    """Pairwise max-margin loss max(0, 1 - rel_pos + rel_neg)."""
    return max(0.0, 1.0 - rel_pos + rel_neg)


def hinge_gradients(rel_pos: float, rel_neg: float) -> tuple[float, float]:
    """(d/d rel_pos, d/d rel_neg); zero once the margin is satisfied."""
    if 1.0 - rel_pos + rel_neg > 0.0:
        return -1.0, 1.0
    return 0.0, 0.0


def sgd_step(groups, learning_rate: float) -> None:
    """In-place SGD update `value -= lr * grad`; gradients are then zeroed."""
    if learning_rate <= 0.0:
        raise ValueError("learning_rate must be positive")
    for group in groups:
        if not np.isfinite(group.grad).all():
            raise FloatingPointError(f"non-finite gradient in parameter group {group.name!r}")
        group.value -= learning_rate * group.grad
        group.grad[...] = 0.0


# ---------------------------------------------------------------------------
# Finite-difference verification

@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: int


def gradient_check(f, x0: np.ndarray, analytic: np.ndarray, h: float = 1e-5) -> GradCheckResult:
    """Compare an analytic gradient against central finite differences.

    `f` maps a flat float64 vector to (scalar value, signature); a coordinate
    is excluded when the signature differs between x-h and x+h, i.e. the
    perturbation crossed an argmax tie or a rectification/hinge kink. The
    relative-error denominator is floored at 1e-6 so vanishing gradients do
    not amplify finite-difference noise.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if x0.shape != analytic.shape:
        raise ValueError("analytic gradient shape must match the input")
    max_err = 0.0
    checked = 0
    excluded = 0
    for idx in range(x0.size):
        xp = x0.copy()
        xp[idx] += h
        vp, sig_p = f(xp)
        xm = x0.copy()
        xm[idx] -= h
        vm, sig_m = f(xm)
        if sig_p != sig_m:
            excluded += 1
            continue
        numeric = (vp - vm) / (2.0 * h)
        a = analytic[idx]
        denom = max(abs(a), abs(numeric), 1e-6)
        err = abs(a - numeric) / denom
        max_err = max(max_err, err)
        checked += 1
    return GradCheckResult(max_rel_error=max_err, checked=checked, excluded=excluded)
