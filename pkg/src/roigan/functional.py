"""Differentiable operations on :class:`~roigan.tensor.Tensor`.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to one gradient per parent (``None`` for parents
that are not differentiable).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

__all__ = [
    "add", "sub", "mul", "hadamard", "scale", "sum", "mean", "abs", "square", "log",
    "clip", "concat", "concat_channels", "crop_pad", "reshape", "flatten", "getitem",
    "relu", "leaky_relu", "sigmoid", "tanh", "activation", "linear",
    "conv2d", "conv_transpose2d", "conv_output_size", "conv_transpose_output_size",
    "batch_norm", "dropout", "resize_bilinear", "elementwise",
]


def _operand(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting is supported)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _binary(a, b):
    if not isinstance(a, Tensor):
        a = _operand(a, b)
    b = _operand(b, a)
    return a, b


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return mul(a, b)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._from_op(x.data * x.dtype.type(c), (x,), lambda g: (g * c,), "scale")


def sum(x: Tensor) -> Tensor:  # noqa: A001
    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return Tensor._from_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return Tensor._from_op(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward, "mean")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x: Tensor) -> Tensor:
    return Tensor._from_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def log(x: Tensor) -> Tensor:
    bad = x.data <= 0
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"log: non-positive value {x.data[idx]!r} at index {idx}")
    return Tensor._from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the value was not clamped."""
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._from_op(out, (x,), lambda g: (g * inside,), "clip")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def concat_channels(*tensors: Tensor) -> Tensor:
    return concat(tensors, axis=1)


def crop_pad(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad (positive amounts) or crop (negative amounts) the last two axes."""
    H, W = x.shape[-2:]
    pads = [(0, 0)] * (x.ndim - 2) + [(max(top, 0), max(bottom, 0)), (max(left, 0), max(right, 0))]
    padded = np.pad(x.data, pads)
    r0, c0 = max(-top, 0), max(-left, 0)
    r1 = padded.shape[-2] - max(-bottom, 0)
    c1 = padded.shape[-1] - max(-right, 0)
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"crop_pad: cropping {x.shape} by {(top, bottom, left, right)} leaves nothing")
    out = padded[..., r0:r1, c0:c1]

    def backward(g):
        full = np.zeros(padded.shape, dtype=g.dtype)
        full[..., r0:r1, c0:c1] = g
        rs, cs = max(top, 0), max(left, 0)
        return (full[..., rs:rs + H, cs:cs + W],)

    return Tensor._from_op(out, (x,), backward, "crop_pad")


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing."""

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return Tensor._from_op(np.array(x.data[index]), (x,), backward, "getitem")


Tensor.__getitem__ = getitem  # type: ignore[assignment]


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "hadamard": hadamard, "scale": scale,
    "mean": mean, "sum": sum, "abs": abs, "square": square, "log": log,
    "concat_channels": concat_channels, "crop_pad": crop_pad,
}


def elementwise(op: str, *args, **kwargs) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# -- activations --------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor._from_op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    if not 0 < alpha < 1:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {alpha}")
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return Tensor._from_op(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    s = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._from_op(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def activation(kind: str, x: Tensor, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (N, in) and weight (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._from_op(out, parents, backward, "linear")


# -- convolutions -------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> strided view (N, C, ho, wo, kh, kw)."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _scatter(cols: np.ndarray, out_shape: tuple, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: cols (N, ho, wo, C, kh, kw) summed into (N, C, Hp, Wp)."""
    n, ho, wo, c, kh, kw = cols.shape
    out = np.zeros(out_shape, dtype=cols.dtype)
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[..., i, j]
    return out


def _pad2(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"conv2d: input {x.shape} has {c} channels but weight {weight.shape} expects {cw}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"conv2d: kernel {(kh, kw)} larger than padded input {(h + 2 * padding, w + 2 * padding)}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = _pad2(x.data, padding)
    win = _windows(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, weight.data, axes=([1], [0]))
        gxp = _scatter(cols, xp.shape, stride)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._from_op(np.ascontiguousarray(out), parents, backward, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution; ``weight`` has shape (C_in, C_out, kH, kW).

    The forward map is the input-gradient map of :func:`conv2d` with the same
    weight and geometry.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    cw, f, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"conv_transpose2d: input {x.shape} has {c} channels but weight {weight.shape} expects {cw}")
    ho = conv_transpose_output_size(h, kh, stride, padding, output_padding)
    wo = conv_transpose_output_size(w, kw, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d: geometry gives empty output {(ho, wo)} for input {x.shape}")
    hf, wf = (h - 1) * stride + kh + output_padding, (w - 1) * stride + kw + output_padding
    cols = np.tensordot(x.data, weight.data, axes=([1], [0]))  # (N, h, w, F, kh, kw)
    full = _scatter(cols, (n, f, hf, wf), stride)
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gfull = np.zeros((n, f, hf, wf), dtype=g.dtype)
        gfull[:, :, padding : padding + ho, padding : padding + wo] = g
        win = _windows(gfull, kh, kw, stride, h, w)
        gx = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(gx), gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._from_op(np.ascontiguousarray(out), parents, backward, "conv_transpose2d")


# -- normalization and noise --------------------------------------------------

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode the running statistics (if given) are updated in place;
    the running variance tracks the unbiased estimate.
    """
    n, c, h, w = x.shape
    m = n * h * w
    if training:
        if m < 2:
            raise ValueError(f"batch_norm: training mode needs at least 2 values per channel, input is {x.shape}")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            running_var *= 1 - momentum
            running_var += momentum * var * m / (m - 1)
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            s1 = gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            gx = (inv_std[None, :, None, None] / m) * (m * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return Tensor._from_op(out.astype(x.dtype), (x, gamma, beta), backward, "batch_norm")


def dropout(
    x: Tensor,
    p: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
    noise: str = "bernoulli",
    sigma: float = 0.1,
) -> Tensor:
    """Bernoulli dropout with inverted scaling, or additive Gaussian noise.

    Identity in eval mode. The random draw comes from ``rng``.
    """
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training:
        return x
    if noise == "bernoulli":
        if p == 0:
            return x
        keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
        return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")
    if noise == "gaussian":
        eps = (sigma * rng.standard_normal(x.shape)).astype(x.dtype)
        return Tensor._from_op(x.data + eps, (x,), lambda g: (g,), "gaussian_noise")
    raise ValueError(f"unknown noise kind {noise!r}")


# -- resampling ---------------------------------------------------------------

def bilinear_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """(dst, src) linear-interpolation matrix with half-pixel centres and edge clamping."""
    m = np.zeros((dst, src), dtype=dtype)
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Differentiable bilinear resize of the last two axes."""
    ry = bilinear_matrix(x.shape[-2], size[0], x.dtype)
    rx = bilinear_matrix(x.shape[-1], size[1], x.dtype)
    out = ry @ x.data @ rx.T
    return Tensor._from_op(out, (x,), lambda g: (ry.T @ g @ rx,), "resize_bilinear")

