"""Dense numeric primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` objects (float32 or float64, C-contiguous).
Images are laid out ``[C, H, W]`` and token sequences ``[T, C]``.  Every
function here is pure and raises ``FloatingPointError`` if it would return a
non-finite value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLOAT_TYPES = (np.float32, np.float64)


def as_tensor(x, dtype=None) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.dtype not in FLOAT_TYPES:
        arr = arr.astype(np.float64)
    return arr


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


def _result_dtype(*arrays):
    return np.result_type(*[a.dtype for a in arrays])


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.gamma = as_tensor(self.gamma)
        self.beta = as_tensor(self.beta)
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError("gamma and beta must be vectors of equal length")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def identity(cls, channels: int, dtype=np.float64) -> "LayerNormParams":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype))


def matmul(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or w.ndim != 2 or a.shape[1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {w.shape}")
    return check_finite(a @ w, "matmul")


def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _conv_taps(xp: np.ndarray, k: int, stride: int, ho: int, wo: int):
    """Yield ``(dy, dx, patch)`` where ``patch[c, i, j] = xp[c, i*s+dy, j*s+dx]``."""
    for dy in range(k):
        for dx in range(k):
            yield dy, dx, xp[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride]


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2D cross-correlation (no kernel flip) with zero padding.

    ``x`` is ``[Cin, H, W]``, ``w`` is ``[Cout, Cin, k, k]``; the output is
    ``[Cout, H', W']`` with ``H' = (H + 2*pad - k) // stride + 1``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    k = w.shape[2]
    ho, wo = _conv_out(x.shape[1], k, stride, pad), _conv_out(x.shape[2], k, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError("conv2d output would be empty")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((w.shape[0], ho, wo), dtype=_result_dtype(x, w))
    for dy, dx, patch in _conv_taps(xp, k, stride, ho, wo):
        out += np.tensordot(w[:, :, dy, dx], patch, axes=1)
    if b is not None:
        out += b[:, None, None]
    return check_finite(out, "conv2d")


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    c, h, w = x.shape
    if r < 1 or h % r or w % r:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {r}")
    y = x.reshape(c, h // r, r, w // r, r).transpose(0, 2, 4, 1, 3)
    return np.ascontiguousarray(y.reshape(c * r * r, h // r, w // r))


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    cr, h, w = x.shape
    if r < 1 or cr % (r * r):
        raise ValueError(f"channel count {cr} not divisible by {r * r}")
    c = cr // (r * r)
    y = x.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(y.reshape(c, h * r, w * r))


def layer_norm(x: np.ndarray, p: LayerNormParams) -> np.ndarray:
    """Normalize each row of ``x [T, C]`` over channels, then scale and shift."""
    if x.ndim != 2 or x.shape[1] != p.gamma.shape[0]:
        raise ValueError(f"layer_norm: {x.shape} vs {p.gamma.shape[0]} channels")
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    var = ((x64 - mu) ** 2).mean(axis=1, keepdims=True)
    y = (x64 - mu) / np.sqrt(var + p.eps) * p.gamma + p.beta
    return check_finite(y.astype(_result_dtype(x, p.gamma)), "layer_norm")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def squared_relu(x: np.ndarray) -> np.ndarray:
    return np.square(np.maximum(x, 0))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return check_finite(np.add(a, b), "add")


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return check_finite(np.multiply(a, b), "mul")


STD_EPS = 1e-8


def channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and std per channel.

    Accepts ``[C, H, W]`` images or ``[T, C]`` sequences; ``std`` is
    ``sqrt(var + 1e-8)``.
    """
    if x.ndim == 3:
        flat = x.reshape(x.shape[0], -1).astype(np.float64)
    elif x.ndim == 2:
        flat = x.T.astype(np.float64)
    else:
        raise ValueError("channel_stats expects [C,H,W] or [T,C]")
    if flat.shape[1] == 0:
        raise ValueError("channel_stats: empty spatial extent")
    mean = flat.mean(axis=1)
    var = ((flat - mean[:, None]) ** 2).mean(axis=1)
    std = np.sqrt(var + STD_EPS)
    return mean.astype(x.dtype), std.astype(x.dtype)


@dataclass
class BilinearTaps:
    """Corner indices and weights for bilinear sampling of an ``H x W`` grid.

    ``idx[n]`` are flat indices of the four neighbours (clipped into range),
    ``wgt[n]`` the interpolation weights with out-of-range corners zeroed,
    ``fy``/``fx`` the fractional parts (needed for coordinate gradients).
    """

    idx: list = field(default_factory=list)
    wgt: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    fy: np.ndarray | None = None
    fx: np.ndarray | None = None


def bilinear_taps(h: int, w: int, ys: np.ndarray, xs: np.ndarray) -> BilinearTaps:
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = ys - y0
    fx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    taps = BilinearTaps(fy=fy, fx=fx)
    for oy, ox, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + oy, x0 + ox
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        taps.idx.append(np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1))
        taps.valid.append(ok)
        taps.wgt.append(np.where(ok, wt, 0.0))
    return taps


def bilinear_gather(x: np.ndarray, ys, xs, taps: BilinearTaps | None = None) -> np.ndarray:
    """Sample ``x [C, H, W]`` at fractional points; returns ``[C, *ys.shape]``."""
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    c, h, w = x.shape
    if taps is None:
        taps = bilinear_taps(h, w, ys, xs)
    flat = x.reshape(c, h * w)
    out = np.zeros((c,) + ys.shape, dtype=np.float64)
    for idx, wgt in zip(taps.idx, taps.wgt):
        out += flat[:, idx] * wgt
    return out.astype(x.dtype)


def bilinear_sample(x: np.ndarray, ys: float, xs: float) -> np.ndarray:
    """Value of ``x [C, H, W]`` at fractional position ``(ys, xs)``; zero outside."""
    return bilinear_gather(x, np.array(ys, dtype=np.float64), np.array(xs, dtype=np.float64))
