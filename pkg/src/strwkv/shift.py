"""Token-shifting layers: Uni-, Quad-, Omni- and Deform-shifting.

All of them mix each token with spatial neighbours before the R/K/V
projections.  Omni- and Quad-shifting are depthwise 3x3 convolutions (free
and fixed one-hot kernels respectively); Deform-shifting samples the 3x3
neighbourhood at learned fractional offsets predicted from the input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tensor as tc

# 3x3 taps in row-major order; offset channels are (dy_n, dx_n) pairs
TAPS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
K = 3
OFFSET_CHANNELS = 2 * K * K

SHIFT_VARIANTS = ("uni", "quad", "omni", "deform")


@dataclass
class UniShiftParams:
    mix: object  # [C] in [0, 1]

    def __post_init__(self):
        if isinstance(self.mix, np.ndarray) and (np.any(self.mix < 0) or np.any(self.mix > 1)):
            raise ValueError("uni-shift mix must lie in [0, 1]")


@dataclass
class DeformShiftParams:
    predictor_w: object  # [18, C, 3, 3], zero at init
    predictor_b: object  # [18]
    kernel: object  # [C, 3, 3], centre-one at init
    offset_scale: float = 1.0

    def __post_init__(self):
        if tuple(self.predictor_w.shape[:1]) != (OFFSET_CHANNELS,) or tuple(self.kernel.shape[1:]) != (K, K):
            raise ValueError("deform shift needs an 18-channel 3x3 offset predictor and 3x3 kernels")

    @classmethod
    def identity(cls, channels: int, dtype=np.float64) -> "DeformShiftParams":
        kernel = np.zeros((channels, K, K), dtype)
        kernel[:, 1, 1] = 1.0
        return cls(np.zeros((OFFSET_CHANNELS, channels, K, K), dtype), np.zeros(OFFSET_CHANNELS, dtype), kernel)


def uni_shift(seq, p: UniShiftParams):
    """``out_t = mix * seq_{t-1} + (1 - mix) * seq_t`` with a zero row before the start."""
    t, c = seq.shape
    prev = ad.concat([np.zeros((1, c), dtype=seq.dtype), ad.take(seq, np.arange(t - 1), axis=0)], axis=0)
    return ad.add(ad.mul(p.mix, prev), ad.mul(ad.sub(1.0, p.mix), seq))


def _shifted(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[:, i, j] = x[:, i+dy, j+dx]``, zero outside."""
    c, h, w = x.shape
    out = np.zeros_like(x)
    ys, ye = max(0, -dy), min(h, h - dy)
    xs, xe = max(0, -dx), min(w, w - dx)
    out[:, ys:ye, xs:xe] = x[:, ys + dy:ye + dy, xs + dx:xe + dx]
    return out


def _depthwise_f(x, kernel):
    out = np.zeros(x.shape, dtype=np.result_type(x, kernel))
    for n, (dy, dx) in enumerate(TAPS):
        out += kernel[:, dy + 1, dx + 1, None, None] * _shifted(x, dy, dx)
    return tc.check_finite(out, "depthwise"), (x, kernel)


def _depthwise_b(ctx, g):
    x, kernel = ctx
    dx_ = np.zeros(x.shape, dtype=np.result_type(x, g))
    dk = np.zeros_like(kernel)
    for dy, dx in TAPS:
        dk[:, dy + 1, dx + 1] = (g * _shifted(x, dy, dx)).sum(axis=(1, 2))
        dx_ += kernel[:, dy + 1, dx + 1, None, None] * _shifted(g, -dy, -dx)
    return dx_.astype(x.dtype), dk


ad.defop("depthwise3x3", _depthwise_f, _depthwise_b)


def omni_shift(x, kernel):
    """Depthwise 3x3 convolution with zero padding."""
    return ad.apply("depthwise3x3", x, kernel)


def _quad_kernel(c: int, dtype) -> np.ndarray:
    if c % 4:
        raise ValueError(f"quad shift needs channels divisible by 4, got {c}")
    q = c // 4
    kern = np.zeros((c, K, K), dtype)
    # quarter 0 reads its right neighbour (content moves left), 1 moves right, 2 up, 3 down
    for i, (ky, kx) in enumerate(((1, 2), (1, 0), (2, 1), (0, 1))):
        kern[i * q:(i + 1) * q, ky, kx] = 1.0
    return kern


def quad_shift(x):
    """Shift channel quarters by one pixel left / right / up / down."""
    return omni_shift(x, _quad_kernel(x.shape[0], x.dtype))


def predict_offsets(x, params: DeformShiftParams):
    """``[18, H, W]`` per-tap (dy, dx) offsets from a 3x3 conv over ``x``."""
    off = ad.conv2d(x, params.predictor_w, params.predictor_b, stride=1, pad=1)
    if params.offset_scale != 1.0:
        off = ad.mul(off, params.offset_scale)
    return off


def _deform_f(x, offsets, kernel):
    c, h, w = x.shape
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dys = np.array([dy for dy, _ in TAPS], dtype=np.float64)[:, None, None]
    dxs = np.array([dx for _, dx in TAPS], dtype=np.float64)[:, None, None]
    ys = ii + dys + offsets[0::2]
    xs = jj + dxs + offsets[1::2]
    taps = tc.bilinear_taps(h, w, ys, xs)
    s = tc.bilinear_gather(x, ys, xs, taps)  # [C, 9, H, W]
    out = np.zeros(x.shape, dtype=np.result_type(x, kernel))
    # accumulate tap by tap in the same order as the depthwise conv
    for n, (dy, dx) in enumerate(TAPS):
        out += kernel[:, dy + 1, dx + 1, None, None] * s[:, n]
    return tc.check_finite(out, "deform_shift"), (x, offsets, kernel, taps, s)


def _deform_b(ctx, g):
    x, offsets, kernel, taps, s = ctx
    kflat = kernel.reshape(kernel.shape[0], K * K)
    dk = np.einsum("chw,cnhw->cn", g, s).reshape(kernel.shape).astype(kernel.dtype)
    dx_, gys, gxs = ad.bilinear_grads(x, taps, g[:, None] * kflat[:, :, None, None])
    doff = np.empty(offsets.shape, dtype=np.float64)
    doff[0::2] = gys.reshape(offsets[0::2].shape)
    doff[1::2] = gxs.reshape(offsets[1::2].shape)
    return dx_.astype(x.dtype), doff.astype(offsets.dtype), dk


ad.defop("deform_shift", _deform_f)
ad.register_custom_gradient("deform_shift", _deform_b)


def deform_sample(x, offsets, kernel):
    """Deformable depthwise aggregation with externally supplied offsets."""
    return ad.apply("deform_shift", x, offsets, kernel)


def deform_shift(x, params: DeformShiftParams):
    """``y(p0) = sum_n kernel[n] * x(p0 + p_n + offset_n(p0))`` per channel."""
    return deform_sample(x, predict_offsets(x, params), params.kernel)


def to_tokens(x):
    c, h, w = x.shape
    return ad.transpose(ad.reshape(x, (c, h * w)))


def to_image(seq, h: int, w: int):
    return ad.reshape(ad.transpose(seq), (seq.shape[1], h, w))


def apply_shift(x, variant: str, params=None):
    """Dispatch an image ``[C, H, W]`` through one of the shift variants."""
    if variant == "deform":
        return deform_shift(x, params)
    if variant == "omni":
        return omni_shift(x, params.kernel)
    if variant == "quad":
        return quad_shift(x)
    if variant == "uni":
        return to_image(uni_shift(to_tokens(x), params), x.shape[1], x.shape[2])
    raise ValueError(f"unknown shift variant {variant!r}")
