"""One ST-RWKV block: spatial mix followed by channel mix, each residual.

Parameters live in a flat ``{name: array}`` mapping (values may be tape
variables while training).  :func:`spatial_weights` and
:func:`channel_weights` view a prefix of that mapping as typed weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .shift import DeformShiftParams, UniShiftParams, apply_shift, to_image, to_tokens
from .wkv import WkvParams, WkvSequence, re_wkv

HIDDEN_RATIO = 4


@dataclass
class ShiftLayer:
    variant: str
    params: object = None  # DeformShiftParams, UniShiftParams or None for quad

    def __call__(self, x):
        return apply_shift(x, self.variant, self.params)


@dataclass
class SpatialMixWeights:
    W_R: object
    W_K: object
    W_V: object
    W_O: object
    shift_R: ShiftLayer
    shift_K: ShiftLayer
    shift_V: ShiftLayer
    wkv: WkvParams
    ln_gamma: object
    ln_beta: object

    def __post_init__(self):
        c = self.W_O.shape[0]
        for m in (self.W_R, self.W_K, self.W_V, self.W_O):
            if tuple(m.shape) != (c, c):
                raise ValueError("spatial mix projections must be square")


@dataclass
class ChannelMixWeights:
    W_R: object  # [C, C]
    W_K: object  # [C, hC]
    W_V: object  # [hC, C]
    W_O: object  # [C, C]
    shift_R: ShiftLayer
    shift_K: ShiftLayer
    ln_gamma: object
    ln_beta: object

    def __post_init__(self):
        c, hc = self.W_K.shape
        if tuple(self.W_V.shape) != (hc, c) or tuple(self.W_R.shape) != (c, c) or tuple(self.W_O.shape) != (c, c):
            raise ValueError("channel mix projection shapes are inconsistent")


def _normed_image(x, gamma, beta):
    _, h, w = x.shape
    return to_image(ad.layer_norm(to_tokens(x), gamma, beta), h, w)


def spatial_mix(x, w: SpatialMixWeights, plans, q: int):
    """Token mixing across positions; returns the residual branch ``[C, H, W]``."""
    _, h, wd = x.shape
    xn = _normed_image(x, w.ln_gamma, w.ln_beta)
    r = ad.matmul(to_tokens(w.shift_R(xn)), w.W_R)
    k = ad.matmul(to_tokens(w.shift_K(xn)), w.W_K)
    v = ad.matmul(to_tokens(w.shift_V(xn)), w.W_V)
    mixed = re_wkv(WkvSequence(k, v), w.wkv, q, plans)
    o = ad.matmul(ad.mul(ad.sigmoid(r), mixed), w.W_O)
    return to_image(o, h, wd)


def channel_mix(x, w: ChannelMixWeights):
    """Per-token channel fusion with a squared-ReLU hidden layer."""
    _, h, wd = x.shape
    xn = _normed_image(x, w.ln_gamma, w.ln_beta)
    r = ad.matmul(to_tokens(w.shift_R(xn)), w.W_R)
    kc = ad.matmul(to_tokens(w.shift_K(xn)), w.W_K)
    vc = ad.matmul(ad.squared_relu(kc), w.W_V)
    o = ad.matmul(ad.mul(ad.sigmoid(r), vc), w.W_O)
    return to_image(o, h, wd)


def block_forward(x, spatial: SpatialMixWeights, channel: ChannelMixWeights, plans, q: int):
    x = ad.add(x, spatial_mix(x, spatial, plans, q))
    return ad.add(x, channel_mix(x, channel))


# ------------------------------------------------------------- parameters

def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def init_shift(rng, prefix: str, c: int, variant: str, dtype=np.float64) -> dict:
    if variant == "deform":
        d = DeformShiftParams.identity(c, dtype)
        return {f"{prefix}.pred_w": d.predictor_w, f"{prefix}.pred_b": d.predictor_b, f"{prefix}.kernel": d.kernel}
    if variant == "omni":
        return {f"{prefix}.kernel": DeformShiftParams.identity(c, dtype).kernel}
    if variant == "uni":
        return {f"{prefix}.mix_raw": np.zeros(c, dtype)}
    if variant == "quad":
        if c % 4:
            raise ValueError(f"quad shift needs width divisible by 4, got {c}")
        return {}
    raise ValueError(f"unknown shift variant {variant!r}")


def init_block(rng: np.random.Generator, prefix: str, c: int, shift_variant: str,
               hidden_ratio: int = HIDDEN_RATIO, dtype=np.float64) -> dict:
    """Fresh parameters for one block: fan-in uniform projections, identity shifts."""
    hc = hidden_ratio * c
    p = {}
    for name in ("W_R", "W_K", "W_V", "W_O"):
        p[f"{prefix}.sm.{name}"] = _uniform(rng, c, (c, c), dtype)
    decay = np.linspace(0.5, 4.0, c)
    p[f"{prefix}.sm.decay_raw"] = np.log(np.expm1(decay)).astype(dtype)
    p[f"{prefix}.sm.bonus"] = np.zeros(c, dtype)
    p[f"{prefix}.sm.ln_g"] = np.ones(c, dtype)
    p[f"{prefix}.sm.ln_b"] = np.zeros(c, dtype)
    for s in "RKV":
        p.update(init_shift(rng, f"{prefix}.sm.shift_{s}", c, shift_variant, dtype))
    p[f"{prefix}.cm.W_R"] = _uniform(rng, c, (c, c), dtype)
    p[f"{prefix}.cm.W_K"] = _uniform(rng, c, (c, hc), dtype)
    p[f"{prefix}.cm.W_V"] = _uniform(rng, hc, (hc, c), dtype)
    p[f"{prefix}.cm.W_O"] = _uniform(rng, c, (c, c), dtype)
    p[f"{prefix}.cm.ln_g"] = np.ones(c, dtype)
    p[f"{prefix}.cm.ln_b"] = np.zeros(c, dtype)
    for s in "RK":
        p.update(init_shift(rng, f"{prefix}.cm.shift_{s}", c, shift_variant, dtype))
    return p


def shift_layer(params, prefix: str, variant: str) -> ShiftLayer:
    if variant == "deform":
        return ShiftLayer(variant, DeformShiftParams(params[f"{prefix}.pred_w"], params[f"{prefix}.pred_b"],
                                                     params[f"{prefix}.kernel"]))
    if variant == "omni":
        return ShiftLayer(variant, DeformShiftParams(np.zeros((18, 1, 3, 3)), np.zeros(18), params[f"{prefix}.kernel"]))
    if variant == "uni":
        return ShiftLayer(variant, UniShiftParams(ad.sigmoid(params[f"{prefix}.mix_raw"])))
    return ShiftLayer(variant)


def spatial_weights(params, prefix: str, variant: str) -> SpatialMixWeights:
    sm = f"{prefix}.sm"
    return SpatialMixWeights(
        params[f"{sm}.W_R"], params[f"{sm}.W_K"], params[f"{sm}.W_V"], params[f"{sm}.W_O"],
        *(shift_layer(params, f"{sm}.shift_{s}", variant) for s in "RKV"),
        wkv=WkvParams.from_raw(params[f"{sm}.decay_raw"], params[f"{sm}.bonus"]),
        ln_gamma=params[f"{sm}.ln_g"], ln_beta=params[f"{sm}.ln_b"],
    )


def channel_weights(params, prefix: str, variant: str) -> ChannelMixWeights:
    cm = f"{prefix}.cm"
    return ChannelMixWeights(
        params[f"{cm}.W_R"], params[f"{cm}.W_K"], params[f"{cm}.W_V"], params[f"{cm}.W_O"],
        *(shift_layer(params, f"{cm}.shift_{s}", variant) for s in "RK"),
        ln_gamma=params[f"{cm}.ln_g"], ln_beta=params[f"{cm}.ln_b"],
    )


def run_block(x, params, prefix: str, variant: str, plans, q: int):
    return block_forward(x, spatial_weights(params, prefix, variant), channel_weights(params, prefix, variant), plans, q)
