"""Adam and a deterministic single-pair training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .losses import LossWeights, TinyFeatureNet, content_loss, identity_losses, style_loss, total_loss
from .model import ModelConfig, StyleTransferModel, forward_padded

log = logging.getLogger(__name__)

TOY_LR = 2e-3
CLIP_NORM = 1.0


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays."""
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        out[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


def clip_by_global_norm(grads: dict, max_norm: float = CLIP_NORM) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def step_loss(model: StyleTransferModel, params, content, style, fe, weights: LossWeights):
    """Total objective for one (content, style) pair plus both identity pairs."""
    cache = {}
    out = forward_padded(content, style, model, params)
    i_cc = forward_padded(content, content, model, params)
    i_ss = forward_padded(style, style, model, params)
    lc = content_loss(out, content, fe, cache)
    ls = style_loss(out, style, fe, cache)
    l1, l2 = identity_losses(i_cc, content, i_ss, style, fe, cache)
    return total_loss((lc, ls, l1, l2), weights), (lc, ls, l1, l2)


def loss_and_grads(model: StyleTransferModel, content, style, fe, weights: LossWeights):
    tape = ad.Tape()
    pvars = {k: tape.var(v) for k, v in model.params.items()}
    loss, parts = step_loss(model, pvars, content, style, fe, weights)
    grads = tape.backward(loss)
    return float(loss.value), {k: grads[v.id] for k, v in pvars.items()}


@dataclass
class TrainResult:
    curve: list
    model: StyleTransferModel


def train_toy(config: ModelConfig, content: np.ndarray, style: np.ndarray, steps: int, seed: int = 0,
              lr: float = TOY_LR, weights: LossWeights | None = None, extractor=None) -> TrainResult:
    """Fit a small model to one image pair; ``curve[i]`` is the loss before update ``i``.

    The curve has ``steps + 1`` entries, the last measured after the final update.
    """
    if max(content.shape[1:]) > 64 or max(style.shape[1:]) > 64:
        raise ValueError("toy training is limited to images of at most 64x64")
    weights = LossWeights() if weights is None else weights
    fe = TinyFeatureNet() if extractor is None else extractor
    model = StyleTransferModel.init(replace(config, seed=seed))
    state = AdamState(lr=lr)
    curve = []
    for i in range(steps + 1):
        loss, grads = loss_and_grads(model, content, style, fe, weights)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss diverged at step {i}: {loss}")
        curve.append(loss)
        if i == steps:
            break
        grads, norm = clip_by_global_norm(grads)
        log.debug("step %d loss %.6f grad-norm %.4f", i, loss, norm)
        model.params = adam_step(model.params, grads, state)
    return TrainResult(curve, model)


def toy_pair(size: int = 32, seed: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic synthetic (content, style) images in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    content = np.stack([
        (((xx - 0.5) ** 2 + (yy - 0.5) ** 2) < 0.08).astype(float) * 0.7 + 0.15,
        yy,
        0.5 + 0.4 * np.sin(6 * xx),
    ])
    stripes = 0.5 + 0.5 * np.sin(18 * (xx + yy))
    style = np.stack([stripes, 0.3 + 0.2 * np.cos(14 * xx), 1 - stripes])
    style = np.clip(style + 0.05 * rng.normal(size=style.shape), 0, 1)
    return content, style
