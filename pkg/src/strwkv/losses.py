"""Perceptual, identity and total losses plus the ArtFID combiner.

Every ``||.||`` here is a root-mean-square over elements, so loss magnitudes
do not depend on feature-map sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class IdentityFeatures:
    """Single "layer" that is the image itself."""

    n_layers = 1

    def __call__(self, img):
        return [img]


class TinyFeatureNet:
    """Frozen random conv net used as a perceptual feature extractor.

    Four stages of 3x3 stride-2 convolution + ReLU, weights drawn once from
    ``seed``.
    """

    def __init__(self, seed: int = 42, widths=(8, 16, 32, 64), in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.weights = []
        cin = in_channels
        for cout in widths:
            std = math.sqrt(2.0 / (cin * 9))
            self.weights.append((rng.normal(0, std, (cout, cin, 3, 3)), rng.normal(0, 0.01, cout)))
            cin = cout
        self.n_layers = len(widths)

    def __call__(self, img):
        feats = []
        x = img
        for w, b in self.weights:
            x = ad.relu(ad.conv2d(x, w, b, stride=2, pad=1))
            feats.append(x)
        return feats


EXTRACTORS = {"tiny": TinyFeatureNet, "identity": IdentityFeatures}


def make_extractor(name: str):
    try:
        return EXTRACTORS[name]()
    except KeyError:
        raise ValueError(f"unknown feature extractor {name!r}; choose from {sorted(EXTRACTORS)}") from None


@dataclass
class LossWeights:
    content: float = 8.0
    style: float = 15.0
    id1: float = 100.0
    id2: float = 1.0

    def __post_init__(self):
        if min(self.content, self.style, self.id1, self.id2) < 0:
            raise ValueError("loss weights must be non-negative")


def _feats(img, fe, cache):
    if cache is not None and id(img) in cache:
        return cache[id(img)]
    f = fe(img)
    if cache is not None:
        cache[id(img)] = f
    return f


def _feature_distance(a, b, fe, cache=None):
    fa, fb = _feats(a, fe, cache), _feats(b, fe, cache)
    total = 0.0
    for x, y in zip(fa, fb):
        total = ad.add(total, ad.rms(ad.sub(x, y)))
    return ad.mul(total, 1.0 / len(fa))


def content_loss(out, content, fe, cache=None):
    return _feature_distance(out, content, fe, cache)


def style_loss(out, style, fe, cache=None):
    fo, fs = _feats(out, fe, cache), _feats(style, fe, cache)
    total = 0.0
    for x, y in zip(fo, fs):
        mx, sx = ad.channel_stats(x)
        my, sy = ad.channel_stats(y)
        total = ad.add(total, ad.add(ad.rms(ad.sub(mx, my)), ad.rms(ad.sub(sx, sy))))
    return ad.mul(total, 1.0 / len(fo))


def identity_losses(i_cc, i_c, i_ss, i_s, fe, cache=None):
    """Pixel-space and feature-space reconstruction errors of the identity pairs."""
    l1 = ad.add(ad.rms(ad.sub(i_cc, i_c)), ad.rms(ad.sub(i_ss, i_s)))
    l2 = ad.add(_feature_distance(i_cc, i_c, fe, cache), _feature_distance(i_ss, i_s, fe, cache))
    return l1, l2


def total_loss(components, w: LossWeights | None = None):
    """``components`` is ``(content, style, id1, id2)``."""
    w = LossWeights() if w is None else w
    lc, ls, l1, l2 = components
    for x in components:
        if not np.all(np.isfinite(ad.value(x))):
            raise FloatingPointError("non-finite loss component")
    terms = [ad.mul(lc, w.content), ad.mul(ls, w.style), ad.mul(l1, w.id1), ad.mul(l2, w.id2)]
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def artfid(fid: float, lpips: float) -> float:
    if fid < 0 or lpips < 0:
        raise ValueError("FID and LPIPS must be non-negative")
    return (1.0 + lpips) * (1.0 + fid)
