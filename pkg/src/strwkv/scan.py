"""2D -> 1D token orderings.

A :class:`ScanPlan` describes how a ``[C, H, W]`` feature map is read out as
a ``[T, C]`` sequence.  ``permutation()[t]`` is the row-major flat pixel
index that lands at sequence position ``t``.

The ``skip`` variant slices the map into ``p*p`` strided groups
``x[:, a::p, b::p]`` and concatenates them in ``offset_order``; pixels that
are ``p`` apart in the image become sequence neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

VARIANTS = ("skip", "bidirectional", "zigzag", "identity")
WITHIN = ("row-major", "reversed", "column-major")


def default_offsets(p: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(p) for b in range(p)]


@dataclass(frozen=True)
class ScanPlan:
    variant: str
    H: int
    W: int
    p: int = 1
    offset_order: tuple = field(default=None)
    within_group: str = "row-major"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown scan variant {self.variant!r}")
        if self.within_group not in WITHIN:
            raise ValueError(f"unknown within-group order {self.within_group!r}")
        if self.H < 1 or self.W < 1 or self.p < 1:
            raise ValueError("H, W and p must be positive")
        if self.offset_order is None:
            object.__setattr__(self, "offset_order", tuple(default_offsets(self.p)))
        else:
            object.__setattr__(self, "offset_order", tuple(tuple(o) for o in self.offset_order))
        if self.variant == "skip":
            if self.H % self.p or self.W % self.p:
                raise ValueError(f"{self.H}x{self.W} is not divisible by skip step {self.p}")
            if sorted(self.offset_order) != default_offsets(self.p):
                raise ValueError("offset_order must be a permutation of the p x p offset grid")

    @property
    def T(self) -> int:
        return self.H * self.W

    def permutation(self) -> np.ndarray:
        grid = np.arange(self.T).reshape(self.H, self.W)
        if self.variant == "skip":
            return np.concatenate([_traverse(grid[a::self.p, b::self.p], self.within_group)
                                   for a, b in self.offset_order])
        if self.variant == "zigzag":
            return _traverse_zigzag(grid, self.within_group)
        return _traverse(grid, self.within_group)

    def groups(self) -> list[np.ndarray]:
        """Flat pixel indices of each skip group, in scan order."""
        if self.variant != "skip":
            return [self.permutation()]
        n = self.T // (self.p * self.p)
        perm = self.permutation()
        return [perm[i * n:(i + 1) * n] for i in range(self.p * self.p)]


def _traverse(block: np.ndarray, within: str) -> np.ndarray:
    if within == "column-major":
        return block.T.ravel()
    flat = block.ravel()
    return flat[::-1].copy() if within == "reversed" else flat


def _traverse_zigzag(grid: np.ndarray, within: str) -> np.ndarray:
    g = grid.T if within == "column-major" else grid
    rows = [row if r % 2 == 0 else row[::-1] for r, row in enumerate(g)]
    path = np.concatenate(rows)
    return path[::-1].copy() if within == "reversed" else path


def baseline_order(variant: str, H: int, W: int) -> np.ndarray:
    """Fixed-path orders: row-major ``bidirectional`` or boustrophedon ``zigzag``."""
    if variant not in ("bidirectional", "zigzag"):
        raise ValueError(f"unknown baseline scan {variant!r}")
    return ScanPlan(variant, H, W).permutation()


def s_scan(x, plan: ScanPlan):
    """``[C, H, W]`` map -> ``[T, C]`` sequence in plan order."""
    c, h, w = x.shape
    if (h, w) != (plan.H, plan.W):
        raise ValueError(f"plan is for {plan.H}x{plan.W}, got {h}x{w}")
    flat = ad.reshape(x, (c, h * w))
    return ad.transpose(ad.take(flat, plan.permutation(), axis=1))


def s_merge(seq, plan: ScanPlan):
    """Inverse of :func:`s_scan`."""
    t, c = seq.shape
    if t != plan.T:
        raise ValueError(f"plan covers {plan.T} tokens, sequence has {t}")
    rowmajor = ad.take(seq, np.argsort(plan.permutation()), axis=0)
    return ad.reshape(ad.transpose(rowmajor), (c, plan.H, plan.W))


def effective_step(p: int, H: int, W: int) -> int:
    """Largest step ``<= p`` dividing both spatial dims."""
    for s in range(p, 0, -1):
        if H % s == 0 and W % s == 0:
            return s
    return 1


def rotation(variant: str, H: int, W: int, p: int = 2) -> list[ScanPlan]:
    """Plans cycled through by successive Re-WKV iterations.

    The second plan traverses the other spatial axis first (or, for the
    ``bidirectional`` baseline, runs backwards).
    """
    if variant == "skip":
        s = effective_step(p, H, W)
        return [ScanPlan("skip", H, W, s), ScanPlan("skip", H, W, s, within_group="column-major")]
    if variant == "bidirectional":
        return [ScanPlan(variant, H, W), ScanPlan(variant, H, W, within_group="reversed")]
    if variant == "zigzag":
        return [ScanPlan(variant, H, W), ScanPlan(variant, H, W, within_group="column-major")]
    if variant == "identity":
        return [ScanPlan(variant, H, W)]
    raise ValueError(f"unknown scan variant {variant!r}")
