"""Central finite-difference checks of the analytic gradients.

Each ``check_*`` function runs a number of random trials and returns a
:class:`GradReport` with the worst relative error seen.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .block import init_block, run_block
from .scan import rotation
from .shift import DeformShiftParams, deform_sample, deform_shift
from .wkv import WkvParams, WkvSequence, bi_wkv, bi_wkv_naive, random_instance

H_STEP = 1e-5
TOLERANCE = 1e-4
# gradients smaller than this are compared absolutely
REL_FLOOR = 1e-6


def max_rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f, x: np.ndarray, h: float = H_STEP, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x``, perturbed in place.

    With ``coords`` (a list of index tuples) only those entries are filled.
    """
    g = np.zeros_like(x, dtype=np.float64)
    for idx in (np.ndindex(x.shape) if coords is None else coords):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


@dataclass
class GradReport:
    name: str
    trials: int
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.trials} trials, "
                f"max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g})")


def check_bi_wkv(trials: int = 20, seed: int = 0) -> GradReport:
    """Tape gradients of Bi-WKV (scan + analytic backward) vs differences of the naive form."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        T, C = int(rng.integers(1, 13)), int(rng.integers(1, 5))
        seq, p = random_instance(rng, T, C)
        k, v, w, u = seq.k.copy(), seq.v.copy(), p.w.copy(), p.u.copy()
        g = rng.normal(size=(T, C))
        tape = ad.Tape()
        vs = [tape.var(a) for a in (k, v, w, u)]
        y = bi_wkv(WkvSequence(vs[0], vs[1]), WkvParams(vs[2], vs[3]))
        grads = tape.grad(ad.sum(ad.mul(y, g)), vs)

        def f():
            return float(np.sum(bi_wkv_naive(WkvSequence(k, v), WkvParams(w, u)) * g))

        for arr, an in zip((k, v, w, u), grads):
            worst = max(worst, max_rel_error(an, numeric_grad(f, arr)))
    return GradReport("bi_wkv", trials, worst)


def _random_offsets(rng, h, w, scale=0.7):
    # keep sample points away from integer grid lines, where bilinear is not differentiable
    off = rng.uniform(-scale, scale, (18, h, w))
    frac = off - np.round(off)
    off[np.abs(frac) < 0.05] += 0.1
    return off


def check_deform_shift(trials: int = 20, seed: int = 1) -> GradReport:
    """Values, kernel and offsets of the deformable sampling on small maps."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        c = int(rng.integers(1, 3))
        x = rng.normal(size=(c, 4, 4))
        off = _random_offsets(rng, 4, 4)
        kern = rng.normal(size=(c, 3, 3))
        g = rng.normal(size=(c, 4, 4))
        tape = ad.Tape()
        vs = [tape.var(a) for a in (x, off, kern)]
        grads = tape.grad(ad.sum(ad.mul(deform_sample(*vs), g)), vs)

        def f():
            return float(np.sum(deform_sample(x, off, kern) * g))

        for arr, an in zip((x, off, kern), grads):
            worst = max(worst, max_rel_error(an, numeric_grad(f, arr)))

        # through the offset predictor as well
        pw = rng.normal(0, 0.2, (18, c, 3, 3))
        pb = rng.uniform(-0.4, 0.4, 18)
        tape = ad.Tape()
        pv = [tape.var(a) for a in (pw, pb)]
        out = deform_shift(x, DeformShiftParams(pv[0], pv[1], kern))
        grads = tape.grad(ad.sum(ad.mul(out, g)), pv)

        def fp():
            return float(np.sum(deform_shift(x, DeformShiftParams(pw, pb, kern)) * g))

        coords = [tuple(int(rng.integers(0, n)) for n in pw.shape) for _ in range(8)]
        worst = max(worst, max_rel_error(grads[0][tuple(np.array(coords).T)],
                                         numeric_grad(fp, pw, coords=coords)[tuple(np.array(coords).T)]))
        worst = max(worst, max_rel_error(grads[1], numeric_grad(fp, pb)))
    return GradReport("deform_shift", trials, worst)


def random_block_params(rng, c: int, variant: str = "deform", prefix: str = "b") -> dict:
    """Block parameters perturbed away from the identity initialisation."""
    p = init_block(rng, prefix, c, variant)
    for name, arr in p.items():
        if name.endswith("pred_w"):
            p[name] = rng.normal(0, 0.15, arr.shape)
        elif name.endswith("pred_b"):
            p[name] = rng.uniform(-0.45, 0.45, arr.shape)
        elif name.endswith(("kernel", "ln_g", "ln_b", "bonus", "mix_raw")):
            p[name] = arr + rng.normal(0, 0.2, arr.shape)
    return p


def check_block(trials: int = 20, seed: int = 2, coords_per_param: int = 2, variant: str = "deform",
                c: int = 4, hw: int = 4, q: int = 2) -> GradReport:
    """Full ST-RWKV block on a ``c x hw x hw`` map, finite differences on a parameter slice."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    plans = rotation("skip", hw, hw, 2)
    for _ in range(trials):
        params = random_block_params(rng, c, variant)
        x = rng.normal(size=(c, hw, hw))
        g = rng.normal(size=(c, hw, hw))
        tape = ad.Tape()
        pv = {k: tape.var(v) for k, v in params.items()}
        xv = tape.var(x)
        out = run_block(xv, pv, "b", variant, plans, q)
        grads = tape.backward(ad.sum(ad.mul(out, g)))

        def f():
            return float(np.sum(run_block(x, params, "b", variant, plans, q) * g))

        targets = [(x, grads[xv.id])] + [(params[k], grads[pv[k].id]) for k in params]
        for arr, an in targets:
            coords = [tuple(int(rng.integers(0, n)) for n in arr.shape) for _ in range(coords_per_param)]
            num = numeric_grad(f, arr, coords=coords)
            sel = tuple(np.array(coords).T)
            worst = max(worst, max_rel_error(an[sel], num[sel]))
    return GradReport("st_rwkv_block", trials, worst)


CHECKS = {"wkv": check_bi_wkv, "deform": check_deform_shift, "block": check_block}


def run_checks(modules=None, trials: int = 20) -> list[GradReport]:
    names = list(CHECKS) if not modules else list(modules)
    return [CHECKS[n](trials=trials) for n in names]
