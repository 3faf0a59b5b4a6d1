"""FLOP accounting and wall-clock scaling sweeps.

FLOP convention: one multiply, add/subtract, compare, divide or exp counts
as 1.  Pure data movement (gathers, reshapes, pixel shuffles) counts 0.
Tallies are per token-channel element of the kernels in :mod:`strwkv.wkv`;
per-channel setup (``w / T``) and the quadratic reference's O(T C) readout
are lower-order and left out, so the counts are exact monomials.
"""
from __future__ import annotations

import csv
import math
import statistics
import time
import tracemalloc
from contextlib import contextmanager
from dataclasses import astuple, dataclass, fields

import numba
import numpy as np

from . import autodiff as ad
from .wkv import WkvParams, WkvSequence, bi_wkv_naive, bi_wkv_scan, re_wkv

# one scan step: decay-add, compare, 2 subtract, 2 exp, 3 mul, 2 add
PUSH_FLOPS = 11
# readout: bonus add, 2 compares, 3 subtract, 3 exp, 5 mul, 4 add, 1 divide
READOUT_FLOPS = 19
SCAN_ALPHA = 2 * PUSH_FLOPS + READOUT_FLOPS
# per (t, i) pair, two passes: logit (4) + compare, logit again (4), subtract, exp, mul, 2 add
NAIVE_BETA = 14
PERMUTATION_FLOPS = 0

KERNELS = ("bi_wkv_naive", "bi_wkv_scan", "re_wkv", "quadratic_attention_reference")
CSV_COLUMNS = ("kernel", "T", "C", "wall_ns", "flops", "peak_bytes")


def count_flops(kernel: str, T: int, C: int, q: int = 1) -> int:
    if T < 1 or C < 1:
        raise ValueError("T and C must be positive")
    if kernel == "bi_wkv_scan":
        return SCAN_ALPHA * T * C
    if kernel == "bi_wkv_naive":
        return NAIVE_BETA * T * T * C
    if kernel == "re_wkv":
        return q * (SCAN_ALPHA * T * C + 2 * PERMUTATION_FLOPS * T * C)
    if kernel == "quadratic_attention_reference":
        # scores 2T^2C, softmax (compare, subtract, exp, add, divide) 5T^2, mixing 2T^2C
        return 4 * T * T * C + 5 * T * T
    raise ValueError(f"unknown kernel {kernel!r}")


# ------------------------------------------------------- op-level counting

def _op_flops(kind, vals, attrs, out) -> int:
    size = int(np.size(out))
    if kind in ("add", "sub", "mul", "div", "neg", "relu", "exp", "sqrt", "sum", "mean"):
        return max(size, max((int(np.size(v)) for v in vals if v is not None), default=0))
    if kind == "matmul":
        a, w = vals
        return 2 * a.shape[0] * a.shape[1] * w.shape[1]
    if kind == "conv2d":
        x, w, b = vals
        return 2 * w.shape[1] * w.shape[2] * w.shape[3] * size + (size if b is not None else 0)
    if kind == "layer_norm":
        return 8 * size
    if kind in ("sigmoid", "softplus"):
        return 3 * size
    if kind == "squared_relu":
        return 2 * size
    if kind == "depthwise3x3":
        return 2 * 9 * size
    if kind == "deform_shift":
        # per tap: 2 coordinate adds, 4 bilinear weights (8), 4-corner blend (7), kernel mul-add (2)
        return 19 * 9 * size
    if kind == "bilinear_sample":
        return 15 * size
    if kind == "bi_wkv":
        return SCAN_ALPHA * size
    return 0


@dataclass
class OpCounter:
    total: int = 0
    by_kind: dict = None

    def __post_init__(self):
        self.by_kind = {}

    def __call__(self, kind, vals, attrs, out):
        n = _op_flops(kind, vals, attrs, out)
        self.total += n
        self.by_kind[kind] = self.by_kind.get(kind, 0) + n


@contextmanager
def counting_flops():
    """Tally FLOPs of every differentiable op executed inside the block."""
    counter = OpCounter()
    ad.OP_HOOKS.append(counter)
    try:
        yield counter
    finally:
        ad.OP_HOOKS.remove(counter)


# ----------------------------------------------------------------- timing

@dataclass
class BenchRecord:
    kernel: str
    T: int
    C: int
    wall_ns: int
    flops: int
    peak_bytes: int

    def __post_init__(self):
        if self.T < 1 or self.C < 1 or self.wall_ns <= 0:
            raise ValueError("invalid bench record")


def quadratic_attention_reference(q: np.ndarray, k: np.ndarray, v: np.ndarray, block: int = 512) -> np.ndarray:
    """Softmax attention, materializing scores one row block at a time."""
    T, C = q.shape
    out = np.empty_like(v)
    for s in range(0, T, block):
        scores = q[s:s + block] @ k.T / math.sqrt(C)
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        out[s:s + block] = scores @ v
    return out


def _runner(kernel: str, T: int, C: int, q: int, rng: np.random.Generator):
    k = rng.uniform(-2, 2, (T, C))
    v = rng.normal(size=(T, C))
    p = WkvParams(rng.uniform(0, 3, C), rng.uniform(-1, 1, C))
    seq = WkvSequence(k, v)
    if kernel == "bi_wkv_scan":
        return lambda: bi_wkv_scan(seq, p)
    if kernel == "bi_wkv_naive":
        return lambda: bi_wkv_naive(seq, p)
    if kernel == "re_wkv":
        plans = [np.arange(T), rng.permutation(T)]
        return lambda: re_wkv(seq, p, q, plans)
    if kernel == "quadratic_attention_reference":
        qq = rng.normal(size=(T, C))
        return lambda: quadratic_attention_reference(qq, k, v)
    raise ValueError(f"unknown kernel {kernel!r}")


@contextmanager
def single_thread():
    prev = numba.get_num_threads()
    numba.set_num_threads(1)
    try:
        yield
    finally:
        numba.set_num_threads(prev)


def time_kernel(kernel: str, T: int, C: int, q: int = 2, repeats: int = 5, seed: int = 0) -> BenchRecord:
    """Median wall time over ``repeats`` runs after one untimed warm-up.

    The warm-up runs under ``tracemalloc`` to record peak bytes.
    """
    fn = _runner(kernel, T, C, q, np.random.default_rng(seed))
    with single_thread():
        tracemalloc.start()
        fn()
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            fn()
            times.append(time.perf_counter_ns() - t0)
    return BenchRecord(kernel, T, C, max(1, int(statistics.median(times))), count_flops(kernel, T, C, q), int(peak))


def sweep(kernels, Ts, C: int, q: int = 2, out=None, repeats: int = 5) -> list[BenchRecord]:
    """One record per (kernel, T); optionally written as CSV to ``out``."""
    Ts = list(Ts)
    if Ts != sorted(Ts):
        raise ValueError("sequence lengths must be ascending")
    records = [time_kernel(k, T, C, q, repeats) for k in kernels for T in Ts]
    if out is not None:
        write_csv(records, out)
    return records


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(astuple(r))


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    types = {f.name: f.type for f in fields(BenchRecord)}
    return [BenchRecord(**{k: (v if types[k] in (str, "str") else int(v)) for k, v in row.items()}) for row in rows]


def linear_fit_r2(xs, ys) -> float:
    """Coefficient of determination of the least-squares line ``y = a x + b``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    A = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    return 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0


def doubling_ratios(records) -> list[float]:
    recs = sorted(records, key=lambda r: r.T)
    return [b.wall_ns / a.wall_ns for a, b in zip(recs, recs[1:]) if b.T == 2 * a.T]
