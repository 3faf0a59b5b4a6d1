"""Bidirectional WKV attention.

For one channel with decay ``w >= 0``, bonus ``u`` and ``T`` tokens, token
``t`` reads

    y_t = sum_i e_ti v_i / sum_i e_ti,
    e_ti = exp(-(|t-i| - 1) * w / T + k_i)   for i != t,
    e_tt = exp(u + k_t).

:func:`bi_wkv_naive` evaluates this literally in O(T^2 C).
:func:`bi_wkv_scan` gets the same numbers in O(T C) from a prefix scan
(``i < t``) and a suffix scan (``i > t``).  Each scan state is a triple
``(m, a, b)`` meaning ``numerator = e^m a`` and ``denominator = e^m b``, so
``e^k`` never has to be formed explicitly.

All kernels accumulate in float64; float32 inputs get float32 outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from . import autodiff as ad
from .tensor import as_tensor, check_finite

# above this many tokens the backward recomputes the forward normalizers
SAVE_STATES_MAX_T = 4096


@dataclass
class WkvParams:
    w: object  # decay [C], >= 0
    u: object  # bonus [C]

    def __post_init__(self):
        if isinstance(self.w, np.ndarray):
            if self.w.shape != np.shape(ad.value(self.u)):
                raise ValueError("w and u must have equal length")
            if np.any(self.w < 0):
                raise ValueError("decay w must be non-negative")

    @classmethod
    def from_raw(cls, raw_w, u) -> "WkvParams":
        """Decay from an unconstrained parameter via softplus."""
        return cls(ad.softplus(raw_w), u)


@dataclass
class WkvSequence:
    k: object  # [T, C]
    v: object  # [T, C]

    def __post_init__(self):
        if self.k.shape != self.v.shape or len(self.k.shape) != 2:
            raise ValueError(f"k and v must be equal [T, C] arrays, got {self.k.shape} and {self.v.shape}")
        if self.k.shape[0] < 1:
            raise ValueError("need at least one token")

    @property
    def T(self) -> int:
        return self.k.shape[0]


# ------------------------------------------------------------------ kernels

@numba.njit(cache=True)
def _naive_kernel(w, u, k, v, y):
    C, T = k.shape
    for c in range(C):
        for t in range(T):
            mx = -np.inf
            for i in range(T):
                if i == t:
                    z = u[c] + k[c, i]
                else:
                    z = -(abs(t - i) - 1) / T * w[c] + k[c, i]
                if z > mx:
                    mx = z
            num = 0.0
            den = 0.0
            for i in range(T):
                if i == t:
                    z = u[c] + k[c, i]
                else:
                    z = -(abs(t - i) - 1) / T * w[c] + k[c, i]
                e = math.exp(z - mx)
                num += e * v[c, i]
                den += e
            y[c, t] = num / den


@numba.njit(cache=True)
def _push(m, a, b, dec, kt, vt):
    """Decay the state by one step and absorb ``e^kt * (vt, 1)``."""
    md = m - dec
    mn = md if md > kt else kt
    e1 = math.exp(md - mn)
    e2 = math.exp(kt - mn)
    return mn, e1 * a + e2 * vt, e1 * b + e2


@numba.njit(parallel=True, cache=True)
def _scan_kernel(w, u, k, v, y, mo, bo):
    C, T = k.shape
    for c in numba.prange(C):
        dec = w[c] / T
        sm = np.empty(T)
        sa = np.empty(T)
        sb = np.empty(T)
        m, a, b = -np.inf, 0.0, 0.0
        for t in range(T - 1, -1, -1):
            sm[t] = m
            sa[t] = a
            sb[t] = b
            m, a, b = _push(m, a, b, dec, k[c, t], v[c, t])
        m, a, b = -np.inf, 0.0, 0.0
        for t in range(T):
            ub = u[c] + k[c, t]
            mx = max(m, sm[t], ub)
            p1 = math.exp(m - mx)
            p2 = math.exp(sm[t] - mx)
            p3 = math.exp(ub - mx)
            num = p1 * a + p2 * sa[t] + p3 * v[c, t]
            den = p1 * b + p2 * sb[t] + p3
            y[c, t] = num / den
            mo[c, t] = mx
            bo[c, t] = den
            m, a, b = _push(m, a, b, dec, k[c, t], v[c, t])


@numba.njit(cache=True)
def _push_q(m, a, b, qa, qb, dec, kt, vt):
    """Like ``_push`` but also carries distance-weighted sums for dw."""
    md = m - dec
    mn = md if md > kt else kt
    e1 = math.exp(md - mn)
    e2 = math.exp(kt - mn)
    qa = e1 * (qa + a)
    qb = e1 * (qb + b)
    return mn, e1 * a + e2 * vt, e1 * b + e2, qa, qb


@numba.njit(parallel=True, cache=True)
def _scan_backward_kernel(w, u, k, v, g, y, mo, bo, dk, dv, dw, du):
    C, T = k.shape
    for c in numba.prange(C):
        dec = w[c] / T
        # alpha_t = g_t / D_t = ga[t] * exp(-mo[t]); beta_t = alpha_t * y_t
        ga = np.empty(T)
        gb = np.empty(T)
        for t in range(T):
            ga[t] = g[c, t] / bo[c, t]
            gb[t] = ga[t] * y[c, t]

        # dv, dk: decayed sums of alpha/beta over t != i, weighted by e^{k_i}
        sm = np.empty(T)
        sa = np.empty(T)
        sb = np.empty(T)
        m, a, b = -np.inf, 0.0, 0.0
        for t in range(T - 1, -1, -1):
            sm[t] = m
            sa[t] = a
            sb[t] = b
            m, a, b = _push_beta(m, a, b, dec, -mo[c, t], ga[t], gb[t])
        m, a, b = -np.inf, 0.0, 0.0
        dus = 0.0
        for i in range(T):
            ki = k[c, i]
            e1 = math.exp(ki + m)
            e2 = math.exp(ki + sm[i])
            e3 = math.exp(u[c] + ki - mo[c, i])
            sum_a = e1 * a + e2 * sa[i] + e3 * ga[i]
            sum_b = e1 * b + e2 * sb[i] + e3 * gb[i]
            dv[c, i] = sum_a
            dk[c, i] = v[c, i] * sum_a - sum_b
            dus += e3 * ga[i] * (v[c, i] - y[c, i])
            m, a, b = _push_beta(m, a, b, dec, -mo[c, i], ga[i], gb[i])
        du[c] = dus

        # dw: sum_t alpha_t * sum_{i != t} -(|t-i|-1)/T e_ti (v_i - y_t)
        acc = 0.0
        m, a, b, qa, qb = -np.inf, 0.0, 0.0, 0.0, 0.0
        for t in range(T):
            acc += ga[t] * math.exp(m - mo[c, t]) * (qa - y[c, t] * qb)
            m, a, b, qa, qb = _push_q(m, a, b, qa, qb, dec, k[c, t], v[c, t])
        m, a, b, qa, qb = -np.inf, 0.0, 0.0, 0.0, 0.0
        for t in range(T - 1, -1, -1):
            acc += ga[t] * math.exp(m - mo[c, t]) * (qa - y[c, t] * qb)
            m, a, b, qa, qb = _push_q(m, a, b, qa, qb, dec, k[c, t], v[c, t])
        dw[c] = -acc / T


@numba.njit(cache=True)
def _push_beta(m, a, b, dec, xt, at, bt):
    md = m - dec
    mn = md if md > xt else xt
    e1 = math.exp(md - mn)
    e2 = math.exp(xt - mn)
    return mn, e1 * a + e2 * at, e1 * b + e2 * bt


# ---------------------------------------------------------------- wrappers

def _channels_first(*arrays):
    return [np.ascontiguousarray(np.asarray(x, dtype=np.float64).T) for x in arrays]


def _vec(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def _out_dtype(seq: WkvSequence):
    return np.result_type(seq.k.dtype, seq.v.dtype)


def bi_wkv_naive(seq: WkvSequence, p: WkvParams) -> np.ndarray:
    """Quadratic reference evaluation; the correctness oracle for the scan."""
    k, v = _channels_first(seq.k, seq.v)
    y = np.empty_like(k)
    _naive_kernel(_vec(p.w), _vec(p.u), k, v, y)
    return check_finite(y.T.astype(_out_dtype(seq)), "bi_wkv_naive")


def _scan_states(k, v, w, u):
    """Channel-first forward pass; returns ``(y, M, B)`` as ``[C, T]`` arrays."""
    y = np.empty_like(k)
    mo = np.empty_like(k)
    bo = np.empty_like(k)
    _scan_kernel(w, u, k, v, y, mo, bo)
    return y, mo, bo


def bi_wkv_scan(seq: WkvSequence, p: WkvParams) -> np.ndarray:
    """Linear-time Bi-WKV, numerically equal to :func:`bi_wkv_naive`."""
    k, v = _channels_first(seq.k, seq.v)
    y, _, _ = _scan_states(k, v, _vec(p.w), _vec(p.u))
    return check_finite(y.T.astype(_out_dtype(seq)), "bi_wkv_scan")


def bi_wkv_backward(seq: WkvSequence, p: WkvParams, grad_out: np.ndarray, saved=None):
    """Exact adjoint of the Bi-WKV map.

    Returns ``(dk, dv, dw, du)``.  ``saved`` may carry the forward
    ``(y, M, B)`` channel-first arrays; otherwise they are recomputed.
    """
    if grad_out.shape != seq.k.shape:
        raise ValueError(f"grad_out shape {grad_out.shape} != {seq.k.shape}")
    k, v, g = _channels_first(seq.k, seq.v, grad_out)
    w, u = _vec(p.w), _vec(p.u)
    y, mo, bo = saved if saved is not None else _scan_states(k, v, w, u)
    dk = np.empty_like(k)
    dv = np.empty_like(k)
    dw = np.empty_like(w)
    du = np.empty_like(u)
    _scan_backward_kernel(w, u, k, v, g, y, mo, bo, dk, dv, dw, du)
    for name, arr in (("dk", dk), ("dv", dv), ("dw", dw), ("du", du)):
        check_finite(arr, f"bi_wkv_backward {name}")
    dt = _out_dtype(seq)
    return dk.T.astype(dt), dv.T.astype(dt), dw.astype(np.asarray(p.w).dtype), du.astype(np.asarray(p.u).dtype)


# -------------------------------------------------------- autodiff binding

def _bi_wkv_forward(k, v, w, u):
    kc, vc = _channels_first(k, v)
    y, mo, bo = _scan_states(kc, vc, _vec(w), _vec(u))
    saved = (y, mo, bo) if k.shape[0] <= SAVE_STATES_MAX_T else None
    out = check_finite(y.T.astype(np.result_type(k, v)), "bi_wkv")
    return out, (k, v, w, u, saved)


def _bi_wkv_vjp(ctx, g):
    k, v, w, u, saved = ctx
    return bi_wkv_backward(WkvSequence(k, v), WkvParams(w, u), g, saved)


ad.defop("bi_wkv", _bi_wkv_forward)
ad.register_custom_gradient("bi_wkv", _bi_wkv_vjp)


def bi_wkv(seq: WkvSequence, p: WkvParams):
    """Differentiable Bi-WKV; fields may be arrays or tape variables."""
    return ad.apply("bi_wkv", seq.k, seq.v, p.w, p.u)


def _perm_of(plan) -> np.ndarray:
    return np.asarray(plan.permutation() if hasattr(plan, "permutation") else plan)


def re_wkv(seq: WkvSequence, p: WkvParams, q: int, plans: Sequence):
    """Apply Bi-WKV ``q`` times, feeding each result back as the values.

    Iteration ``j`` reorders tokens by ``plans[j % len(plans)]`` (a ScanPlan
    or an index array), runs Bi-WKV with the keys fixed, then restores the
    original order.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if not plans:
        raise ValueError("need at least one scan plan")
    cur = seq.v
    for j in range(q):
        perm = _perm_of(plans[j % len(plans)])
        if len(perm) != seq.T:
            raise ValueError(f"plan covers {len(perm)} tokens, sequence has {seq.T}")
        inv = np.argsort(perm)
        kk = ad.take(seq.k, perm, axis=0)
        vv = ad.take(cur, perm, axis=0)
        out = bi_wkv(WkvSequence(kk, vv), p)
        cur = ad.take(out, inv, axis=0)
    return cur


def random_instance(rng: np.random.Generator, T: int, C: int, scale: float = 1.0, dtype=np.float64):
    """Random ``(WkvSequence, WkvParams)`` with bounded keys and positive decay."""
    k = as_tensor(rng.uniform(-2, 2, (T, C)) * scale, dtype)
    v = as_tensor(rng.normal(size=(T, C)), dtype)
    w = rng.uniform(0, 3, C)
    u = rng.uniform(-1, 1, C)
    return WkvSequence(k, v), WkvParams(w, u)
