import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strwkv import autodiff as ad
from strwkv.scan import ScanPlan
from strwkv.wkv import (SAVE_STATES_MAX_T, WkvParams, WkvSequence, bi_wkv, bi_wkv_backward, bi_wkv_naive,
                        bi_wkv_scan, random_instance, re_wkv)


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def tape_naive(k, v, w, u):
    """The O(T^2) weighted average written with primitive tape ops."""
    T, C = k.shape
    t = np.arange(T)
    dist = np.abs(t[:, None] - t[None, :]).astype(float)
    eye = np.eye(T)
    decay = (-(dist - 1) / T * (1 - eye))[:, :, None]
    logits = ad.add(ad.add(ad.mul(decay, w), ad.mul(eye[:, :, None], u)), ad.reshape(k, (1, T, C)))
    e = ad.exp(logits)
    num = ad.sum(ad.mul(e, ad.reshape(v, (1, T, C))), axis=1)
    return ad.div(num, ad.sum(e, axis=1))


def test_hand_examples():
    seq = WkvSequence(np.zeros((2, 1)), np.array([[1.0], [3.0]]))
    p = WkvParams(np.zeros(1), np.zeros(1))
    assert np.allclose(bi_wkv_naive(seq, p), [[2.0], [2.0]], rtol=0, atol=1e-15)
    assert np.allclose(bi_wkv_scan(seq, p), [[2.0], [2.0]], rtol=0, atol=1e-15)
    one = WkvSequence(np.array([[5.0, -3.0]]), np.array([[0.25, -7.0]]))
    q = WkvParams(np.array([2.0, 0.1]), np.array([0.3, -4.0]))
    assert np.array_equal(bi_wkv_naive(one, q), one.v)
    assert np.array_equal(bi_wkv_scan(one, q), one.v)


def test_naive_equals_direct_formula(rng):
    seq, p = random_instance(rng, 7, 3)
    T = 7
    y = np.zeros((T, 3))
    for c in range(3):
        for t in range(T):
            num = den = 0.0
            for i in range(T):
                e = np.exp(p.u[c] + seq.k[i, c]) if i == t else np.exp(-(abs(t - i) - 1) / T * p.w[c] + seq.k[i, c])
                num += e * seq.v[i, c]
                den += e
            y[t, c] = num / den
    assert rel(bi_wkv_naive(seq, p), y) <= 1e-12


def test_scan_matches_naive_many(rng):
    for _ in range(50):
        T, C = int(rng.integers(1, 257)), int(rng.integers(1, 17))
        seq, p = random_instance(rng, T, C)
        assert rel(bi_wkv_scan(seq, p), bi_wkv_naive(seq, p)) <= 1e-10


def test_extreme_keys_are_stable(rng):
    seq, p = random_instance(rng, 64, 4, scale=200.0)
    assert rel(bi_wkv_scan(seq, p), bi_wkv_naive(seq, p)) <= 1e-10
    s32, p32 = random_instance(rng, 64, 4, scale=100.0, dtype=np.float32)
    y = bi_wkv_scan(s32, p32)
    assert y.dtype == np.float32 and np.all(np.isfinite(y))


def test_convexity_and_key_shift(rng):
    seq, p = random_instance(rng, 64, 8)
    y = bi_wkv_naive(seq, p)
    assert np.all(y >= seq.v.min(0) - 1e-12) and np.all(y <= seq.v.max(0) + 1e-12)
    shifted = WkvSequence(seq.k + rng.normal(size=8), seq.v)
    assert np.max(np.abs(bi_wkv_scan(shifted, p) - bi_wkv_scan(seq, p))) <= 1e-6


def test_backward_matches_tape_through_naive(rng):
    for _ in range(20):
        T, C = int(rng.integers(1, 10)), int(rng.integers(1, 4))
        seq, p = random_instance(rng, T, C)
        g = rng.normal(size=(T, C))
        tape = ad.Tape()
        vs = [tape.var(a) for a in (seq.k, seq.v, p.w, p.u)]
        oracle = tape.grad(ad.sum(ad.mul(tape_naive(*vs), g)), vs)
        ours = bi_wkv_backward(seq, p, g)
        for a, b in zip(ours, oracle):
            assert np.max(np.abs(a - b)) <= 1e-5 * max(np.max(np.abs(b)), 1e-12) + 1e-14


def test_backward_single_token(rng):
    seq, p = random_instance(rng, 1, 3)
    g = rng.normal(size=(1, 3))
    dk, dv, dw, du = bi_wkv_backward(seq, p, g)
    assert np.allclose(dv, g, rtol=1e-14, atol=0)
    assert np.allclose(dk, 0, atol=1e-15) and np.allclose(dw, 0, atol=1e-15) and np.allclose(du, 0, atol=1e-15)


def test_saved_and_recomputed_backward_agree(rng, monkeypatch):
    import strwkv.wkv as wkv_mod
    seq, p = random_instance(rng, 40, 3)
    g = rng.normal(size=(40, 3))

    def grads():
        tape = ad.Tape()
        vs = [tape.var(a) for a in (seq.k, seq.v, p.w, p.u)]
        return tape.grad(ad.sum(ad.mul(bi_wkv(WkvSequence(vs[0], vs[1]), WkvParams(vs[2], vs[3])), g)), vs)

    saved = grads()
    monkeypatch.setattr(wkv_mod, "SAVE_STATES_MAX_T", 0)
    recomputed = grads()
    assert SAVE_STATES_MAX_T == 4096
    for a, b in zip(saved, recomputed):
        assert np.array_equal(a, b)


def test_re_wkv(rng):
    seq, p = random_instance(rng, 16, 3)
    ident = ScanPlan("identity", 4, 4)
    assert np.array_equal(re_wkv(seq, p, 1, [ident]), bi_wkv_scan(seq, p))
    one, p1 = random_instance(rng, 1, 2)
    assert np.array_equal(re_wkv(one, p1, 3, [np.arange(1)]), one.v)
    perms = [ScanPlan("skip", 4, 4, 2).permutation(), rng.permutation(16)]
    y1 = np.empty_like(seq.v)
    y1[perms[0]] = bi_wkv_naive(WkvSequence(seq.k[perms[0]], seq.v[perms[0]]), p)
    y2 = np.empty_like(seq.v)
    y2[perms[1]] = bi_wkv_naive(WkvSequence(seq.k[perms[1]], y1[perms[1]]), p)
    assert rel(re_wkv(seq, p, 2, perms), y2) <= 1e-10
    with pytest.raises(ValueError):
        re_wkv(seq, p, 0, perms)
    with pytest.raises(ValueError):
        re_wkv(seq, p, 1, [])


def test_params_validation():
    with pytest.raises(ValueError):
        WkvParams(np.array([-0.1]), np.zeros(1))
    p = WkvParams.from_raw(np.array([-30.0, 0.0, 30.0]), np.zeros(3))
    assert np.all(p.w >= 0) and p.w[1] == pytest.approx(np.log(2))
    with pytest.raises(ValueError):
        WkvSequence(np.zeros((3, 2)), np.zeros((3, 1)))


@settings(max_examples=40, deadline=None)
@given(T=st.integers(1, 64), C=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_convexity_property(T, C, seed):
    seq, p = random_instance(np.random.default_rng(seed), T, C)
    y = bi_wkv_scan(seq, p)
    span = seq.v.max(0) - seq.v.min(0)
    assert np.all(y >= seq.v.min(0) - 1e-12 * (1 + span))
    assert np.all(y <= seq.v.max(0) + 1e-12 * (1 + span))
