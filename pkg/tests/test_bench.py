import numpy as np
import pytest

from strwkv import bench
from strwkv.wkv import random_instance, re_wkv


def test_count_flops_scaling():
    for T in (1, 7, 1024):
        assert bench.count_flops("bi_wkv_scan", 2 * T, 8) == 2 * bench.count_flops("bi_wkv_scan", T, 8)
        assert bench.count_flops("bi_wkv_naive", 2 * T, 8) == 4 * bench.count_flops("bi_wkv_naive", T, 8)
    assert bench.count_flops("bi_wkv_scan", 10, 3) == bench.SCAN_ALPHA * 30
    assert bench.count_flops("bi_wkv_naive", 10, 3) == bench.NAIVE_BETA * 300
    assert bench.count_flops("re_wkv", 64, 4, q=3) == 3 * bench.count_flops("bi_wkv_scan", 64, 4)
    with pytest.raises(ValueError):
        bench.count_flops("mystery", 4, 4)
    with pytest.raises(ValueError):
        bench.count_flops("bi_wkv_scan", 0, 4)


def test_re_wkv_counter_is_q_times_bi_wkv(rng):
    seq, p = random_instance(rng, 32, 4)
    plans = [np.arange(32), rng.permutation(32)]
    for q in (1, 2, 3):
        with bench.counting_flops() as cnt:
            re_wkv(seq, p, q, plans)
        assert cnt.total == bench.count_flops("re_wkv", 32, 4, q)
        assert cnt.by_kind["take"] == 0
    assert not bench.ad.OP_HOOKS


def test_quadratic_reference_matches_softmax(rng):
    q, k, v = rng.normal(size=(3, 50, 4))
    s = q @ k.T / 2.0
    a = np.exp(s - s.max(1, keepdims=True))
    expected = (a / a.sum(1, keepdims=True)) @ v
    assert np.allclose(bench.quadratic_attention_reference(q, k, v, block=16), expected, rtol=1e-12, atol=1e-12)


def test_sweep_csv_roundtrip(tmp_path):
    out = tmp_path / "b.csv"
    recs = bench.sweep(list(bench.KERNELS), [16, 32], C=2, q=2, out=out, repeats=5)
    assert len(recs) == 2 * len(bench.KERNELS)
    header = out.read_text().splitlines()[0].split(",")
    assert tuple(header) == bench.CSV_COLUMNS
    back = bench.read_csv(out)
    assert back == recs
    assert all(r.wall_ns > 0 and r.peak_bytes >= 0 for r in back)
    with pytest.raises(ValueError):
        bench.sweep(["bi_wkv_scan"], [32, 16], C=2)


def test_fit_helpers():
    assert bench.linear_fit_r2([1, 2, 3, 4], [3, 5, 7, 9]) == pytest.approx(1.0)
    assert bench.linear_fit_r2([1, 2, 3, 4], [1, 4, 9, 16]) < 1.0
    recs = [bench.BenchRecord("k", T, 1, T * T, 0, 0) for T in (8, 16, 32, 48)]
    assert bench.doubling_ratios(recs) == [4.0, 4.0]
    with pytest.raises(ValueError):
        bench.BenchRecord("k", 0, 1, 1, 0, 0)


def test_single_thread_restores_setting():
    before = bench.numba.get_num_threads()
    with bench.single_thread():
        assert bench.numba.get_num_threads() == 1
    assert bench.numba.get_num_threads() == before
