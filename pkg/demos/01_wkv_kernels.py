"""Bidirectional WKV: the quadratic reference against the linear-time scan.

Run: python3 demos/01_wkv_kernels.py
"""
import time

import numpy as np

from strwkv.wkv import WkvSequence, bi_wkv_naive, bi_wkv_scan, random_instance, re_wkv

rng = np.random.default_rng(0)

# Every output token is a positive-weighted average of the value tokens, so it
# always stays inside the per-channel range of v.
seq, params = random_instance(rng, T=64, C=4)
y = bi_wkv_scan(seq, params)
print("output range", y.min(0).round(3), "..", y.max(0).round(3))
print("value range ", seq.v.min(0).round(3), "..", seq.v.max(0).round(3))

# The scan reproduces the double loop to rounding error.
err = np.max(np.abs(y - bi_wkv_naive(seq, params))) / np.max(np.abs(y))
print(f"scan vs naive relative error: {err:.2e}")

# Keys far outside the range where exp() is representable are still fine,
# because both scans track a running maximum exponent.
big, _ = random_instance(rng, T=64, C=4, scale=300.0)
print("finite with |k| up to 600:", bool(np.all(np.isfinite(bi_wkv_scan(big, params)))))

# Cost: the naive form grows with T^2, the scan with T.
for T in (512, 1024, 2048):
    s, p = random_instance(rng, T, 4)
    bi_wkv_scan(s, p), bi_wkv_naive(s, p)  # compile / warm caches
    t0 = time.perf_counter(); bi_wkv_scan(s, p); t_scan = time.perf_counter() - t0
    t0 = time.perf_counter(); bi_wkv_naive(s, p); t_naive = time.perf_counter() - t0
    print(f"T={T:5d}  scan {t_scan * 1e3:7.2f} ms   naive {t_naive * 1e3:8.2f} ms")

# Recurrent application: values are replaced by the previous output, keys stay.
two = re_wkv(seq, params, q=2, plans=[np.arange(64), np.arange(64)[::-1]])
manual = bi_wkv_scan(WkvSequence(seq.k, bi_wkv_scan(seq, params)), params)
print("q=2 with a reversed second pass equals forward composition:", np.allclose(two, manual, atol=1e-12))
